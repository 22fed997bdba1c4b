//! Scene representation: colored point clouds with annotated objects.

mod annotations;
mod categories;
pub mod ply;
pub mod synth;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Vec3};

pub use annotations::{read_annotations, write_annotations, AnnotationHeader, ObjectRecord, SCHEMA_VERSION};
pub use categories::CategoryTable;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("ply parse error at byte {offset}{}: {message}", field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    Ply {
        offset: usize,
        field: Option<String>,
        message: String,
    },
    #[error("annotation error on line {line}, field `{field}`: {message}")]
    Annotation {
        line: usize,
        field: String,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("scene spec error: {0}")]
    Spec(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SceneError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SceneError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = SceneError> = std::result::Result<T, E>;

/// Points with per-point RGB color. Positions are stored at the precision of
/// the on-disk profile so that save/load is lossless.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f32; 3]>,
    colors: Vec<[u8; 3]>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f32; 3]>, colors: Vec<[u8; 3]>) -> Result<Self> {
        if positions.len() != colors.len() {
            return Err(SceneError::Validation(format!(
                "{} positions but {} colors",
                positions.len(),
                colors.len()
            )));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(SceneError::Validation(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { positions, colors })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.positions
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn position(&self, i: usize) -> Vec3 {
        geometry::to_f64(self.positions[i])
    }

    /// Appends points; returns the index of the first appended point.
    pub fn extend(&mut self, positions: &[[f32; 3]], colors: &[[u8; 3]]) -> Result<usize> {
        let other = PointCloud::new(positions.to_vec(), colors.to_vec())?;
        let start = self.positions.len();
        self.positions.extend(other.positions);
        self.colors.extend(other.colors);
        Ok(start)
    }

    pub fn aabb(&self) -> Option<AxisBox> {
        if self.is_empty() {
            return None;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k] as f64);
                hi[k] = hi[k].max(p[k] as f64);
            }
        }
        Some(AxisBox::from_min_max(lo, hi))
    }
}

/// Axis-aligned box given by center and full extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub center: Vec3,
    pub size: Vec3,
}

impl AxisBox {
    pub fn new(center: Vec3, size: Vec3) -> Self {
        Self { center, size }
    }

    pub fn from_min_max(lo: Vec3, hi: Vec3) -> Self {
        Self {
            center: [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])],
            size: [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]],
        }
    }

    pub fn min(&self) -> Vec3 {
        [
            self.center[0] - 0.5 * self.size[0],
            self.center[1] - 0.5 * self.size[1],
            self.center[2] - 0.5 * self.size[2],
        ]
    }

    pub fn max(&self) -> Vec3 {
        [
            self.center[0] + 0.5 * self.size[0],
            self.center[1] + 0.5 * self.size[1],
            self.center[2] + 0.5 * self.size[2],
        ]
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().map(|s| s.max(0.0)).product()
    }

    /// Radius of the sphere through the box corners.
    pub fn bounding_radius(&self) -> f64 {
        0.5 * geometry::norm(self.size)
    }
}

/// Box rotated about +Z by `yaw` around its center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec3,
    pub size: Vec3,
    pub yaw: f64,
}

impl OrientedBox {
    /// True if `p` lies inside the box grown by `margin` on every side.
    pub fn contains(&self, p: Vec3, margin: f64) -> bool {
        let d = geometry::sub(p, self.center);
        let (lx, ly) = geometry::rotate_z(d[0], d[1], -self.yaw);
        lx.abs() <= 0.5 * self.size[0] + margin
            && ly.abs() <= 0.5 * self.size[1] + margin
            && d[2].abs() <= 0.5 * self.size[2] + margin
    }

    /// Tight axis-aligned bounds of the rotated box.
    pub fn to_axis_box(&self) -> AxisBox {
        let (s, c) = self.yaw.sin_cos();
        let hx = 0.5 * (self.size[0] * c.abs() + self.size[1] * s.abs());
        let hy = 0.5 * (self.size[0] * s.abs() + self.size[1] * c.abs());
        AxisBox::new(self.center, [2.0 * hx, 2.0 * hy, self.size[2]])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: u32,
    pub label: String,
    pub bbox: OrientedBox,
    pub point_indices: Vec<u32>,
    pub is_stander: bool,
}

impl SceneObject {
    pub fn center(&self) -> Vec3 {
        self.bbox.center
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    cloud: PointCloud,
    objects: Vec<SceneObject>,
}

impl Scene {
    pub fn new(id: impl Into<String>, cloud: PointCloud, objects: Vec<SceneObject>) -> Result<Self> {
        if cloud.is_empty() {
            return Err(SceneError::Validation("scene has no points".into()));
        }
        let n = cloud.len();
        for obj in &objects {
            if let Some(&bad) = obj.point_indices.iter().find(|&&i| i as usize >= n) {
                return Err(SceneError::Validation(format!(
                    "object {} ({}) references point {bad} but the cloud has {n} points",
                    obj.id, obj.label
                )));
            }
            if obj.bbox.size.iter().any(|s| *s < 0.0 || !s.is_finite()) {
                return Err(SceneError::Validation(format!("object {} has an invalid box size", obj.id)));
            }
        }
        Ok(Self {
            id: id.into(),
            cloud,
            objects,
        })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn aabb(&self) -> AxisBox {
        self.cloud.aabb().expect("scene clouds are non-empty")
    }

    /// Positions of the points owned by `obj`.
    pub fn object_points<'a>(&'a self, obj: &'a SceneObject) -> impl Iterator<Item = Vec3> + 'a {
        obj.point_indices.iter().map(|&i| self.cloud.position(i as usize))
    }

    /// Copies `positions`/`colors` into the scene as a new object.
    pub fn with_object(
        &self,
        positions: &[[f32; 3]],
        colors: &[[u8; 3]],
        mut object: SceneObject,
    ) -> Result<Scene> {
        let mut cloud = self.cloud.clone();
        let start = cloud.extend(positions, colors)? as u32;
        object.point_indices = (start..start + positions.len() as u32).collect();
        let mut objects = self.objects.clone();
        objects.push(object);
        Scene::new(self.id.clone(), cloud, objects)
    }

    pub fn next_object_id(&self) -> u32 {
        self.objects.iter().map(|o| o.id + 1).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenePaths {
    pub cloud: PathBuf,
    pub annotations: PathBuf,
}

impl ScenePaths {
    pub fn in_dir(dir: &Path, scene_id: &str) -> Self {
        Self {
            cloud: dir.join(format!("{scene_id}.ply")),
            annotations: dir.join(format!("{scene_id}.objects.jsonl")),
        }
    }
}

pub fn load_scene(cloud_path: &Path, annotation_path: &Path) -> Result<Scene> {
    let cloud = ply::read_ply(cloud_path)?;
    let (header, records) = read_annotations(annotation_path)?;
    if header.num_points != cloud.len() {
        return Err(SceneError::Validation(format!(
            "annotation header expects {} points, cloud has {}",
            header.num_points,
            cloud.len()
        )));
    }
    let objects = records.into_iter().map(ObjectRecord::into_object).collect();
    Scene::new(header.scene_id, cloud, objects)
}

/// Writes `<id>.ply` (binary little-endian) and `<id>.objects.jsonl`.
pub fn save_scene(scene: &Scene, out_dir: &Path) -> Result<ScenePaths> {
    std::fs::create_dir_all(out_dir).map_err(|e| SceneError::io(out_dir, e))?;
    let paths = ScenePaths::in_dir(out_dir, &scene.id);
    ply::write_ply(&paths.cloud, scene.cloud(), ply::PlyEncoding::BinaryLittleEndian)?;
    write_annotations(&paths.annotations, scene)?;
    Ok(paths)
}

/// Loads every `<id>.ply` + `<id>.objects.jsonl` pair in `dir`, sorted by id.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<Scene>> {
    let entries = std::fs::read_dir(dir).map_err(|e| SceneError::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| SceneError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".objects.jsonl") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    ids.iter()
        .map(|id| {
            let p = ScenePaths::in_dir(dir, id);
            load_scene(&p.cloud, &p.annotations)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cloud() -> PointCloud {
        PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]], vec![[1, 2, 3], [4, 5, 6]]).unwrap()
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(PointCloud::new(vec![[0.0; 3]], vec![]).is_err());
        assert!(PointCloud::new(vec![[f32::NAN, 0.0, 0.0]], vec![[0; 3]]).is_err());
    }

    #[test]
    fn out_of_range_index_rejected() {
        let obj = SceneObject {
            id: 0,
            label: "chair".into(),
            bbox: OrientedBox { center: [0.0; 3], size: [1.0; 3], yaw: 0.0 },
            point_indices: vec![0, 2],
            is_stander: true,
        };
        let err = Scene::new("s", tiny_cloud(), vec![obj]).unwrap_err();
        assert!(matches!(err, SceneError::Validation(_)));
    }

    #[test]
    fn oriented_box_contains_rotated_point() {
        let b = OrientedBox { center: [0.0; 3], size: [2.0, 0.2, 1.0], yaw: std::f64::consts::FRAC_PI_2 };
        assert!(b.contains([0.0, 0.9, 0.0], 0.0));
        assert!(!b.contains([0.9, 0.0, 0.0], 0.0));
        assert!(b.contains([0.11, 0.0, 0.0], 0.02));
        let aabb = b.to_axis_box();
        assert!((aabb.size[0] - 0.2).abs() < 1e-12 && (aabb.size[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn with_object_appends_points() {
        let scene = Scene::new("s", tiny_cloud(), vec![]).unwrap();
        let obj = SceneObject {
            id: scene.next_object_id(),
            label: "table".into(),
            bbox: OrientedBox { center: [0.0; 3], size: [1.0; 3], yaw: 0.0 },
            point_indices: vec![],
            is_stander: true,
        };
        let aug = scene.with_object(&[[5.0, 5.0, 5.0]], &[[9, 9, 9]], obj).unwrap();
        assert_eq!(aug.cloud().len(), 3);
        assert_eq!(aug.objects()[0].point_indices, vec![2]);
        assert_eq!(scene.cloud().len(), 2);
    }
}
