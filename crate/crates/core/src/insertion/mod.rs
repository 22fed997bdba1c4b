//! Collision-free insertion of floor-standing objects.
//!
//! The scene floor is rasterized into an [`OccupancyGrid`], eroded by the
//! footprint of a candidate object, and a placement is drawn uniformly from
//! the surviving cells. The footprint is the circumscribed circle of the
//! candidate (points and box, at maximum scale jitter, plus margin), so any
//! yaw or flip drawn after erosion keeps the object clear of existing points.

mod grid;

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotate_z, wrap_angle, Vec3};
use crate::scene::{AxisBox, OrientedBox, Scene, SceneError, SceneObject};

pub use grid::{build_floor_map, erode_free, Footprint, OccupancyGrid};

/// Search limit for the insertion retry loop.
pub const DEFAULT_MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum InsertionError {
    #[error("no floor found: {inliers} points within the floor band, {required} required")]
    NoFloor { inliers: usize, required: usize },
    #[error("invalid insertion parameter: {0}")]
    InvalidParameter(String),
    #[error("object bank has no stander objects")]
    NoStanders,
    #[error("object bank is empty")]
    EmptyBank,
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InsertionConfig {
    /// Attempts before giving up (T).
    pub max_attempts: usize,
    /// Floor-map resolution, meters.
    pub cell_size: f64,
    /// Half-thickness of the slab considered floor, meters.
    pub floor_band: f64,
    pub min_floor_inliers: usize,
    /// Points below `floor + occupancy_min_height` never block placement.
    pub occupancy_min_height: f64,
    /// Points at or above `floor + occupancy_max_height` never block placement.
    pub occupancy_max_height: f64,
    /// Scale factor is drawn from `[1 - scale_jitter, 1 + scale_jitter]`.
    pub scale_jitter: f64,
    pub flip_probability: f64,
    /// Clearance kept around the inserted object, meters.
    pub margin: f64,
}

impl Default for InsertionConfig {
    fn default() -> Self {
        Self {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            cell_size: 0.02,
            floor_band: 0.02,
            min_floor_inliers: 100,
            occupancy_min_height: 0.05,
            occupancy_max_height: 2.0,
            scale_jitter: 0.05,
            flip_probability: 0.5,
            margin: 0.02,
        }
    }
}

impl InsertionConfig {
    pub fn validate(&self) -> Result<(), InsertionError> {
        let bad = |what: &str| Err(InsertionError::InvalidParameter(what.to_string()));
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1");
        }
        if !(self.cell_size > 0.0) {
            return bad("cell_size must be positive");
        }
        if !(self.floor_band > 0.0) {
            return bad("floor_band must be positive");
        }
        if !(self.occupancy_min_height >= 0.0 && self.occupancy_max_height > self.occupancy_min_height) {
            return bad("occupancy band must satisfy 0 <= min < max");
        }
        if !(0.0..1.0).contains(&self.scale_jitter) {
            return bad("scale_jitter must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip_probability must lie in [0, 1]");
        }
        if !(self.margin >= 0.0) {
            return bad("margin must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorPlane {
    pub z: f64,
    pub inlier_count: usize,
}

/// Lowest dense horizontal slab of the scene.
///
/// The robust minimum is the 1st-percentile height (rejecting stray low
/// points); the floor height is the median of the points within
/// `floor_band` of it.
pub fn detect_floor(scene: &Scene, cfg: &InsertionConfig) -> Result<FloorPlane, InsertionError> {
    let mut zs: Vec<f64> = scene.cloud().positions().iter().map(|p| p[2] as f64).collect();
    let required = cfg.min_floor_inliers;
    if zs.len() < required {
        return Err(InsertionError::NoFloor { inliers: zs.len(), required });
    }
    zs.sort_by(f64::total_cmp);
    let robust_min = zs[(0.01 * (zs.len() - 1) as f64).floor() as usize];
    let slab: Vec<f64> = zs
        .iter()
        .copied()
        .filter(|z| (z - robust_min).abs() <= cfg.floor_band)
        .collect();
    if slab.len() < required {
        return Err(InsertionError::NoFloor { inliers: slab.len(), required });
    }
    let mid = slab.len() / 2;
    let z = if slab.len() % 2 == 1 { slab[mid] } else { 0.5 * (slab[mid - 1] + slab[mid]) };
    let inlier_count = zs.iter().filter(|v| (*v - z).abs() <= cfg.floor_band).count();
    if inlier_count < required {
        return Err(InsertionError::NoFloor { inliers: inlier_count, required });
    }
    Ok(FloorPlane { z, inlier_count })
}

/// An object extracted from a source scene, with points relative to its
/// pivot: the box center in `x, y` and the lowest point in `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct BankObject {
    pub source_scene: String,
    pub source_object: u32,
    pub label: String,
    pub is_stander: bool,
    /// Box with center expressed relative to the pivot.
    pub local_box: OrientedBox,
    pub local_points: Vec<Vec3>,
    pub colors: Vec<[u8; 3]>,
}

impl BankObject {
    pub fn from_scene(scene: &Scene, object: &SceneObject) -> Self {
        let pts: Vec<Vec3> = scene.object_points(object).collect();
        let base_z = if pts.is_empty() {
            object.bbox.center[2] - 0.5 * object.bbox.size[2]
        } else {
            pts.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min)
        };
        let pivot = [object.bbox.center[0], object.bbox.center[1], base_z];
        let rel = |p: Vec3| [p[0] - pivot[0], p[1] - pivot[1], p[2] - pivot[2]];
        Self {
            source_scene: scene.id.clone(),
            source_object: object.id,
            label: object.label.clone(),
            is_stander: object.is_stander,
            local_box: OrientedBox {
                center: rel(object.bbox.center),
                ..object.bbox
            },
            local_points: pts.into_iter().map(rel).collect(),
            colors: object.point_indices.iter().map(|&i| scene.cloud().colors()[i as usize]).collect(),
        }
    }

    /// Collects every stander of every scene.
    pub fn standers_of<'a>(scenes: impl IntoIterator<Item = &'a Scene>) -> Vec<BankObject> {
        scenes
            .into_iter()
            .flat_map(|s| s.objects().iter().filter(|o| o.is_stander).map(move |o| BankObject::from_scene(s, o)))
            .collect()
    }

    /// Largest horizontal distance from the pivot to any point or box corner.
    pub fn horizontal_radius(&self) -> f64 {
        let b = &self.local_box;
        let (hx, hy) = (0.5 * b.size[0], 0.5 * b.size[1]);
        let box_r = (b.center[0].hypot(b.center[1])) + hx.hypot(hy);
        self.local_points
            .iter()
            .map(|p| p[0].hypot(p[1]))
            .fold(box_r, f64::max)
    }
}

/// Erosion kernel that stays collision-free under any yaw, flip and scale
/// drawn by [`sample_placement`].
pub fn rotation_safe_footprint(obj: &BankObject, cfg: &InsertionConfig) -> Footprint {
    let radius = obj.horizontal_radius() * (1.0 + cfg.scale_jitter) + cfg.margin * SQRT_2;
    let k = (radius / cfg.cell_size).ceil() as usize;
    Footprint { kx: k, ky: k }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementTransform {
    pub translation: Vec3,
    pub yaw: f64,
    pub flip_x: bool,
    pub scale_jitter: f64,
}

impl PlacementTransform {
    /// Maps a pivot-relative point: mirror x, scale, rotate about z, translate.
    pub fn apply(&self, p: Vec3) -> Vec3 {
        let x = if self.flip_x { -p[0] } else { p[0] };
        let (rx, ry) = rotate_z(x * self.scale_jitter, p[1] * self.scale_jitter, self.yaw);
        [
            rx + self.translation[0],
            ry + self.translation[1],
            p[2] * self.scale_jitter + self.translation[2],
        ]
    }

    pub fn apply_box(&self, b: &OrientedBox) -> OrientedBox {
        let local_yaw = if self.flip_x { PI - b.yaw } else { b.yaw };
        OrientedBox {
            center: self.apply(b.center),
            size: [b.size[0] * self.scale_jitter, b.size[1] * self.scale_jitter, b.size[2] * self.scale_jitter],
            yaw: wrap_angle(local_yaw + self.yaw),
        }
    }
}

/// Draws a placement on a free cell of an eroded floor map, or `None` when
/// no cell survived erosion.
pub fn sample_placement<R: Rng + ?Sized>(
    rng: &mut R,
    free: &OccupancyGrid,
    floor: &FloorPlane,
    cfg: &InsertionConfig,
) -> Option<PlacementTransform> {
    let n = free.free_count();
    if n == 0 {
        return None;
    }
    let pick = rng.gen_range(0..n);
    let (i, j) = free.free_cells().nth(pick).expect("pick < free count");
    let [x, y] = free.cell_center(i, j);
    let yaw = rng.gen_range(0.0..TAU);
    let flip_x = rng.gen_bool(cfg.flip_probability);
    let scale_jitter = rng.gen_range(1.0 - cfg.scale_jitter..=1.0 + cfg.scale_jitter);
    Some(PlacementTransform {
        translation: [x, y, floor.z],
        yaw,
        flip_x,
        scale_jitter,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsertionResult {
    pub augmented_scene: Scene,
    pub inserted: SceneObject,
    /// Axis-aligned bounds of the inserted points.
    pub location: AxisBox,
    pub attempts: usize,
    pub transform: PlacementTransform,
    pub floor: FloorPlane,
    pub source_scene: String,
    pub source_object: u32,
}

/// Reproducibility record written alongside each augmented scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionLog {
    pub scene_id: String,
    pub aug_id: String,
    pub source_scene: String,
    pub source_object: u32,
    pub label: String,
    pub transform: PlacementTransform,
    pub attempts: usize,
    pub seed: u64,
}

impl InsertionLog {
    pub fn new(result: &InsertionResult, aug_id: &str, seed: u64) -> Self {
        Self {
            scene_id: result.augmented_scene.id.clone(),
            aug_id: aug_id.to_string(),
            source_scene: result.source_scene.clone(),
            source_object: result.source_object,
            label: result.inserted.label.clone(),
            transform: result.transform,
            attempts: result.attempts,
            seed,
        }
    }
}

/// Outcome of the retry loop together with the number of attempts made.
#[derive(Debug, Clone)]
pub struct InsertionOutcome {
    pub result: Option<InsertionResult>,
    pub attempts: usize,
}

/// Inserts one randomly chosen stander from `bank`, retrying up to
/// `cfg.max_attempts` times. Returns `Ok(None)` when the limit is reached.
pub fn insert_object<R: Rng + ?Sized>(
    scene: &Scene,
    bank: &[BankObject],
    rng: &mut R,
    cfg: &InsertionConfig,
) -> Result<Option<InsertionResult>, InsertionError> {
    insert_object_traced(scene, bank, rng, cfg).map(|o| o.result)
}

pub fn insert_object_traced<R: Rng + ?Sized>(
    scene: &Scene,
    bank: &[BankObject],
    rng: &mut R,
    cfg: &InsertionConfig,
) -> Result<InsertionOutcome, InsertionError> {
    cfg.validate()?;
    if bank.is_empty() {
        return Err(InsertionError::EmptyBank);
    }
    let standers: Vec<&BankObject> = bank.iter().filter(|b| b.is_stander).collect();
    if standers.is_empty() {
        return Err(InsertionError::NoStanders);
    }
    let floor = detect_floor(scene, cfg)?;
    let floor_map = build_floor_map(scene, &floor, cfg.cell_size, cfg)?;
    let mut eroded: HashMap<Footprint, OccupancyGrid> = HashMap::new();

    for attempt in 1..=cfg.max_attempts {
        let candidate = standers[rng.gen_range(0..standers.len())];
        let footprint = rotation_safe_footprint(candidate, cfg);
        let free = eroded.entry(footprint).or_insert_with(|| erode_free(&floor_map, footprint));
        let Some(transform) = sample_placement(rng, free, &floor, cfg) else {
            continue;
        };
        let result = place(scene, candidate, transform, floor, attempt)?;
        return Ok(InsertionOutcome {
            result: Some(result),
            attempts: attempt,
        });
    }
    Ok(InsertionOutcome {
        result: None,
        attempts: cfg.max_attempts,
    })
}

fn place(
    scene: &Scene,
    obj: &BankObject,
    transform: PlacementTransform,
    floor: FloorPlane,
    attempts: usize,
) -> Result<InsertionResult, InsertionError> {
    let positions: Vec<[f32; 3]> = obj
        .local_points
        .iter()
        .map(|&p| {
            let q = transform.apply(p);
            [q[0] as f32, q[1] as f32, q[2] as f32]
        })
        .collect();
    let inserted = SceneObject {
        id: scene.next_object_id(),
        label: obj.label.clone(),
        bbox: transform.apply_box(&obj.local_box),
        point_indices: Vec::new(),
        is_stander: true,
    };
    let location = points_aabb(&positions).unwrap_or_else(|| inserted.bbox.to_axis_box());
    let augmented_scene = scene.with_object(&positions, &obj.colors, inserted)?;
    let inserted = augmented_scene.objects().last().cloned().expect("object was just appended");
    Ok(InsertionResult {
        augmented_scene,
        inserted,
        location,
        attempts,
        transform,
        floor,
        source_scene: obj.source_scene.clone(),
        source_object: obj.source_object,
    })
}

fn points_aabb(points: &[[f32; 3]]) -> Option<AxisBox> {
    if points.is_empty() {
        return None;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k] as f64);
            hi[k] = hi[k].max(p[k] as f64);
        }
    }
    Some(AxisBox::from_min_max(lo, hi))
}

/// Exact check: no existing object point inside the occupancy band lies in
/// `placed` grown by the configured margin.
pub fn brute_force_clearance(scene: &Scene, placed: &OrientedBox, floor: &FloorPlane, cfg: &InsertionConfig) -> bool {
    scene.objects().iter().all(|obj| {
        scene
            .object_points(obj)
            .filter(|p| grid::in_occupancy_band(p[2], floor, cfg))
            .all(|p| !placed.contains(p, cfg.margin))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synth::{presets, synthesize_test_scene, ObjectSpec, RoomSpec};
    use crate::scene::PointCloud;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn room(objects: Vec<ObjectSpec>) -> Scene {
        let spec = RoomSpec {
            id: "room".into(),
            width: 4.0,
            depth: 4.0,
            height: 2.5,
            density: 100.0,
            walls: false,
            objects,
        };
        synthesize_test_scene(&spec, 9).unwrap()
    }

    fn chair_bank() -> Vec<BankObject> {
        let src = room(vec![ObjectSpec::new("chair", [1.0, 1.0], [0.5, 0.5, 0.9], 0.0, [9, 9, 9])]);
        BankObject::standers_of([&src])
    }

    #[test]
    fn floor_of_synthetic_slab() {
        let f = detect_floor(&room(vec![]), &InsertionConfig::default()).unwrap();
        assert!((f.z - 0.005).abs() <= 0.01, "{f:?}");
        assert!(f.inlier_count >= 1600);
    }

    #[test]
    fn flat_cloud_floor_is_that_plane() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 1.0]; 200], vec![[0; 3]; 200]).unwrap();
        let s = Scene::new("flat", cloud, vec![]).unwrap();
        let f = detect_floor(&s, &InsertionConfig::default()).unwrap();
        assert_eq!(f.z, 1.0);
        assert_eq!(f.inlier_count, 200);
    }

    #[test]
    fn too_few_points_is_no_floor() {
        let cloud = PointCloud::new(vec![[0.0; 3]; 10], vec![[0; 3]; 10]).unwrap();
        let s = Scene::new("tiny", cloud, vec![]).unwrap();
        assert!(matches!(
            detect_floor(&s, &InsertionConfig::default()),
            Err(InsertionError::NoFloor { .. })
        ));
    }

    #[test]
    fn floor_map_of_empty_and_boxed_rooms() {
        let cfg = InsertionConfig::default();
        let empty = room(vec![]);
        let floor = detect_floor(&empty, &cfg).unwrap();
        let g = build_floor_map(&empty, &floor, 0.02, &cfg).unwrap();
        assert_eq!((g.width, g.height), (200, 200));
        assert_eq!(g.free_count(), 200 * 200);
        assert!(build_floor_map(&empty, &floor, 0.0, &cfg).is_err());

        let boxed = room(vec![ObjectSpec::new("table", [2.0, 2.0], [1.0, 1.0, 1.0], 0.0, [0; 3])]);
        let floor = detect_floor(&boxed, &cfg).unwrap();
        let g = build_floor_map(&boxed, &floor, 0.02, &cfg).unwrap();
        let occupied: Vec<(usize, usize)> =
            (0..g.height).flat_map(|j| (0..g.width).map(move |i| (i, j))).filter(|&(i, j)| !g.is_free(i, j)).collect();
        let span = |f: fn(&(usize, usize)) -> usize| {
            let v: Vec<usize> = occupied.iter().map(f).collect();
            v.iter().max().unwrap() - v.iter().min().unwrap() + 1
        };
        // 1 m / 2 cm = 50 cells, one extra from boundary quantization
        assert!((50..=51).contains(&span(|c| c.0)), "{}", span(|c| c.0));
        assert!((50..=51).contains(&span(|c| c.1)));
    }

    #[test]
    fn single_free_cell_fixes_translation() {
        let mut g = OccupancyGrid::new([1.0, 2.0], 0.5, 4, 4, false);
        g.set(2, 1, true);
        let floor = FloorPlane { z: 0.25, inlier_count: 1000 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_placement(&mut rng, &g, &floor, &InsertionConfig::default()).unwrap();
        assert_eq!([t.translation[0], t.translation[1]], [2.25, 2.75]);
        assert_eq!(t.translation[2], 0.25);
        assert!((0.95..=1.05).contains(&t.scale_jitter));
        assert!((0.0..TAU).contains(&t.yaw));

        g.set(2, 1, false);
        assert!(sample_placement(&mut rng, &g, &floor, &InsertionConfig::default()).is_none());
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = OccupancyGrid::new([0.0; 2], 0.1, 20, 20, true);
        let floor = FloorPlane { z: 0.0, inlier_count: 1 };
        let cfg = InsertionConfig::default();
        let a = sample_placement(&mut ChaCha8Rng::seed_from_u64(4), &g, &floor, &cfg);
        let b = sample_placement(&mut ChaCha8Rng::seed_from_u64(4), &g, &floor, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn chair_into_empty_room_first_try() {
        let scene = room(vec![]);
        let cfg = InsertionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let res = insert_object(&scene, &chair_bank(), &mut rng, &cfg).unwrap().unwrap();
        assert_eq!(res.attempts, 1);
        assert!(brute_force_clearance(&scene, &res.inserted.bbox, &res.floor, &cfg));
        let min_z = res
            .augmented_scene
            .object_points(&res.inserted)
            .map(|p| p[2])
            .fold(f64::INFINITY, f64::min);
        assert!((min_z - res.floor.z).abs() < 1e-6);
        assert_eq!(res.augmented_scene.objects().len(), 1);
    }

    #[test]
    fn crowded_room_exhausts_attempts() {
        // a single box covering the whole floor
        let scene = room(vec![ObjectSpec::new("bed", [2.0, 2.0], [4.0, 4.0, 0.5], 0.0, [0; 3])]);
        let cfg = InsertionConfig { max_attempts: 7, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = insert_object_traced(&scene, &chair_bank(), &mut rng, &cfg).unwrap();
        assert!(out.result.is_none());
        assert_eq!(out.attempts, 7);
    }

    #[test]
    fn bank_without_standers_is_config_error() {
        let src = room(vec![ObjectSpec::new("window", [2.0, 3.9], [1.0, 0.05, 1.0], 0.0, [0; 3]).mounted_at(1.0)]);
        let bank: Vec<BankObject> = src.objects().iter().map(|o| BankObject::from_scene(&src, o)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = InsertionConfig::default();
        assert!(matches!(insert_object(&src, &bank, &mut rng, &cfg), Err(InsertionError::NoStanders)));
        assert!(matches!(insert_object(&src, &[], &mut rng, &cfg), Err(InsertionError::EmptyBank)));
    }

    #[test]
    fn clearance_oracle_simple_cases() {
        let scene = room(vec![ObjectSpec::new("table", [1.0, 1.0], [1.0, 1.0, 0.8], 0.0, [0; 3])]);
        let cfg = InsertionConfig::default();
        let floor = detect_floor(&scene, &cfg).unwrap();
        let overlapping = OrientedBox { center: [1.3, 1.3, 0.4], size: [0.5, 0.5, 0.8], yaw: 0.7 };
        let open = OrientedBox { center: [3.0, 3.0, 0.4], size: [0.5, 0.5, 0.8], yaw: 0.7 };
        assert!(!brute_force_clearance(&scene, &overlapping, &floor, &cfg));
        assert!(brute_force_clearance(&scene, &open, &floor, &cfg));
    }

    #[test]
    fn flipped_box_yaw_matches_points() {
        let bank = chair_bank();
        let t = PlacementTransform { translation: [2.0, 2.0, 0.0], yaw: 0.4, flip_x: true, scale_jitter: 1.02 };
        let b = t.apply_box(&bank[0].local_box);
        for p in &bank[0].local_points {
            assert!(b.contains(t.apply(*p), 1e-6));
        }
    }

    #[test]
    fn insertion_is_deterministic() {
        let scene = synthesize_test_scene(&presets::mini_scene(), presets::MINI_SCENE_SEED).unwrap();
        let bank = BankObject::standers_of([&scene]);
        let cfg = InsertionConfig::default();
        let a = insert_object(&scene, &bank, &mut ChaCha8Rng::seed_from_u64(8), &cfg).unwrap();
        let b = insert_object(&scene, &bank, &mut ChaCha8Rng::seed_from_u64(8), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
