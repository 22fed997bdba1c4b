use serde::{Deserialize, Serialize};

use super::camera::{project_with, CameraPose, Intrinsics};
use super::RenderError;
use crate::geometry::Vec3;
use crate::scene::Scene;

pub const NO_OWNER: u32 = u32::MAX;

/// One rendered view. `depth` is `f64::INFINITY` where nothing was drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[u8; 3]>,
    pub depth: Vec<f64>,
    pub pose: CameraPose,
    pub intrinsics: Intrinsics,
    pub splat_radius: f64,
    pub target_id: u32,
}

/// Metadata written next to each snapshot PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub target_id: u32,
    pub pose: CameraPose,
    pub intrinsics: Intrinsics,
    pub splat_radius: f64,
    pub score: Option<f64>,
}

impl Snapshot {
    pub fn meta(&self, score: Option<f64>) -> SnapshotMeta {
        SnapshotMeta {
            target_id: self.target_id,
            pose: self.pose,
            intrinsics: self.intrinsics,
            splat_radius: self.splat_radius,
            score,
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let img = image::RgbImage::from_raw(self.width, self.height, raw)
            .ok_or_else(|| RenderError::Encode("pixel buffer does not match image size".into()))?;
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| RenderError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn covered_pixels(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }
}

/// Color, depth and point-ownership buffers of a z-buffered splat pass.
pub struct RasterBuffers {
    pub pixels: Vec<[u8; 3]>,
    pub depth: Vec<f64>,
    pub owner: Vec<u32>,
}

/// Splats each point as a disc of `radius` pixels; per pixel the smallest
/// depth wins and the earlier point wins exact ties. A pixel is covered when
/// its center lies within `radius` of the projected point.
pub fn rasterize(
    points: impl Iterator<Item = (u32, Vec3, [u8; 3])>,
    pose: &CameraPose,
    intr: &Intrinsics,
    radius: f64,
) -> Result<RasterBuffers, RenderError> {
    intr.validate()?;
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(RenderError::InvalidConfig(format!("splat radius {radius} must be non-negative")));
    }
    let basis = pose.basis()?;
    let (w, h) = (intr.image_width as usize, intr.image_height as usize);
    let mut buf = RasterBuffers {
        pixels: vec![[0, 0, 0]; w * h],
        depth: vec![f64::INFINITY; w * h],
        owner: vec![NO_OWNER; w * h],
    };
    let r2 = radius * radius;
    for (index, p, color) in points {
        let Some(proj) = project_with(&basis, pose.position, intr, p) else {
            continue;
        };
        let [u, v] = proj.pixel;
        if !(u.is_finite() && v.is_finite()) {
            continue;
        }
        // pixel i has center i + 0.5
        let i0 = (u - radius - 0.5).ceil().max(0.0);
        let i1 = (u + radius - 0.5).floor().min(w as f64 - 1.0);
        let j0 = (v - radius - 0.5).ceil().max(0.0);
        let j1 = (v + radius - 0.5).floor().min(h as f64 - 1.0);
        if i0 > i1 || j0 > j1 {
            continue;
        }
        for j in j0 as usize..=j1 as usize {
            let dy = j as f64 + 0.5 - v;
            for i in i0 as usize..=i1 as usize {
                let dx = i as f64 + 0.5 - u;
                if dx * dx + dy * dy > r2 {
                    continue;
                }
                let k = j * w + i;
                if proj.depth < buf.depth[k] {
                    buf.depth[k] = proj.depth;
                    buf.pixels[k] = color;
                    buf.owner[k] = index;
                }
            }
        }
    }
    Ok(buf)
}

pub fn render(scene: &Scene, pose: &CameraPose, intr: &Intrinsics, splat_radius: f64) -> Result<Snapshot, RenderError> {
    let buf = render_with_owner(scene, pose, intr, splat_radius)?;
    Ok(Snapshot {
        width: intr.image_width,
        height: intr.image_height,
        pixels: buf.pixels,
        depth: buf.depth,
        pose: *pose,
        intrinsics: *intr,
        splat_radius,
        target_id: pose.target_id,
    })
}

/// Same as [`render`] but also returns which point won each pixel.
pub fn render_with_owner(
    scene: &Scene,
    pose: &CameraPose,
    intr: &Intrinsics,
    splat_radius: f64,
) -> Result<RasterBuffers, RenderError> {
    let cloud = scene.cloud();
    let points = (0..cloud.len()).map(|i| (i as u32, cloud.position(i), cloud.colors()[i]));
    rasterize(points, pose, intr, splat_radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level::Level;
    use crate::scene::PointCloud;

    fn pose() -> CameraPose {
        CameraPose {
            position: [0.0, 0.0, 5.0],
            look_at: [0.0; 3],
            up: [0.0, 1.0, 0.0],
            elevation_deg: 90.0,
            azimuth_deg: 0.0,
            level: Level::Object,
            target_id: 0,
        }
    }

    fn small() -> Intrinsics {
        Intrinsics { image_width: 64, image_height: 64, vertical_fov: 1.0 }
    }

    fn scene(points: Vec<[f32; 3]>, colors: Vec<[u8; 3]>) -> Scene {
        Scene::new("t", PointCloud::new(points, colors).unwrap(), vec![]).unwrap()
    }

    #[test]
    fn single_point_on_axis() {
        let s = scene(vec![[0.0, 0.0, 0.0]], vec![[255, 0, 0]]);
        let snap = render(&s, &pose(), &small(), 2.0).unwrap();
        let center = 32 * 64 + 32;
        assert_eq!(snap.pixels[center], [255, 0, 0]);
        assert!((snap.depth[center] - 5.0).abs() < 1e-12);
        // (32, 32) is a pixel corner; centers at offsets (+-0.5, +-0.5) and (+-0.5, +-1.5) lie within 2
        assert_eq!(snap.covered_pixels(), 12);
        assert_eq!(snap.pixels[0], [0, 0, 0]);
        assert!(snap.depth[0].is_infinite());
    }

    #[test]
    fn nearer_point_wins() {
        for order in [[0usize, 1], [1, 0]] {
            let pts = [[0.0f32, 0.0, 0.0], [0.0, 0.0, 1.0]];
            let cols = [[255u8, 0, 0], [0, 255, 0]];
            let s = scene(order.iter().map(|&i| pts[i]).collect(), order.iter().map(|&i| cols[i]).collect());
            let snap = render(&s, &pose(), &small(), 1.0).unwrap();
            let c = 32 * 64 + 32;
            assert_eq!(snap.pixels[c], [0, 255, 0]);
            assert!((snap.depth[c] - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn png_has_image_dimensions() {
        let s = scene(vec![[0.0; 3]], vec![[9, 9, 9]]);
        let snap = render(&s, &pose(), &small(), 2.0).unwrap();
        let png = snap.to_png().unwrap();
        let img = image::load_from_memory(&png).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
    }
}
