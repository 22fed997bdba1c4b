use serde::{Deserialize, Serialize};

use super::{RenderConfig, RenderError};
use crate::geometry::{self, Vec3};
use crate::level::Level;
use crate::scene::{AxisBox, SceneObject};

/// Pinhole intrinsics with square pixels; the principal point is the image
/// center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub image_width: u32,
    pub image_height: u32,
    /// Vertical field of view, radians.
    pub vertical_fov: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            image_width: 512,
            image_height: 512,
            vertical_fov: 60f64.to_radians(),
        }
    }
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(RenderError::InvalidIntrinsics("image dimensions must be positive".into()));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(RenderError::InvalidIntrinsics(format!(
                "vertical fov {} rad outside (0, pi)",
                self.vertical_fov
            )));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        0.5 * self.image_height as f64 / (0.5 * self.vertical_fov).tan()
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * self.image_width as f64, 0.5 * self.image_height as f64]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub level: Level,
    pub target_id: u32,
}

/// Orthonormal camera frame: `right`, image-up, and viewing direction.
#[derive(Debug, Clone, Copy)]
pub struct CameraBasis {
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

impl CameraPose {
    pub fn basis(&self) -> Result<CameraBasis, RenderError> {
        let forward = geometry::normalize(geometry::sub(self.look_at, self.position))
            .ok_or_else(|| RenderError::DegeneratePose("camera position equals look-at point".into()))?;
        let right = geometry::normalize(geometry::cross(forward, self.up))
            .ok_or_else(|| RenderError::DegeneratePose("up vector parallel to view direction".into()))?;
        let up = geometry::cross(right, forward);
        Ok(CameraBasis { right, up, forward })
    }

    pub fn distance(&self) -> f64 {
        geometry::norm(geometry::sub(self.look_at, self.position))
    }
}

/// Pixel position (continuous, origin at the top-left image corner) and
/// depth along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub pixel: [f64; 2],
    pub depth: f64,
}

/// Points at or behind the image plane through the camera center are not
/// projectable.
pub const MIN_DEPTH: f64 = 1e-9;

pub fn project_with(basis: &CameraBasis, origin: Vec3, intr: &Intrinsics, point: Vec3) -> Option<Projected> {
    let v = geometry::sub(point, origin);
    let depth = geometry::dot(v, basis.forward);
    if depth <= MIN_DEPTH {
        return None;
    }
    let f = intr.focal_px();
    let [cx, cy] = intr.center();
    let x = geometry::dot(v, basis.right);
    let y = geometry::dot(v, basis.up);
    Some(Projected {
        pixel: [cx + f * x / depth, cy - f * y / depth],
        depth,
    })
}

/// Pinhole projection; `Ok(None)` marks a point behind the camera.
pub fn project(pose: &CameraPose, intr: &Intrinsics, point: Vec3) -> Result<Option<Projected>, RenderError> {
    let basis = pose.basis()?;
    Ok(project_with(&basis, pose.position, intr, point))
}

/// Camera distance at which the silhouette of the framing sphere of `level`
/// spans the requested share of the vertical field of view. Distances are
/// non-decreasing from object to scene level.
pub fn framing_distance(level: Level, target_radius: f64, scene_radius: f64, cfg: &RenderConfig) -> f64 {
    let t = (0.5 * cfg.intrinsics.vertical_fov).tan();
    // tangent rays at angle a from the axis satisfy sin a = r / d
    let fit = |r: f64, share: f64| r * (1.0 + 1.0 / (share * t).powi(2)).sqrt();
    let object = fit(target_radius, cfg.fill);
    let local = fit(target_radius + cfg.local_margin, 1.0).max(object);
    let scene = fit(scene_radius, 1.0).max(local);
    match level {
        Level::Object => object,
        Level::Local => local,
        Level::Scene => scene,
    }
}

/// Cameras on a sphere around the target at every configured elevation and
/// `n_azimuth` azimuths; straight-down views collapse to a single pose.
pub fn plan_cameras(
    target: &SceneObject,
    scene_box: &AxisBox,
    level: Level,
    cfg: &RenderConfig,
) -> Result<Vec<CameraPose>, RenderError> {
    if cfg.n_azimuth == 0 {
        return Err(RenderError::InvalidConfig("n_azimuth must be at least 1".into()));
    }
    let radius = 0.5 * geometry::norm(target.bbox.size);
    if !(radius > 1e-9) {
        return Err(RenderError::DegenerateTarget(target.id));
    }
    let scene_radius = scene_box.bounding_radius();
    let distance = framing_distance(level, radius, scene_radius, cfg);
    let center = target.bbox.center;

    let mut poses = Vec::new();
    for &elevation_deg in &cfg.elevations_deg {
        let top_down = (elevation_deg - 90.0).abs() < 1e-9;
        let azimuths = if top_down { 1 } else { cfg.n_azimuth };
        for k in 0..azimuths {
            let azimuth_deg = 360.0 * k as f64 / cfg.n_azimuth as f64;
            let (dir, up) = if top_down {
                ([0.0, 0.0, 1.0], [0.0, 1.0, 0.0])
            } else {
                let (se, ce) = elevation_deg.to_radians().sin_cos();
                let (sa, ca) = azimuth_deg.to_radians().sin_cos();
                ([ce * ca, ce * sa, se], [0.0, 0.0, 1.0])
            };
            poses.push(CameraPose {
                position: geometry::add(center, geometry::scale(dir, distance)),
                look_at: center,
                up,
                elevation_deg,
                azimuth_deg,
                level,
                target_id: target.id,
            });
        }
    }
    Ok(poses)
}

/// Image-space bounding box of a sphere's silhouette, clipped to the frame,
/// as a fraction of the frame area.
pub fn sphere_frame_fraction(pose: &CameraPose, intr: &Intrinsics, center: Vec3, radius: f64) -> Result<f64, RenderError> {
    let b = pose.basis()?;
    let v = geometry::sub(center, pose.position);
    let (x, y, z) = (geometry::dot(v, b.right), geometry::dot(v, b.up), geometry::dot(v, b.forward));
    if z <= radius {
        // camera inside or touching the sphere
        return Ok(1.0);
    }
    // slopes k of the planes through the camera tangent to the sphere: (a - kz)^2 = r^2 (1 + k^2)
    let slopes = |a: f64| {
        let denom = z * z - radius * radius;
        let root = radius * (a * a + z * z - radius * radius).sqrt();
        ((a * z - root) / denom, (a * z + root) / denom)
    };
    let f = intr.focal_px();
    let [cx, cy] = intr.center();
    let (w, h) = (intr.image_width as f64, intr.image_height as f64);
    let (kx0, kx1) = slopes(x);
    let (ky0, ky1) = slopes(y);
    let (u0, u1) = ((cx + f * kx0).clamp(0.0, w), (cx + f * kx1).clamp(0.0, w));
    let (v0, v1) = ((cy - f * ky1).clamp(0.0, h), (cy - f * ky0).clamp(0.0, h));
    Ok(((u1 - u0) * (v1 - v0)) / (w * h))
}
