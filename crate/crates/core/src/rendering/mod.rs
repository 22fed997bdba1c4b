//! Multi-level point-cloud rendering: camera planning around a target,
//! z-buffered splat rasterization and scoring-based view selection.

pub mod camera;
pub mod raster;
pub mod scoring;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ClientError;
use crate::level::Level;
use crate::scene::Scene;

pub use camera::{framing_distance, plan_cameras, project, CameraPose, Intrinsics, Projected};
pub use raster::{render, render_with_owner, Snapshot, SnapshotMeta};
pub use scoring::{select_top_m, HttpScorer, ScoredSnapshot, Scorer, StubScorer};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate camera pose: {0}")]
    DegeneratePose(String),
    #[error("object {0} has a degenerate bounding box")]
    DegenerateTarget(u32),
    #[error("object {0} not found in scene")]
    UnknownTarget(u32),
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("image encoding failed: {0}")]
    Encode(String),
    #[error("scoring {level} view (elevation {elevation_deg}, azimuth {azimuth_deg}) failed: {source}")]
    Scorer {
        level: Level,
        elevation_deg: f64,
        azimuth_deg: f64,
        #[source]
        source: ClientError,
    },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub intrinsics: Intrinsics,
    /// Disc radius in pixels.
    pub splat_radius: f64,
    /// Fraction of the frame the target's extent should span at object level.
    pub fill: f64,
    /// Extra context radius in meters around the target at local level.
    pub local_margin: f64,
    pub n_azimuth: usize,
    pub top_m: usize,
    pub elevations_deg: Vec<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::default(),
            splat_radius: 2.0,
            fill: 0.9,
            local_margin: 1.5,
            n_azimuth: 8,
            top_m: 3,
            elevations_deg: vec![0.0, 45.0, 90.0],
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        self.intrinsics.validate()?;
        let bad = |m: &str| Err(RenderError::InvalidConfig(m.into()));
        if !(self.splat_radius >= 0.0 && self.splat_radius.is_finite()) {
            return bad("splat_radius must be non-negative");
        }
        if !(self.fill > 0.0 && self.fill <= 1.0) {
            return bad("fill must be in (0, 1]");
        }
        if !(self.local_margin >= 0.0 && self.local_margin.is_finite()) {
            return bad("local_margin must be non-negative");
        }
        if self.n_azimuth == 0 {
            return bad("n_azimuth must be at least 1");
        }
        if self.top_m == 0 {
            return bad("top_m must be at least 1");
        }
        if self.elevations_deg.is_empty() || self.elevations_deg.iter().any(|e| !(0.0..=90.0).contains(e)) {
            return bad("elevations_deg must be non-empty and within [0, 90]");
        }
        Ok(())
    }
}

/// Plans and renders every view of `target_id` at `level`.
pub fn render_views(scene: &Scene, target_id: u32, level: Level, cfg: &RenderConfig) -> Result<Vec<Snapshot>, RenderError> {
    cfg.validate()?;
    let target = scene.object(target_id).ok_or(RenderError::UnknownTarget(target_id))?;
    let poses = plan_cameras(target, &scene.aabb(), level, cfg)?;
    poses
        .iter()
        .map(|pose| render(scene, pose, &cfg.intrinsics, cfg.splat_radius))
        .collect()
}

/// File stem used for a snapshot: `<level>_e<elev>_a<azimuth>`.
pub fn snapshot_stem(pose: &CameraPose) -> String {
    format!("{}_e{:03}_a{:03}", pose.level, pose.elevation_deg.round() as i64, pose.azimuth_deg.round() as i64)
}

/// Writes `<stem>.png` and `<stem>.json` into `dir`; returns the PNG path.
pub fn write_snapshot(dir: &Path, scored: &ScoredSnapshot) -> Result<PathBuf, RenderError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RenderError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let stem = snapshot_stem(&scored.snapshot.pose);
    let png_path = dir.join(format!("{stem}.png"));
    let meta_path = dir.join(format!("{stem}.json"));
    std::fs::write(&png_path, scored.snapshot.to_png()?).map_err(io(&png_path))?;
    let meta = serde_json::to_vec_pretty(&scored.snapshot.meta(Some(scored.score)))
        .map_err(|e| RenderError::Encode(e.to_string()))?;
    std::fs::write(&meta_path, meta).map_err(io(&meta_path))?;
    Ok(png_path)
}
