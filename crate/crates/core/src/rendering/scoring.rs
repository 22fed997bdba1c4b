//! Image-text scoring of snapshots and top-M selection.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::raster::{rasterize, Snapshot};
use super::RenderError;
use crate::client::{ClientError, Endpoint, JsonHttp, RetryPolicy};
use crate::scene::Scene;

/// Similarity between a rendered view and a category label.
pub trait Scorer: Sync {
    fn id(&self) -> &str;
    fn score(&self, snapshot: &Snapshot, label: &str) -> Result<f64, ClientError>;
}

/// Offline scorer: the fraction of image pixels where the target object is
/// the visible surface. Visibility is decided by a target-only depth pass
/// compared against the full render.
pub struct StubScorer<'a> {
    scene: &'a Scene,
}

impl<'a> StubScorer<'a> {
    pub fn new(scene: &'a Scene) -> Self {
        Self { scene }
    }

    /// Number of pixels where the target-only pass reproduces the full depth.
    pub fn visible_target_pixels(&self, snapshot: &Snapshot) -> Result<usize, RenderError> {
        let target = self
            .scene
            .object(snapshot.target_id)
            .ok_or(RenderError::UnknownTarget(snapshot.target_id))?;
        let cloud = self.scene.cloud();
        let points = target
            .point_indices
            .iter()
            .map(|&i| (i, cloud.position(i as usize), cloud.colors()[i as usize]));
        let mask = rasterize(points, &snapshot.pose, &snapshot.intrinsics, snapshot.splat_radius)?;
        Ok(mask
            .depth
            .iter()
            .zip(&snapshot.depth)
            .filter(|(t, full)| t.is_finite() && *t == *full)
            .count())
    }
}

impl Scorer for StubScorer<'_> {
    fn id(&self) -> &str {
        "stub-visible-fraction"
    }

    fn score(&self, snapshot: &Snapshot, _label: &str) -> Result<f64, ClientError> {
        let visible = self
            .visible_target_pixels(snapshot)
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        Ok(visible as f64 / (snapshot.width as f64 * snapshot.height as f64))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub label: String,
    pub image_png_base64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

/// Scorer backed by an HTTP endpoint (see `docs/wire-format.md`).
pub struct HttpScorer {
    transport: JsonHttp,
    retry: RetryPolicy,
    id: String,
}

impl HttpScorer {
    pub fn new(endpoint: Endpoint, retry: RetryPolicy, timeout: Duration) -> Result<Self, ClientError> {
        let id = format!("http-scorer:{}", endpoint.url);
        Ok(Self {
            transport: JsonHttp::new(endpoint, timeout)?,
            retry,
            id,
        })
    }
}

impl Scorer for HttpScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, snapshot: &Snapshot, label: &str) -> Result<f64, ClientError> {
        let png = snapshot.to_png().map_err(|e| ClientError::Decode(e.to_string()))?;
        let req = ScoreRequest {
            label: label.to_string(),
            image_png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        };
        self.retry.run(|| {
            let resp: ScoreResponse = self.transport.post(&req)?;
            if resp.score.is_finite() {
                Ok(resp.score)
            } else {
                Err(ClientError::Decode(format!("non-finite score {}", resp.score)))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSnapshot {
    pub snapshot: Snapshot,
    pub score: f64,
}

/// Scores every snapshot with at most `max_in_flight` concurrent calls.
/// Output order matches input order.
pub fn score_all(
    snapshots: &[Snapshot],
    label: &str,
    scorer: &dyn Scorer,
    max_in_flight: usize,
) -> Result<Vec<f64>, RenderError> {
    let cap = max_in_flight.max(1);
    let mut scores = Vec::with_capacity(snapshots.len());
    for chunk in snapshots.chunks(cap) {
        let results: Vec<Result<f64, ClientError>> = if chunk.len() == 1 {
            vec![scorer.score(&chunk[0], label)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|snap| s.spawn(move || scorer.score(snap, label))).collect();
                handles.into_iter().map(|h| h.join().expect("scorer thread panicked")).collect()
            })
        };
        for (snap, r) in chunk.iter().zip(results) {
            let score = r.map_err(|source| RenderError::Scorer {
                level: snap.pose.level,
                elevation_deg: snap.pose.elevation_deg,
                azimuth_deg: snap.pose.azimuth_deg,
                source,
            })?;
            if !score.is_finite() {
                return Err(RenderError::Scorer {
                    level: snap.pose.level,
                    elevation_deg: snap.pose.elevation_deg,
                    azimuth_deg: snap.pose.azimuth_deg,
                    source: ClientError::Decode("non-finite score".into()),
                });
            }
            scores.push(score);
        }
    }
    Ok(scores)
}

/// Keeps the `m` best-scoring snapshots. Ties are broken by level, then
/// elevation, then azimuth, ascending.
pub fn select_top_m(
    snapshots: Vec<Snapshot>,
    label: &str,
    scorer: &dyn Scorer,
    m: usize,
    max_in_flight: usize,
) -> Result<Vec<ScoredSnapshot>, RenderError> {
    if m == 0 {
        return Err(RenderError::InvalidConfig("top-M selection needs M >= 1".into()));
    }
    let scores = score_all(&snapshots, label, scorer, max_in_flight)?;
    let mut scored: Vec<ScoredSnapshot> = snapshots
        .into_iter()
        .zip(scores)
        .map(|(snapshot, score)| ScoredSnapshot { snapshot, score })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.snapshot.pose.level.cmp(&b.snapshot.pose.level))
            .then(a.snapshot.pose.elevation_deg.total_cmp(&b.snapshot.pose.elevation_deg))
            .then(a.snapshot.pose.azimuth_deg.total_cmp(&b.snapshot.pose.azimuth_deg))
    });
    scored.truncate(m);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level::Level;
    use crate::rendering::camera::{CameraPose, Intrinsics};
    use crate::rendering::raster::{render, render_with_owner};
    use crate::scene::{OrientedBox, PointCloud, SceneObject};

    struct ByAzimuth;

    impl Scorer for ByAzimuth {
        fn id(&self) -> &str {
            "by-azimuth"
        }
        fn score(&self, s: &Snapshot, _: &str) -> Result<f64, ClientError> {
            // equal scores for azimuth 0 and 180
            Ok((s.pose.azimuth_deg.to_radians()).cos().abs())
        }
    }

    struct Failing;

    impl Scorer for Failing {
        fn id(&self) -> &str {
            "failing"
        }
        fn score(&self, _: &Snapshot, _: &str) -> Result<f64, ClientError> {
            Err(ClientError::Transport("down".into()))
        }
    }

    fn snap(elevation_deg: f64, azimuth_deg: f64) -> Snapshot {
        Snapshot {
            width: 1,
            height: 1,
            pixels: vec![[0; 3]],
            depth: vec![f64::INFINITY],
            pose: CameraPose {
                position: [0.0; 3],
                look_at: [1.0, 0.0, 0.0],
                up: [0.0, 0.0, 1.0],
                elevation_deg,
                azimuth_deg,
                level: Level::Local,
                target_id: 0,
            },
            intrinsics: Intrinsics { image_width: 1, image_height: 1, vertical_fov: 1.0 },
            splat_radius: 1.0,
            target_id: 0,
        }
    }

    fn sweep() -> Vec<Snapshot> {
        let mut v: Vec<Snapshot> = [0.0, 45.0]
            .iter()
            .flat_map(|&e| (0..8).map(move |k| snap(e, 45.0 * k as f64)))
            .collect();
        v.push(snap(90.0, 0.0));
        v
    }

    #[test]
    fn top_three_descending_with_stable_ties() {
        let mut input = sweep();
        input.reverse();
        let top = select_top_m(input, "chair", &ByAzimuth, 3, 4).unwrap();
        assert_eq!(top.len(), 3);
        let keys: Vec<(f64, f64)> = top.iter().map(|s| (s.snapshot.pose.elevation_deg, s.snapshot.pose.azimuth_deg)).collect();
        assert_eq!(keys, vec![(0.0, 0.0), (0.0, 180.0), (45.0, 0.0)]);
        assert!(top.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn returns_all_when_m_exceeds_count() {
        assert_eq!(select_top_m(sweep(), "chair", &ByAzimuth, 100, 1).unwrap().len(), 17);
        assert!(select_top_m(sweep(), "chair", &ByAzimuth, 0, 1).is_err());
    }

    #[test]
    fn concurrency_cap_does_not_change_output() {
        let a = select_top_m(sweep(), "chair", &ByAzimuth, 5, 1).unwrap();
        let b = select_top_m(sweep(), "chair", &ByAzimuth, 5, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scorer_failure_names_snapshot() {
        match select_top_m(sweep(), "chair", &Failing, 3, 2) {
            Err(RenderError::Scorer { elevation_deg, azimuth_deg, .. }) => {
                assert_eq!((elevation_deg, azimuth_deg), (0.0, 0.0));
            }
            other => panic!("{other:?}"),
        }
    }

    /// Dense target plane in front of a background plane, seen from +z.
    fn occlusion_scene(target_in_front: bool) -> Scene {
        let mut pos = Vec::new();
        let mut col = Vec::new();
        let (tz, bz) = if target_in_front { (1.0, 0.0) } else { (0.0, 1.0) };
        let grid = |z: f32, half: f32, pos: &mut Vec<[f32; 3]>, col: &mut Vec<[u8; 3]>, c: [u8; 3]| {
            let n = 60;
            for a in 0..=n {
                for b in 0..=n {
                    let x = -half + 2.0 * half * a as f32 / n as f32;
                    let y = -half + 2.0 * half * b as f32 / n as f32;
                    pos.push([x, y, z]);
                    col.push(c);
                }
            }
        };
        grid(bz, 1.5, &mut pos, &mut col, [50, 50, 50]);
        let start = pos.len() as u32;
        grid(tz, 1.0, &mut pos, &mut col, [200, 0, 0]);
        let end = pos.len() as u32;
        let obj = SceneObject {
            id: 0,
            label: "table".into(),
            bbox: OrientedBox { center: [0.0, 0.0, tz as f64], size: [2.0, 2.0, 0.01], yaw: 0.0 },
            point_indices: (start..end).collect(),
            is_stander: true,
        };
        Scene::new("occ", PointCloud::new(pos, col).unwrap(), vec![obj]).unwrap()
    }

    fn top_pose(distance: f64) -> CameraPose {
        CameraPose {
            position: [0.0, 0.0, 1.0 + distance],
            look_at: [0.0, 0.0, 1.0],
            up: [0.0, 1.0, 0.0],
            elevation_deg: 90.0,
            azimuth_deg: 0.0,
            level: Level::Object,
            target_id: 0,
        }
    }

    #[test]
    fn stub_scores_fill_and_occlusion() {
        let intr = Intrinsics { image_width: 64, image_height: 64, vertical_fov: 1.0 };
        let front = occlusion_scene(true);
        let near = render(&front, &top_pose(1.0), &intr, 2.0).unwrap();
        let s = StubScorer::new(&front).score(&near, "table").unwrap();
        assert!(s > 0.95, "{s}");

        let behind = occlusion_scene(false);
        let view = render(&behind, &top_pose(1.5), &intr, 2.0).unwrap();
        assert_eq!(StubScorer::new(&behind).score(&view, "table").unwrap(), 0.0);
    }

    #[test]
    fn mask_pass_matches_ownership_count() {
        let intr = Intrinsics { image_width: 48, image_height: 40, vertical_fov: 0.9 };
        let scene = occlusion_scene(true);
        for d in [1.0, 2.0, 4.0] {
            let pose = top_pose(d);
            let snap = render(&scene, &pose, &intr, 1.5).unwrap();
            let owners = render_with_owner(&scene, &pose, &intr, 1.5).unwrap().owner;
            let target = &scene.objects()[0];
            let direct = owners.iter().filter(|o| target.point_indices.contains(o)).count();
            assert_eq!(StubScorer::new(&scene).visible_target_pixels(&snap).unwrap(), direct);
        }
    }
}
