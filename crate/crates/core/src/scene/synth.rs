//! Deterministic synthetic rooms used as fixtures.
//!
//! Sampling rules:
//! - floor slab: `ceil(width * depth * density)` points, uniform over the
//!   room footprint with `z` uniform in `[0, FLOOR_THICKNESS]`;
//! - walls (optional): the four vertical planes `x = 0`, `x = width`,
//!   `y = 0`, `y = depth`, `ceil(length * height * density)` points each;
//! - objects: the top and four side faces of the box (the bottom rests on
//!   the floor and is never observed), `ceil(face_area * density)` points
//!   per face.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CategoryTable, OrientedBox, PointCloud, Result, Scene, SceneError, SceneObject};
use crate::geometry::{rotate_z, wrap_angle, Vec3};

pub const FLOOR_THICKNESS: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub id: String,
    /// Extent along x, meters.
    pub width: f64,
    /// Extent along y, meters.
    pub depth: f64,
    pub height: f64,
    /// Points per square meter of sampled surface.
    pub density: f64,
    pub walls: bool,
    pub objects: Vec<ObjectSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub label: String,
    pub center_xy: [f64; 2],
    /// Height of the box bottom above the floor.
    #[serde(default)]
    pub base_z: f64,
    pub size: Vec3,
    #[serde(default)]
    pub yaw: f64,
    pub color: [u8; 3],
}

impl ObjectSpec {
    pub fn new(label: &str, center_xy: [f64; 2], size: Vec3, yaw: f64, color: [u8; 3]) -> Self {
        Self {
            label: label.to_string(),
            center_xy,
            base_z: 0.0,
            size,
            yaw,
            color,
        }
    }

    pub fn mounted_at(mut self, base_z: f64) -> Self {
        self.base_z = base_z;
        self
    }
}

fn jitter_color<R: Rng>(rng: &mut R, base: [u8; 3], amount: i16) -> [u8; 3] {
    let mut c = base;
    for v in &mut c {
        *v = (*v as i16 + rng.gen_range(-amount..=amount)).clamp(0, 255) as u8;
    }
    c
}

fn check_spec(spec: &RoomSpec) -> Result<()> {
    let dims = [spec.width, spec.depth, spec.height, spec.density];
    if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(SceneError::Spec("room dimensions and density must be positive".into()));
    }
    for (i, o) in spec.objects.iter().enumerate() {
        if o.size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(SceneError::Spec(format!("object {i} ({}) has a non-positive size", o.label)));
        }
        let (hx, hy) = (0.5 * o.size[0], 0.5 * o.size[1]);
        for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            let (dx, dy) = rotate_z(sx * hx, sy * hy, o.yaw);
            let (x, y) = (o.center_xy[0] + dx, o.center_xy[1] + dy);
            let eps = 1e-9;
            if x < -eps || x > spec.width + eps || y < -eps || y > spec.depth + eps {
                return Err(SceneError::Spec(format!(
                    "object {i} ({}) extends outside the {}x{} m room",
                    o.label, spec.width, spec.depth
                )));
            }
        }
        if o.base_z < 0.0 || o.base_z + o.size[2] > spec.height + 1e-9 {
            return Err(SceneError::Spec(format!("object {i} ({}) extends outside the room height", o.label)));
        }
    }
    Ok(())
}

pub fn synthesize_test_scene(spec: &RoomSpec, seed: u64) -> Result<Scene> {
    synthesize_with_categories(spec, seed, &CategoryTable::default())
}

pub fn synthesize_with_categories(spec: &RoomSpec, seed: u64, categories: &CategoryTable) -> Result<Scene> {
    check_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<[f32; 3]> = Vec::new();
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let count = |area: f64| (area * spec.density).ceil() as usize;

    let floor_color = [150, 120, 90];
    for _ in 0..count(spec.width * spec.depth) {
        let x = rng.gen_range(0.0..=spec.width);
        let y = rng.gen_range(0.0..=spec.depth);
        let z = rng.gen_range(0.0..=FLOOR_THICKNESS);
        positions.push([x as f32, y as f32, z as f32]);
        colors.push(jitter_color(&mut rng, floor_color, 8));
    }

    if spec.walls {
        let wall_color = [210, 205, 195];
        let (w, d, h) = (spec.width, spec.depth, spec.height);
        // (fixed coordinate axis, fixed value, length)
        let walls = [(0usize, 0.0, d), (0, w, d), (1, 0.0, w), (1, d, w)];
        for (axis, value, len) in walls {
            for _ in 0..count(len * h) {
                let t = rng.gen_range(0.0..=len);
                let z = rng.gen_range(0.0..=h);
                let p = if axis == 0 { [value, t, z] } else { [t, value, z] };
                positions.push([p[0] as f32, p[1] as f32, p[2] as f32]);
                colors.push(jitter_color(&mut rng, wall_color, 6));
            }
        }
    }

    let mut objects = Vec::with_capacity(spec.objects.len());
    for (i, o) in spec.objects.iter().enumerate() {
        let start = positions.len() as u32;
        let [sx, sy, sz] = o.size;
        let (hx, hy) = (0.5 * sx, 0.5 * sy);
        // local coordinates relative to the box base center
        let mut local: Vec<Vec3> = Vec::new();
        for _ in 0..count(sx * sy) {
            local.push([rng.gen_range(-hx..=hx), rng.gen_range(-hy..=hy), sz]);
        }
        for side in [-1.0, 1.0] {
            for _ in 0..count(sy * sz) {
                local.push([side * hx, rng.gen_range(-hy..=hy), rng.gen_range(0.0..=sz)]);
            }
            for _ in 0..count(sx * sz) {
                local.push([rng.gen_range(-hx..=hx), side * hy, rng.gen_range(0.0..=sz)]);
            }
        }
        for l in local {
            let (dx, dy) = rotate_z(l[0], l[1], o.yaw);
            positions.push([
                (o.center_xy[0] + dx) as f32,
                (o.center_xy[1] + dy) as f32,
                (o.base_z + l[2]) as f32,
            ]);
            colors.push(jitter_color(&mut rng, o.color, 12));
        }
        let end = positions.len() as u32;
        objects.push(SceneObject {
            id: i as u32,
            label: o.label.clone(),
            bbox: OrientedBox {
                center: [o.center_xy[0], o.center_xy[1], o.base_z + 0.5 * sz],
                size: o.size,
                yaw: wrap_angle(o.yaw),
            },
            point_indices: (start..end).collect(),
            is_stander: categories.is_stander(&o.label),
        });
    }

    Scene::new(spec.id.clone(), PointCloud::new(positions, colors)?, objects)
}

/// Fixed room layouts used by tests, the acceptance suite and the CLI demo.
pub mod presets {
    use super::{ObjectSpec, RoomSpec};

    pub const MINI_SCENE_SEED: u64 = 7;

    /// 4 x 4 x 2.5 m walled room with four objects (three standers, one window).
    pub fn mini_scene() -> RoomSpec {
        RoomSpec {
            id: "mini_scene".into(),
            width: 4.0,
            depth: 4.0,
            height: 2.5,
            density: 60.0,
            walls: true,
            objects: vec![
                ObjectSpec::new("table", [1.2, 2.8], [1.2, 0.7, 0.75], 0.0, [120, 80, 40]),
                ObjectSpec::new("chair", [1.2, 2.0], [0.5, 0.5, 0.9], 0.3, [60, 60, 160]),
                ObjectSpec::new("cabinet", [3.4, 0.5], [0.8, 0.5, 1.2], 0.0, [200, 180, 120]),
                ObjectSpec::new("window", [2.0, 3.95], [1.0, 0.05, 1.0], 0.0, [170, 210, 230]).mounted_at(1.0),
            ],
        }
    }

    /// Five walled rooms of different shapes and clutter levels.
    pub fn fixture_rooms() -> Vec<RoomSpec> {
        let room = |id: &str, w: f64, d: f64, objects: Vec<ObjectSpec>| RoomSpec {
            id: id.into(),
            width: w,
            depth: d,
            height: 2.5,
            density: 150.0,
            walls: true,
            objects,
        };
        vec![
            room("fixture_living", 5.0, 4.0, vec![
                ObjectSpec::new("sofa", [2.5, 0.6], [2.0, 0.9, 0.8], 0.0, [90, 110, 70]),
                ObjectSpec::new("coffee table", [2.5, 1.8], [1.0, 0.6, 0.45], 0.0, [140, 100, 60]),
                ObjectSpec::new("armchair", [4.2, 2.2], [0.8, 0.8, 0.9], 1.2, [150, 60, 60]),
                ObjectSpec::new("window", [2.5, 3.97], [1.5, 0.05, 1.2], 0.0, [170, 210, 230]).mounted_at(0.9),
            ]),
            room("fixture_bedroom", 4.0, 4.5, vec![
                ObjectSpec::new("bed", [1.2, 3.3], [1.6, 2.0, 0.6], 0.0, [200, 200, 220]),
                ObjectSpec::new("nightstand", [2.4, 4.1], [0.5, 0.4, 0.55], 0.0, [130, 90, 50]),
                ObjectSpec::new("dresser", [3.6, 1.0], [0.5, 1.2, 1.0], 0.0, [110, 70, 40]),
            ]),
            room("fixture_office", 6.0, 5.0, vec![
                ObjectSpec::new("desk", [1.0, 1.0], [1.4, 0.7, 0.75], 0.0, [160, 130, 90]),
                ObjectSpec::new("chair", [1.0, 1.7], [0.5, 0.5, 0.95], 2.8, [40, 40, 40]),
                ObjectSpec::new("desk", [4.8, 1.0], [1.4, 0.7, 0.75], 0.0, [160, 130, 90]),
                ObjectSpec::new("chair", [4.8, 1.7], [0.5, 0.5, 0.95], 3.3, [40, 40, 40]),
                ObjectSpec::new("bookshelf", [3.0, 4.7], [1.8, 0.4, 1.9], 0.0, [120, 90, 60]),
                ObjectSpec::new("trash can", [5.6, 4.6], [0.35, 0.35, 0.5], 0.0, [90, 90, 90]),
            ]),
            room("fixture_dining", 4.5, 4.5, vec![
                ObjectSpec::new("table", [2.25, 2.25], [1.6, 0.9, 0.75], 0.4, [150, 100, 55]),
                ObjectSpec::new("chair", [1.3, 1.6], [0.45, 0.45, 0.9], 0.4, [100, 60, 30]),
                ObjectSpec::new("chair", [3.2, 2.9], [0.45, 0.45, 0.9], 3.54, [100, 60, 30]),
                ObjectSpec::new("cabinet", [0.35, 4.0], [0.6, 0.8, 1.1], 0.0, [190, 170, 130]),
                ObjectSpec::new("picture", [2.25, 4.48], [0.8, 0.02, 0.6], 0.0, [30, 120, 200]).mounted_at(1.3),
            ]),
            room("fixture_studio", 3.5, 3.0, vec![
                ObjectSpec::new("bed", [0.9, 1.2], [1.4, 2.0, 0.5], 0.0, [210, 210, 230]),
                ObjectSpec::new("stool", [2.9, 2.5], [0.4, 0.4, 0.6], 0.0, [80, 50, 30]),
            ]),
        ]
    }
}
