//! Global and pairwise spatial relation features between object centers,
//! and the two-layer MLP that embeds them.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scene::{AxisBox, Scene};

pub const GLOBAL_DIM: usize = 3;
pub const PAIR_DIM: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum RelationError {
    #[error("scene box has zero extent on axis {axis} but object centers vary along it")]
    DegenerateBox { axis: usize },
    #[error("expected relation width {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Per-object normalized center coordinates, K x 3, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalRelations {
    pub values: Array2<f64>,
    /// Number of coordinates that fell outside the box and were clamped.
    pub clamped: usize,
}

/// Per-pair `[distance, sin h, cos h, sin v, cos v]`, K x K x 5.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseRelations {
    pub values: Array3<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairwiseOptions {
    /// Replace the raw distance in meters by `ln(1 + d)`.
    pub log_distance: bool,
}

pub fn object_centers(scene: &Scene) -> Vec<Vec3> {
    scene.objects().iter().map(|o| o.bbox.center).collect()
}

pub fn global_relations(centers: &[Vec3], scene_box: &AxisBox) -> Result<GlobalRelations, RelationError> {
    let (lo, hi) = (scene_box.min(), scene_box.max());
    let mut values = Array2::zeros((centers.len(), GLOBAL_DIM));
    let mut clamped = 0;
    for axis in 0..GLOBAL_DIM {
        let extent = hi[axis] - lo[axis];
        if extent <= 0.0 {
            let first = centers.first().map(|c| c[axis]);
            if centers.iter().any(|c| Some(c[axis]) != first) {
                return Err(RelationError::DegenerateBox { axis });
            }
        }
        for (i, c) in centers.iter().enumerate() {
            if !c[axis].is_finite() {
                return Err(RelationError::NonFinite("object center"));
            }
            values[[i, axis]] = if extent > 0.0 {
                let t = (c[axis] - lo[axis]) / extent;
                if !(0.0..=1.0).contains(&t) {
                    clamped += 1;
                }
                t.clamp(0.0, 1.0)
            } else {
                0.5
            };
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} object center coordinates outside the scene box were clamped");
    }
    Ok(GlobalRelations { values, clamped })
}

/// Relation from `from` to `to`. Coincident and vertical pairs use
/// sin = 0, cos = 1 for the undefined angles.
pub fn pair_relation(from: Vec3, to: Vec3) -> [f64; PAIR_DIM] {
    let (dx, dy, dz) = (to[0] - from[0], to[1] - from[1], to[2] - from[2]);
    let horizontal = dx.hypot(dy);
    let distance = horizontal.hypot(dz);
    let (sin_h, cos_h) = if horizontal > 0.0 { (dy / horizontal, dx / horizontal) } else { (0.0, 1.0) };
    let (sin_v, cos_v) = if distance > 0.0 { (dz / distance, horizontal / distance) } else { (0.0, 1.0) };
    [distance, sin_h, cos_h, sin_v, cos_v]
}

pub fn pairwise_relations(centers: &[Vec3], opts: PairwiseOptions) -> PairwiseRelations {
    let k = centers.len();
    let mut values = Array3::zeros((k, k, PAIR_DIM));
    for i in 0..k {
        for j in 0..k {
            let mut r = if i == j { [0.0, 0.0, 1.0, 0.0, 1.0] } else { pair_relation(centers[i], centers[j]) };
            if opts.log_distance {
                r[0] = r[0].ln_1p();
            }
            for (c, v) in r.into_iter().enumerate() {
                values[[i, j, c]] = v;
            }
        }
    }
    PairwiseRelations { values }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// Derivative evaluated at the pre-activation value.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// `x -> act(x W1 + b1) W2 + b2`, weights stored input-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub activation: Activation,
}

impl SpatialMlp {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            w1: Array2::zeros((in_dim, out_dim)),
            b1: Array1::zeros(out_dim),
            w2: Array2::zeros((out_dim, out_dim)),
            b2: Array1::zeros(out_dim),
            activation,
        }
    }

    /// Uniform init in `+-1/sqrt(fan_in)`.
    pub fn random(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let mut fill = |rows: usize, cols: usize, fan_in: usize| {
            let s = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-s..s))
        };
        let w1 = fill(in_dim, out_dim, in_dim);
        let b1 = fill(1, out_dim, in_dim).remove_axis(Axis(0));
        let w2 = fill(out_dim, out_dim, out_dim);
        let b2 = fill(1, out_dim, out_dim).remove_axis(Axis(0));
        Self { w1, b1, w2, b2, activation }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.w2].iter().all(|w| w.iter().all(|v| v.is_finite()))
            && [&self.b1, &self.b2].iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Hidden pre-activations and outputs for each input row.
    pub fn forward_rows(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>), RelationError> {
        if x.ncols() != self.in_dim() {
            return Err(RelationError::DimensionMismatch { expected: self.in_dim(), actual: x.ncols() });
        }
        let pre = x.dot(&self.w1) + &self.b1;
        let act = self.activation;
        let hidden = pre.mapv(|v| act.apply(v));
        let out = hidden.dot(&self.w2) + &self.b2;
        Ok((pre, out))
    }

    pub fn embed_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, RelationError> {
        let out = self.forward_rows(x)?.1;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(RelationError::NonFinite("embedding"));
        }
        Ok(out)
    }
}

/// K x d embedding of global relations.
pub fn embed_global(rel: &GlobalRelations, mlp: &SpatialMlp) -> Result<Array2<f64>, RelationError> {
    mlp.embed_rows(rel.values.view())
}

/// K x K x d embedding of pairwise relations.
pub fn embed_pairwise(rel: &PairwiseRelations, mlp: &SpatialMlp) -> Result<Array3<f64>, RelationError> {
    let (k, k2, c) = rel.values.dim();
    let flat = rel
        .values
        .to_shape((k * k2, c))
        .expect("contiguous relation tensor");
    let out = mlp.embed_rows(flat.view())?;
    let d = out.ncols();
    Ok(out.into_shape_with_order((k, k2, d)).expect("row count preserved"))
}
