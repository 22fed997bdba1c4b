//! Small dense helpers: shape checks, row softmax, layer normalization and
//! random initialization.

use ndarray::{Array1, Array2, ArrayView2, Axis, Dimension};
use rand::Rng;

use crate::{LsadError, Result};

pub const LN_EPS: f64 = 1e-5;

pub fn expect_shape<D: Dimension>(
    what: &'static str,
    a: &ndarray::ArrayBase<impl ndarray::Data<Elem = f64>, D>,
    expected: &[usize],
) -> Result<()> {
    if a.shape() != expected {
        return Err(LsadError::Shape {
            what,
            expected: expected.to_vec(),
            actual: a.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn expect_finite<D: Dimension>(what: &'static str, a: &ndarray::ArrayBase<impl ndarray::Data<Elem = f64>, D>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LsadError::NonFinite(what))
    }
}

/// In-place max-shifted softmax over each row.
pub fn softmax_rows(mut x: Array2<f64>) -> Array2<f64> {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    x
}

/// Gradient of row softmax: `A * (dA - rowsum(dA * A))`.
pub fn softmax_rows_backward(a: ArrayView2<f64>, da: ArrayView2<f64>) -> Array2<f64> {
    let mut out = &a * &da;
    for (mut row, a_row) in out.rows_mut().into_iter().zip(a.rows()) {
        let s = row.sum();
        row.zip_mut_with(&a_row, |o, &p| *o -= p * s);
    }
    out
}

/// Per-row normalization with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn identity_affine(d: usize) -> Self {
        Self {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, LnCache) {
        let d = x.ncols() as f64;
        let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
        let centered = &x - &mean.insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
        let y = &xhat * &self.gamma + &self.beta;
        (y, LnCache { xhat, inv_std })
    }

    /// Returns the input gradient and the gain/bias gradients.
    pub fn backward(&self, dy: ArrayView2<f64>, cache: &LnCache) -> (Array2<f64>, LayerNorm) {
        let d = dy.ncols() as f64;
        let grads = LayerNorm {
            gamma: (&dy * &cache.xhat).sum_axis(Axis(0)),
            beta: dy.sum_axis(Axis(0)),
        };
        let dxhat = &dy * &self.gamma;
        let sum = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
        let dot = (&dxhat * &cache.xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
        let inner = dxhat * d - &sum - &cache.xhat * &dot;
        let dx = inner * &(&cache.inv_std / d).insert_axis(Axis(1));
        (dx, grads)
    }
}

/// Uniform entries in `+-1/sqrt(fan_in)`.
pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-s..s))
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, fan_in: usize) -> Array1<f64> {
    uniform(rng, 1, n, fan_in).remove_axis(Axis(0))
}

/// Standard-normal-ish entries (sum of uniforms), for test inputs.
pub fn features(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>())
}
