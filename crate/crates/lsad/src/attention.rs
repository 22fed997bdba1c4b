//! Multi-head attention with optional spatial bias terms.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;

use crate::dense::{expect_finite, expect_shape, softmax_rows, softmax_rows_backward, uniform};
use crate::params::{slice, slice_mut, ParamSet};
use crate::{LsadError, Result};

/// Projection weights, stored input-major (`x W`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    /// Spatial projection: d x d for query-add bias, d x H for per-query
    /// scalar bias, absent otherwise.
    pub w_s: Option<Array2<f64>>,
}

impl AttentionParams {
    pub fn zeros(d: usize, heads: usize, w_s_cols: Option<usize>) -> Self {
        Self {
            heads,
            w_q: Array2::zeros((d, d)),
            w_k: Array2::zeros((d, d)),
            w_v: Array2::zeros((d, d)),
            w_o: Array2::zeros((d, d)),
            w_s: w_s_cols.map(|c| Array2::zeros((d, c))),
        }
    }

    pub fn random(d: usize, heads: usize, w_s_cols: Option<usize>, rng: &mut impl Rng) -> Self {
        Self {
            heads,
            w_q: uniform(rng, d, d, d),
            w_k: uniform(rng, d, d, d),
            w_v: uniform(rng, d, d, d),
            w_o: uniform(rng, d, d, d),
            w_s: w_s_cols.map(|c| uniform(rng, d, c, d)),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.heads == 0 || d % self.heads != 0 {
            return Err(LsadError::Config(format!("model width {d} is not divisible by {} heads", self.heads)));
        }
        for (what, w) in [("W_Q", &self.w_q), ("W_K", &self.w_k), ("W_V", &self.w_v), ("W_O", &self.w_o)] {
            expect_shape(what, w, &[d, d])?;
            expect_finite(what, w)?;
        }
        if let Some(w) = &self.w_s {
            expect_finite("W_S", w)?;
        }
        Ok(())
    }
}

impl ParamSet for AttentionParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = vec![slice(&self.w_q), slice(&self.w_k), slice(&self.w_v), slice(&self.w_o)];
        if let Some(w) = &self.w_s {
            v.push(slice(w));
        }
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            slice_mut(&mut self.w_q),
            slice_mut(&mut self.w_k),
            slice_mut(&mut self.w_v),
            slice_mut(&mut self.w_o),
        ];
        if let Some(w) = &mut self.w_s {
            v.push(slice_mut(w));
        }
        v
    }
}

/// Additive terms injected into the attention logits.
#[derive(Debug, Clone, Copy)]
pub enum Bias<'a> {
    None,
    /// Per-head logit bias, H x Kq x Kk.
    Logits(ArrayView3<'a, f64>),
    /// Features F (Kq x d); `F W_S` is added to the queries before the
    /// key product.
    QueryAdd(ArrayView2<'a, f64>),
    /// Features F (Kq x d); `F W_S` gives one scalar per query and head,
    /// broadcast across keys.
    QueryScalar(ArrayView2<'a, f64>),
}

/// How logits become attention weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    #[default]
    Softmax,
    /// Every key gets weight 1/Kk; a linear diagnostic mode.
    Uniform,
}

#[derive(Debug, Clone)]
pub struct AttnCache {
    xq: Array2<f64>,
    xk: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    weights: Array3<f64>,
    concat: Array2<f64>,
    scale: f64,
    weighting: Weighting,
}

impl AttnCache {
    /// Attention weights, H x Kq x Kk.
    pub fn weights(&self) -> &Array3<f64> {
        &self.weights
    }
}

/// Gradients of one attention call.
#[derive(Debug, Clone)]
pub struct AttnGrads {
    pub params: AttentionParams,
    pub d_queries: Array2<f64>,
    pub d_keys: Array2<f64>,
    pub d_bias: BiasGrad,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BiasGrad {
    None,
    Logits(Array3<f64>),
    Features(Array2<f64>),
}

fn check_bias(bias: &Bias, p: &AttentionParams, kq: usize, kk: usize) -> Result<()> {
    let d = p.dim();
    match bias {
        Bias::None => Ok(()),
        Bias::Logits(b) => {
            expect_shape("logit bias", b, &[p.heads, kq, kk])?;
            expect_finite("logit bias", b)
        }
        Bias::QueryAdd(f) | Bias::QueryScalar(f) => {
            expect_shape("spatial features", f, &[kq, d])?;
            expect_finite("spatial features", f)?;
            let cols = if matches!(bias, Bias::QueryAdd(_)) { d } else { p.heads };
            match &p.w_s {
                Some(w) => expect_shape("W_S", w, &[d, cols]),
                None => Err(LsadError::Config("spatial bias requires W_S".into())),
            }
        }
    }
}

/// Forward pass. Per head: `weights = softmax((Q_h K_h^T + B_h) / scale)`,
/// output `concat_h(weights V_h) W_O`.
pub fn attention_forward(
    queries: ArrayView2<f64>,
    keys: ArrayView2<f64>,
    bias: &Bias,
    p: &AttentionParams,
    scale: f64,
    weighting: Weighting,
) -> Result<(Array2<f64>, AttnCache)> {
    p.validate()?;
    let d = p.dim();
    let (kq, kk) = (queries.nrows(), keys.nrows());
    expect_shape("queries", &queries, &[kq, d])?;
    expect_shape("keys", &keys, &[kk, d])?;
    expect_finite("queries", &queries)?;
    expect_finite("keys", &keys)?;
    if kk == 0 {
        return Err(LsadError::Config("attention needs at least one key".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(LsadError::Config(format!("attention scale {scale} must be positive")));
    }
    check_bias(bias, p, kq, kk)?;

    let mut q = queries.dot(&p.w_q);
    let k = keys.dot(&p.w_k);
    let v = keys.dot(&p.w_v);
    let mut scalar_bias = None;
    match bias {
        Bias::QueryAdd(f) => q += &f.dot(p.w_s.as_ref().expect("checked")),
        Bias::QueryScalar(f) => scalar_bias = Some(f.dot(p.w_s.as_ref().expect("checked"))),
        _ => {}
    }

    let dh = p.head_dim();
    let mut weights = Array3::zeros((p.heads, kq, kk));
    let mut concat = Array2::zeros((kq, d));
    for h in 0..p.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let a = match weighting {
            Weighting::Softmax => {
                let mut logits = q.slice(cols).dot(&k.slice(cols).t());
                if let Bias::Logits(b) = bias {
                    logits += &b.index_axis(Axis(0), h);
                }
                if let Some(c) = &scalar_bias {
                    logits += &c.column(h).insert_axis(Axis(1));
                }
                logits /= scale;
                softmax_rows(logits)
            }
            Weighting::Uniform => Array2::from_elem((kq, kk), 1.0 / kk as f64),
        };
        concat.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        weights.index_axis_mut(Axis(0), h).assign(&a);
    }
    let out = concat.dot(&p.w_o);
    let cache = AttnCache {
        xq: queries.to_owned(),
        xk: keys.to_owned(),
        q,
        k,
        v,
        weights,
        concat,
        scale,
        weighting,
    };
    Ok((out, cache))
}

pub fn attention_backward(d_out: ArrayView2<f64>, cache: &AttnCache, bias: &Bias, p: &AttentionParams) -> AttnGrads {
    let dh = p.head_dim();
    let (kq, kk) = (cache.xq.nrows(), cache.xk.nrows());
    let mut grads = AttentionParams::zeros(p.dim(), p.heads, p.w_s.as_ref().map(|w| w.ncols()));
    grads.w_o = cache.concat.t().dot(&d_out);
    let d_concat = d_out.dot(&p.w_o.t());

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    let mut d_logit_bias = Array3::zeros((p.heads, kq, kk));
    let mut d_scalar = Array2::zeros((kq, p.heads));
    for h in 0..p.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let a = cache.weights.index_axis(Axis(0), h);
        let d_head = d_concat.slice(cols);
        dv.slice_mut(cols).assign(&a.t().dot(&d_head));
        if cache.weighting == Weighting::Uniform {
            continue;
        }
        let da = d_head.dot(&cache.v.slice(cols).t());
        let dz = softmax_rows_backward(a, da.view()) / cache.scale;
        dq.slice_mut(cols).assign(&dz.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&dz.t().dot(&cache.q.slice(cols)));
        d_scalar.column_mut(h).assign(&dz.sum_axis(Axis(1)));
        d_logit_bias.index_axis_mut(Axis(0), h).assign(&dz);
    }

    grads.w_q = cache.xq.t().dot(&dq);
    grads.w_k = cache.xk.t().dot(&dk);
    grads.w_v = cache.xk.t().dot(&dv);
    let d_queries = dq.dot(&p.w_q.t());
    let d_keys = dk.dot(&p.w_k.t()) + dv.dot(&p.w_v.t());

    let d_bias = match bias {
        Bias::None => BiasGrad::None,
        Bias::Logits(_) => BiasGrad::Logits(d_logit_bias),
        Bias::QueryAdd(f) | Bias::QueryScalar(f) => {
            let w_s = p.w_s.as_ref().expect("checked in forward");
            let d_s = if matches!(bias, Bias::QueryAdd(_)) { dq } else { d_scalar };
            grads.w_s = Some(f.t().dot(&d_s));
            BiasGrad::Features(d_s.dot(&w_s.t()))
        }
    };
    AttnGrads {
        params: grads,
        d_queries,
        d_keys,
        d_bias,
    }
}

/// Attention output (before any residual) and the per-head weights.
pub fn multihead_attention(
    queries: ArrayView2<f64>,
    keys_values: ArrayView2<f64>,
    bias: &Bias,
    params: &AttentionParams,
    scale: f64,
) -> Result<(Array2<f64>, Array3<f64>)> {
    let (out, cache) = attention_forward(queries, keys_values, bias, params, scale, Weighting::Softmax)?;
    Ok((out, cache.weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::features;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_bad_inputs() {
        let p = AttentionParams::zeros(6, 4, None);
        let x = Array2::zeros((2, 6));
        assert!(matches!(
            attention_forward(x.view(), x.view(), &Bias::None, &p, 1.0, Weighting::Softmax),
            Err(LsadError::Config(_))
        ));
        let p = AttentionParams::zeros(6, 2, None);
        let mut bad = x.clone();
        bad[[0, 0]] = f64::NAN;
        assert_eq!(
            attention_forward(bad.view(), x.view(), &Bias::None, &p, 1.0, Weighting::Softmax).unwrap_err(),
            LsadError::NonFinite("queries")
        );
        assert!(attention_forward(x.view(), x.view(), &Bias::None, &p, 0.0, Weighting::Softmax).is_err());
        assert!(matches!(
            attention_forward(x.view(), x.view(), &Bias::QueryAdd(x.view()), &p, 1.0, Weighting::Softmax),
            Err(LsadError::Config(_))
        ));
    }

    #[test]
    fn single_key_returns_its_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = AttentionParams::random(8, 2, None, &mut rng);
        let q = features(&mut rng, 5, 8);
        let kv = features(&mut rng, 1, 8);
        let (out, w) = multihead_attention(q.view(), kv.view(), &Bias::None, &p, 2.0).unwrap();
        assert!(w.iter().all(|&a| a == 1.0));
        let want = kv.dot(&p.w_v).dot(&p.w_o);
        for row in out.rows() {
            for (a, b) in row.iter().zip(want.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
