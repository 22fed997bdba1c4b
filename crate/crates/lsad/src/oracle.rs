//! Reference implementations written as plain index loops, independent of
//! the vectorized code paths. Used by the test suite and the `check` report.

use ndarray::{Array2, Array3, ArrayView2};

use crate::attention::{AttentionParams, Bias};
use crate::dense::{LayerNorm, LN_EPS};

pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (n, m, p) = (a.nrows(), a.ncols(), b.ncols());
    assert_eq!(m, b.nrows(), "inner dimensions differ");
    let mut out = Array2::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            let mut acc = 0.0;
            for t in 0..m {
                acc += a[[i, t]] * b[[t, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Multi-head attention computed head by head, entry by entry.
pub fn attention(
    queries: ArrayView2<f64>,
    keys: ArrayView2<f64>,
    bias: &Bias,
    p: &AttentionParams,
    scale: f64,
) -> (Array2<f64>, Array3<f64>) {
    let d = p.dim();
    let dh = d / p.heads;
    let (kq, kk) = (queries.nrows(), keys.nrows());
    let mut q = matmul(queries, p.w_q.view());
    let k = matmul(keys, p.w_k.view());
    let v = matmul(keys, p.w_v.view());
    let mut per_query = Array2::zeros((kq, p.heads));
    match bias {
        Bias::QueryAdd(f) => q = q + matmul(*f, p.w_s.as_ref().unwrap().view()),
        Bias::QueryScalar(f) => per_query = matmul(*f, p.w_s.as_ref().unwrap().view()),
        _ => {}
    }
    let mut weights = Array3::zeros((p.heads, kq, kk));
    let mut concat = Array2::zeros((kq, d));
    for h in 0..p.heads {
        for i in 0..kq {
            let mut logits = vec![0.0; kk];
            for (j, l) in logits.iter_mut().enumerate() {
                let mut dot = 0.0;
                for c in h * dh..(h + 1) * dh {
                    dot += q[[i, c]] * k[[j, c]];
                }
                if let Bias::Logits(b) = bias {
                    dot += b[[h, i, j]];
                }
                *l = (dot + per_query[[i, h]]) / scale;
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for j in 0..kk {
                weights[[h, i, j]] = exps[j] / total;
            }
            for c in h * dh..(h + 1) * dh {
                let mut acc = 0.0;
                for j in 0..kk {
                    acc += weights[[h, i, j]] * v[[j, c]];
                }
                concat[[i, c]] = acc;
            }
        }
    }
    (matmul(concat.view(), p.w_o.view()), weights)
}

pub fn layer_norm(x: ArrayView2<f64>, ln: &LayerNorm) -> Array2<f64> {
    let d = x.ncols();
    let mut out = Array2::zeros(x.raw_dim());
    for i in 0..x.nrows() {
        let mean = (0..d).map(|c| x[[i, c]]).sum::<f64>() / d as f64;
        let var = (0..d).map(|c| (x[[i, c]] - mean).powi(2)).sum::<f64>() / d as f64;
        for c in 0..d {
            out[[i, c]] = ln.gamma[c] * (x[[i, c]] - mean) / (var + LN_EPS).sqrt() + ln.beta[c];
        }
    }
    out
}

/// Attention, residual and normalization.
pub fn sublayer(
    x: ArrayView2<f64>,
    keys: ArrayView2<f64>,
    bias: &Bias,
    p: &AttentionParams,
    norm: &LayerNorm,
    scale: f64,
) -> Array2<f64> {
    let (a, _) = attention(x, keys, bias, p, scale);
    layer_norm((&x + &a).view(), norm)
}
