//! Analytic-versus-finite-difference gradient verification.
//!
//! The probe loss is `sum(P * Y)` for a fixed random matrix `P`. A plain sum
//! of outputs is avoided because a normalized row has constant sum, which
//! makes most gradients vanish identically.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::BiasGrad;
use crate::dense::features;
use crate::layer::{
    layer_backward, layer_forward, sublayer_backward, sublayer_forward, BiasMode, DecoderConfig, DecoderLayerParams,
    LayerInputs, Numerics, Sublayer,
};
use crate::params::{slice, slice_mut, ParamSet};
use crate::{LsadError, Result};

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradOp {
    Cross,
    Psa,
    Gsa,
    Layer,
}

impl GradOp {
    pub const ALL: [GradOp; 4] = [GradOp::Cross, GradOp::Psa, GradOp::Gsa, GradOp::Layer];

    pub fn as_str(self) -> &'static str {
        match self {
            GradOp::Cross => "cross",
            GradOp::Psa => "psa",
            GradOp::Gsa => "gsa",
            GradOp::Layer => "layer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradDims {
    pub d: usize,
    pub heads: usize,
    pub k: usize,
    pub n_text: usize,
    pub n_points: usize,
    pub ffn_hidden: usize,
}

impl Default for GradDims {
    fn default() -> Self {
        Self { d: 8, heads: 2, k: 4, n_text: 3, n_points: 6, ffn_hidden: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub op: GradOp,
    pub scalars_checked: usize,
    /// Scalars whose perturbation flipped a ReLU unit; the difference
    /// quotient straddles a kink there and is not compared.
    pub scalars_skipped: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Parameters and inputs of one check, perturbed one scalar at a time.
#[derive(Clone)]
struct Bundle {
    op: GradOp,
    cfg: DecoderConfig,
    layer: DecoderLayerParams,
    f_o: Array2<f64>,
    text: Array2<f64>,
    visual: Array2<f64>,
    pair_logits: Array3<f64>,
    global: Array2<f64>,
    probe: Array2<f64>,
    numerics: Numerics,
}

impl Bundle {
    fn scalars_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = match self.op {
            GradOp::Cross => self.layer.cross.tensors_mut(),
            GradOp::Psa => self.layer.psa.tensors_mut(),
            GradOp::Gsa => self.layer.gsa.tensors_mut(),
            GradOp::Layer => {
                let l = &mut self.layer;
                let mut v = l.cross.tensors_mut();
                v.extend(l.psa.tensors_mut());
                v.extend(l.gsa.tensors_mut());
                v.extend(l.ffn.tensors_mut());
                v
            }
        };
        v.push(slice_mut(&mut self.f_o));
        match self.op {
            GradOp::Cross => v.push(slice_mut(&mut self.text)),
            GradOp::Psa => v.push(slice_mut(&mut self.pair_logits)),
            GradOp::Gsa => {
                v.push(slice_mut(&mut self.visual));
                v.push(slice_mut(&mut self.global));
            }
            GradOp::Layer => {
                v.push(slice_mut(&mut self.text));
                v.push(slice_mut(&mut self.visual));
                v.push(slice_mut(&mut self.pair_logits));
                v.push(slice_mut(&mut self.global));
            }
        }
        v
    }

    fn inputs(&self) -> LayerInputs<'_> {
        LayerInputs {
            text: self.text.view(),
            visual: self.visual.view(),
            pair_logits: self.pair_logits.view(),
            global: self.global.view(),
        }
    }

    fn sublayer(&self) -> Option<(Sublayer, &crate::layer::SublayerParams)> {
        match self.op {
            GradOp::Cross => Some((Sublayer::Lang, &self.layer.cross)),
            GradOp::Psa => Some((Sublayer::Pair, &self.layer.psa)),
            GradOp::Gsa => Some((Sublayer::Glb, &self.layer.gsa)),
            GradOp::Layer => None,
        }
    }

    fn output(&self) -> Result<Array2<f64>> {
        let inputs = self.inputs();
        match self.sublayer() {
            Some((kind, p)) => Ok(sublayer_forward(kind, self.f_o.view(), &inputs, p, self.cfg.bias_mode, self.numerics)?.0),
            None => Ok(layer_forward(self.f_o.view(), &inputs, &self.layer, &self.cfg, self.numerics)?.0),
        }
    }

    fn loss(&self) -> Result<f64> {
        Ok((&self.output()? * &self.probe).sum())
    }

    /// Activity pattern of the FFN units, when the op has a kink.
    fn active_units(&self) -> Result<Option<Vec<bool>>> {
        if self.op != GradOp::Layer || self.numerics != Numerics::Standard {
            return Ok(None);
        }
        let (_, cache) = layer_forward(self.f_o.view(), &self.inputs(), &self.layer, &self.cfg, self.numerics)?;
        Ok(Some(cache.active_units()))
    }

    /// Analytic gradient, flattened in `scalars_mut` order.
    fn gradient(&self) -> Result<Vec<f64>> {
        let inputs = self.inputs();
        let mut flat: Vec<f64> = Vec::new();
        match self.sublayer() {
            Some((kind, p)) => {
                let (_, cache) = sublayer_forward(kind, self.f_o.view(), &inputs, p, self.cfg.bias_mode, self.numerics)?;
                let g = sublayer_backward(self.probe.view(), &cache, &inputs, p, self.cfg.bias_mode);
                flat.extend(g.params.flatten());
                flat.extend(slice(&g.d_x));
                if let Some(dk) = &g.d_keys {
                    flat.extend(slice(dk));
                }
                match &g.d_bias {
                    BiasGrad::Logits(b) => flat.extend(slice(b)),
                    BiasGrad::Features(f) => flat.extend(slice(f)),
                    BiasGrad::None => {}
                }
            }
            None => {
                let (_, cache) = layer_forward(self.f_o.view(), &inputs, &self.layer, &self.cfg, self.numerics)?;
                let g = layer_backward(self.probe.view(), &cache, &inputs, &self.layer, &self.cfg);
                for part in [g.cross.flatten(), g.psa.flatten(), g.gsa.flatten(), g.ffn.flatten()] {
                    flat.extend(part);
                }
                for t in [slice(&g.f_o), slice(&g.text), slice(&g.visual), slice(&g.pair_logits), slice(&g.global)] {
                    flat.extend(t);
                }
            }
        }
        Ok(flat)
    }
}

fn bundle(op: GradOp, dims: GradDims, seed: u64, numerics: Numerics, bias_mode: BiasMode) -> Result<Bundle> {
    let cfg = DecoderConfig {
        d: dims.d,
        heads: dims.heads,
        k: dims.k,
        n_layers: 1,
        n_points: dims.n_points.max(dims.k),
        ffn_hidden: dims.ffn_hidden,
        bias_mode,
        ..DecoderConfig::default()
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = DecoderLayerParams::random(&cfg, &mut rng);
    let f_o = features(&mut rng, dims.k, dims.d);
    let text = features(&mut rng, dims.n_text, dims.d);
    let visual = features(&mut rng, dims.n_points, dims.d);
    let pair_logits = features(&mut rng, dims.heads * dims.k, dims.k)
        .into_shape_with_order((dims.heads, dims.k, dims.k))
        .expect("sizes agree");
    let global = features(&mut rng, dims.k, dims.d);
    let probe = features(&mut rng, dims.k, dims.d);
    Ok(Bundle { op, cfg, layer, f_o, text, visual, pair_logits, global, probe, numerics })
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares every analytic parameter and input gradient of `op` against a
/// central difference with step `eps`.
pub fn gradient_check(op: GradOp, dims: GradDims, seed: u64, eps: f64, numerics: Numerics) -> Result<GradReport> {
    gradient_check_with_mode(op, dims, seed, eps, numerics, BiasMode::QueryBias)
}

pub fn gradient_check_with_mode(
    op: GradOp,
    dims: GradDims,
    seed: u64,
    eps: f64,
    numerics: Numerics,
    bias_mode: BiasMode,
) -> Result<GradReport> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(LsadError::Config(format!("finite-difference step {eps} must be positive")));
    }
    let mut base = bundle(op, dims, seed, numerics, bias_mode)?;
    let analytic = base.gradient()?;
    let n: usize = base.scalars_mut().iter().map(|t| t.len()).sum();
    if n != analytic.len() {
        return Err(LsadError::Config(format!("gradient layout mismatch: {} scalars, {} gradients", n, analytic.len())));
    }
    let pattern = base.active_units()?;
    let mut report = GradReport { op, scalars_checked: 0, scalars_skipped: 0, max_rel_error: 0.0, max_abs_error: 0.0 };
    for (idx, &a) in analytic.iter().enumerate() {
        let perturbed = |delta: f64| -> Result<(f64, Option<Vec<bool>>)> {
            let mut b = base.clone();
            *scalar_at(&mut b, idx) += delta;
            Ok((b.loss()?, b.active_units()?))
        };
        let (up, up_units) = perturbed(eps)?;
        let (down, down_units) = perturbed(-eps)?;
        if up_units != pattern || down_units != pattern {
            report.scalars_skipped += 1;
            continue;
        }
        report.scalars_checked += 1;
        let numeric = (up - down) / (2.0 * eps);
        report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
    }
    Ok(report)
}

fn scalar_at(b: &mut Bundle, mut idx: usize) -> &mut f64 {
    for t in b.scalars_mut() {
        if idx < t.len() {
            return &mut t[idx];
        }
        idx -= t.len();
    }
    panic!("scalar index out of range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_step() {
        assert!(gradient_check(GradOp::Psa, GradDims::default(), 0, 0.0, Numerics::Standard).is_err());
    }
}
