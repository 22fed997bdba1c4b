//! Decoder sublayers, the full layer and the layer stack.

use groundaug_core::relations::{Activation, SpatialMlp, GLOBAL_DIM, PAIR_DIM};
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_backward, attention_forward, AttentionParams, AttnCache, Bias, BiasGrad, Weighting};
use crate::dense::{expect_shape, uniform, uniform_vec, LayerNorm, LnCache};
use crate::params::{slice, slice_mut, ParamSet};
use crate::{LsadError, Result};

/// How global spatial features enter the global attention logits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// A d-wide projection of the features is added to the queries.
    #[default]
    QueryBias,
    /// One scalar per query and head, broadcast over keys. Softmax-inert.
    ScalarBias,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerOrder {
    #[default]
    LangPairGlb,
    PairGlbLang,
    PairLangGlb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sublayer {
    Lang,
    Pair,
    Glb,
}

impl LayerOrder {
    pub fn sublayers(self) -> [Sublayer; 3] {
        use Sublayer::*;
        match self {
            LayerOrder::LangPairGlb => [Lang, Pair, Glb],
            LayerOrder::PairGlbLang => [Pair, Glb, Lang],
            LayerOrder::PairLangGlb => [Pair, Lang, Glb],
        }
    }
}

/// Forward numerics. `Linear` swaps softmax for uniform weights and drops
/// normalization and the FFN nonlinearity, making every output affine in
/// each individual scalar; used to validate the gradient harness itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Numerics {
    #[default]
    Standard,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub d: usize,
    pub heads: usize,
    /// Object candidates kept after top-K selection.
    pub k: usize,
    pub n_layers: usize,
    pub n_encoder_layers: usize,
    pub n_points: usize,
    pub n_box: usize,
    pub ffn_hidden: usize,
    pub bias_mode: BiasMode,
    pub layer_order: LayerOrder,
    pub spatial_activation: Activation,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            d: 288,
            heads: 8,
            k: 256,
            n_layers: 6,
            n_encoder_layers: 3,
            n_points: 1024,
            n_box: 133,
            ffn_hidden: 576,
            bias_mode: BiasMode::QueryBias,
            layer_order: LayerOrder::LangPairGlb,
            spatial_activation: Activation::Relu,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LsadError::Config(m));
        if self.heads == 0 || self.d == 0 || self.d % self.heads != 0 {
            return bad(format!("d = {} must be a positive multiple of heads = {}", self.d, self.heads));
        }
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1".into());
        }
        if self.k == 0 || self.k > self.n_points {
            return bad(format!("k = {} must be in 1..={}", self.k, self.n_points));
        }
        if self.ffn_hidden == 0 {
            return bad("ffn_hidden must be at least 1".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    fn w_s_cols(&self) -> usize {
        match self.bias_mode {
            BiasMode::QueryBias => self.d,
            BiasMode::ScalarBias => self.heads,
        }
    }
}

/// An attention block followed by residual and normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SublayerParams {
    pub attn: AttentionParams,
    pub norm: LayerNorm,
}

impl SublayerParams {
    pub fn zeros(d: usize, heads: usize, w_s_cols: Option<usize>) -> Self {
        Self {
            attn: AttentionParams::zeros(d, heads, w_s_cols),
            norm: LayerNorm::identity_affine(d),
        }
    }

    pub fn random(d: usize, heads: usize, w_s_cols: Option<usize>, rng: &mut impl Rng) -> Self {
        Self {
            attn: AttentionParams::random(d, heads, w_s_cols, rng),
            norm: LayerNorm {
                gamma: uniform_vec(rng, d, 1).mapv(|v| 1.0 + 0.5 * v),
                beta: uniform_vec(rng, d, 1).mapv(|v| 0.5 * v),
            },
        }
    }
}

impl ParamSet for SublayerParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.attn.tensors();
        v.extend(self.norm.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.attn.tensors_mut();
        v.extend(self.norm.tensors_mut());
        v
    }
}

/// `LN(x + relu(x W1 + b1) W2 + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub norm: LayerNorm,
}

impl FfnParams {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            w1: Array2::zeros((d, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, d)),
            b2: Array1::zeros(d),
            norm: LayerNorm::identity_affine(d),
        }
    }

    pub fn random(d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: uniform(rng, d, hidden, d),
            b1: uniform_vec(rng, hidden, d),
            w2: uniform(rng, hidden, d, hidden),
            b2: uniform_vec(rng, d, hidden),
            norm: LayerNorm {
                gamma: uniform_vec(rng, d, 1).mapv(|v| 1.0 + 0.5 * v),
                beta: uniform_vec(rng, d, 1).mapv(|v| 0.5 * v),
            },
        }
    }
}

impl ParamSet for FfnParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = vec![slice(&self.w1), slice(&self.b1), slice(&self.w2), slice(&self.b2)];
        v.extend(self.norm.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            slice_mut(&mut self.w1),
            slice_mut(&mut self.b1),
            slice_mut(&mut self.w2),
            slice_mut(&mut self.b2),
        ];
        v.extend(self.norm.tensors_mut());
        v
    }
}

/// Embeds raw relations into per-head pair logits and global features.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialEmbedding {
    pub pair_mlp: SpatialMlp,
    /// d x H projection of each embedded pair to per-head logits.
    pub pair_head_w: Array2<f64>,
    pub pair_head_b: Array1<f64>,
    pub global_mlp: SpatialMlp,
}

impl SpatialEmbedding {
    pub fn zeros(cfg: &DecoderConfig) -> Self {
        Self {
            pair_mlp: SpatialMlp::zeros(PAIR_DIM, cfg.d, cfg.spatial_activation),
            pair_head_w: Array2::zeros((cfg.d, cfg.heads)),
            pair_head_b: Array1::zeros(cfg.heads),
            global_mlp: SpatialMlp::zeros(GLOBAL_DIM, cfg.d, cfg.spatial_activation),
        }
    }

    pub fn random(cfg: &DecoderConfig, rng: &mut impl Rng) -> Self {
        Self {
            pair_mlp: SpatialMlp::random(PAIR_DIM, cfg.d, cfg.spatial_activation, rng),
            pair_head_w: uniform(rng, cfg.d, cfg.heads, cfg.d),
            pair_head_b: uniform_vec(rng, cfg.heads, cfg.d),
            global_mlp: SpatialMlp::random(GLOBAL_DIM, cfg.d, cfg.spatial_activation, rng),
        }
    }

    /// H x K x K logits from K x K x 5 relations, one query row at a time.
    pub fn pair_logits(&self, relations: ArrayView3<f64>) -> Result<Array3<f64>> {
        let (k, k2, c) = relations.dim();
        if k != k2 || c != PAIR_DIM {
            return Err(LsadError::Shape {
                what: "pairwise relations",
                expected: vec![k, k, PAIR_DIM],
                actual: vec![k, k2, c],
            });
        }
        let heads = self.pair_head_w.ncols();
        let mut out = Array3::zeros((heads, k, k));
        for i in 0..k {
            let embedded = self
                .pair_mlp
                .embed_rows(relations.index_axis(Axis(0), i))
                .map_err(|e| LsadError::Config(e.to_string()))?;
            let logits = embedded.dot(&self.pair_head_w) + &self.pair_head_b;
            out.slice_mut(s![.., i, ..]).assign(&logits.t());
        }
        Ok(out)
    }

    pub fn global_features(&self, relations: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.global_mlp
            .embed_rows(relations)
            .map_err(|e| LsadError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerParams {
    pub cross: SublayerParams,
    pub psa: SublayerParams,
    pub gsa: SublayerParams,
    pub ffn: FfnParams,
    pub spatial: SpatialEmbedding,
}

impl DecoderLayerParams {
    pub fn zeros(cfg: &DecoderConfig) -> Self {
        Self {
            cross: SublayerParams::zeros(cfg.d, cfg.heads, None),
            psa: SublayerParams::zeros(cfg.d, cfg.heads, None),
            gsa: SublayerParams::zeros(cfg.d, cfg.heads, Some(cfg.w_s_cols())),
            ffn: FfnParams::zeros(cfg.d, cfg.ffn_hidden),
            spatial: SpatialEmbedding::zeros(cfg),
        }
    }

    pub fn random(cfg: &DecoderConfig, rng: &mut impl Rng) -> Self {
        Self {
            cross: SublayerParams::random(cfg.d, cfg.heads, None, rng),
            psa: SublayerParams::random(cfg.d, cfg.heads, None, rng),
            gsa: SublayerParams::random(cfg.d, cfg.heads, Some(cfg.w_s_cols()), rng),
            ffn: FfnParams::random(cfg.d, cfg.ffn_hidden, rng),
            spatial: SpatialEmbedding::random(cfg, rng),
        }
    }
}

/// Context shared by the sublayers of one decoder layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerInputs<'a> {
    /// Text tokens, N_l x d.
    pub text: ArrayView2<'a, f64>,
    /// Scene visual tokens, N_p x d.
    pub visual: ArrayView2<'a, f64>,
    /// Per-head pair logits, H x K x K.
    pub pair_logits: ArrayView3<'a, f64>,
    /// Embedded global relations, K x d.
    pub global: ArrayView2<'a, f64>,
}

fn scale_for(kind: Sublayer, head_dim: usize) -> f64 {
    match kind {
        Sublayer::Lang => (head_dim as f64).sqrt(),
        Sublayer::Pair | Sublayer::Glb => (2.0 * head_dim as f64).sqrt(),
    }
}

fn gsa_bias<'a>(mode: BiasMode, global: ArrayView2<'a, f64>) -> Bias<'a> {
    match mode {
        BiasMode::QueryBias => Bias::QueryAdd(global),
        BiasMode::ScalarBias => Bias::QueryScalar(global),
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SubCache {
    kind: Sublayer,
    attn: AttnCache,
    ln: Option<LnCache>,
}

fn normalize(norm: &LayerNorm, z: Array2<f64>, numerics: Numerics) -> (Array2<f64>, Option<LnCache>) {
    match numerics {
        Numerics::Standard => {
            let (y, c) = norm.forward(z.view());
            (y, Some(c))
        }
        Numerics::Linear => (z, None),
    }
}

fn denormalize(norm: &LayerNorm, dy: ArrayView2<f64>, cache: &Option<LnCache>) -> (Array2<f64>, LayerNorm) {
    match cache {
        Some(c) => norm.backward(dy, c),
        None => (dy.to_owned(), LayerNorm { gamma: Array1::zeros(dy.ncols()), beta: Array1::zeros(dy.ncols()) }),
    }
}

pub(crate) fn sublayer_forward(
    kind: Sublayer,
    x: ArrayView2<f64>,
    inputs: &LayerInputs,
    p: &SublayerParams,
    mode: BiasMode,
    numerics: Numerics,
) -> Result<(Array2<f64>, SubCache)> {
    let scale = scale_for(kind, p.attn.head_dim().max(1));
    let weighting = match numerics {
        Numerics::Standard => Weighting::Softmax,
        Numerics::Linear => Weighting::Uniform,
    };
    let (keys, bias) = match kind {
        Sublayer::Lang => (inputs.text, Bias::None),
        Sublayer::Pair => (x, Bias::Logits(inputs.pair_logits)),
        Sublayer::Glb => (inputs.visual, gsa_bias(mode, inputs.global)),
    };
    let (a, attn) = attention_forward(x, keys, &bias, &p.attn, scale, weighting)?;
    let (y, ln) = normalize(&p.norm, &x + &a, numerics);
    Ok((y, SubCache { kind, attn, ln }))
}

/// Input gradients produced by a sublayer besides its residual stream.
#[derive(Debug, Clone)]
pub(crate) struct SubGrads {
    pub params: SublayerParams,
    pub d_x: Array2<f64>,
    pub d_keys: Option<Array2<f64>>,
    pub d_bias: BiasGrad,
}

pub(crate) fn sublayer_backward(
    dy: ArrayView2<f64>,
    cache: &SubCache,
    inputs: &LayerInputs,
    p: &SublayerParams,
    mode: BiasMode,
) -> SubGrads {
    let (dz, norm) = denormalize(&p.norm, dy, &cache.ln);
    let bias = match cache.kind {
        Sublayer::Lang => Bias::None,
        Sublayer::Pair => Bias::Logits(inputs.pair_logits),
        Sublayer::Glb => gsa_bias(mode, inputs.global),
    };
    let g = attention_backward(dz.view(), &cache.attn, &bias, &p.attn);
    let mut d_x = dz + &g.d_queries;
    let d_keys = if cache.kind == Sublayer::Pair {
        d_x += &g.d_keys;
        None
    } else {
        Some(g.d_keys)
    };
    SubGrads {
        params: SublayerParams { attn: g.params, norm },
        d_x,
        d_keys,
        d_bias: g.d_bias,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FfnCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
    relu: bool,
    ln: Option<LnCache>,
}

pub(crate) fn ffn_forward(x: ArrayView2<f64>, p: &FfnParams, numerics: Numerics) -> (Array2<f64>, FfnCache) {
    let pre = x.dot(&p.w1) + &p.b1;
    let hidden = match numerics {
        Numerics::Standard => pre.mapv(|v| v.max(0.0)),
        Numerics::Linear => pre.clone(),
    };
    let z = &x + &(hidden.dot(&p.w2) + &p.b2);
    let (y, ln) = normalize(&p.norm, z, numerics);
    (y, FfnCache { x: x.to_owned(), pre, hidden, relu: numerics == Numerics::Standard, ln })
}

pub(crate) fn ffn_backward(dy: ArrayView2<f64>, cache: &FfnCache, p: &FfnParams) -> (Array2<f64>, FfnParams) {
    let (dz, norm) = denormalize(&p.norm, dy, &cache.ln);
    let w2 = cache.hidden.t().dot(&dz);
    let b2 = dz.sum_axis(Axis(0));
    let mut d_hidden = dz.dot(&p.w2.t());
    if cache.relu {
        d_hidden.zip_mut_with(&cache.pre, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
    }
    let w1 = cache.x.t().dot(&d_hidden);
    let b1 = d_hidden.sum_axis(Axis(0));
    let dx = dz + d_hidden.dot(&p.w1.t());
    (dx, FfnParams { w1, b1, w2, b2, norm })
}

fn check_inputs(f_o: ArrayView2<f64>, inputs: &LayerInputs, d: usize, heads: usize) -> Result<()> {
    let k = f_o.nrows();
    expect_shape("object features", &f_o, &[k, d])?;
    expect_shape("text features", &inputs.text, &[inputs.text.nrows(), d])?;
    expect_shape("visual features", &inputs.visual, &[inputs.visual.nrows(), d])?;
    expect_shape("pair logits", &inputs.pair_logits, &[heads, k, k])?;
    expect_shape("global features", &inputs.global, &[k, d])
}

fn params_for(kind: Sublayer, p: &DecoderLayerParams) -> &SublayerParams {
    match kind {
        Sublayer::Lang => &p.cross,
        Sublayer::Pair => &p.psa,
        Sublayer::Glb => &p.gsa,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    subs: Vec<SubCache>,
    ffn: FfnCache,
}

impl LayerCache {
    /// Which FFN hidden units were active, in row-major order.
    pub(crate) fn active_units(&self) -> Vec<bool> {
        self.ffn.pre.iter().map(|&v| v > 0.0).collect()
    }
}

pub(crate) fn layer_forward(
    f_o: ArrayView2<f64>,
    inputs: &LayerInputs,
    p: &DecoderLayerParams,
    cfg: &DecoderConfig,
    numerics: Numerics,
) -> Result<(Array2<f64>, LayerCache)> {
    check_inputs(f_o, inputs, cfg.d, cfg.heads)?;
    let mut x = f_o.to_owned();
    let mut subs = Vec::with_capacity(3);
    for kind in cfg.layer_order.sublayers() {
        let (y, c) = sublayer_forward(kind, x.view(), inputs, params_for(kind, p), cfg.bias_mode, numerics)?;
        x = y;
        subs.push(c);
    }
    let (y, ffn) = ffn_forward(x.view(), &p.ffn, numerics);
    Ok((y, LayerCache { subs, ffn }))
}

/// Gradients of one decoder layer with respect to its attention and FFN
/// parameters and all of its inputs.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub cross: SublayerParams,
    pub psa: SublayerParams,
    pub gsa: SublayerParams,
    pub ffn: FfnParams,
    pub f_o: Array2<f64>,
    pub text: Array2<f64>,
    pub visual: Array2<f64>,
    pub pair_logits: Array3<f64>,
    pub global: Array2<f64>,
}

pub(crate) fn layer_backward(
    dy: ArrayView2<f64>,
    cache: &LayerCache,
    inputs: &LayerInputs,
    p: &DecoderLayerParams,
    cfg: &DecoderConfig,
) -> LayerGrads {
    let (mut dx, ffn) = ffn_backward(dy, &cache.ffn, &p.ffn);
    let mut grads = LayerGrads {
        cross: SublayerParams::zeros(cfg.d, cfg.heads, None),
        psa: SublayerParams::zeros(cfg.d, cfg.heads, None),
        gsa: SublayerParams::zeros(cfg.d, cfg.heads, Some(cfg.w_s_cols())),
        ffn,
        f_o: Array2::zeros((0, 0)),
        text: Array2::zeros(inputs.text.raw_dim()),
        visual: Array2::zeros(inputs.visual.raw_dim()),
        pair_logits: Array3::zeros(inputs.pair_logits.raw_dim()),
        global: Array2::zeros(inputs.global.raw_dim()),
    };
    for sub in cache.subs.iter().rev() {
        let g = sublayer_backward(dx.view(), sub, inputs, params_for(sub.kind, p), cfg.bias_mode);
        dx = g.d_x;
        match sub.kind {
            Sublayer::Lang => {
                grads.cross = g.params;
                grads.text = g.d_keys.expect("cross-attention has separate keys");
            }
            Sublayer::Pair => {
                grads.psa = g.params;
                if let BiasGrad::Logits(b) = g.d_bias {
                    grads.pair_logits = b;
                }
            }
            Sublayer::Glb => {
                grads.gsa = g.params;
                grads.visual = g.d_keys.expect("global attention has separate keys");
                if let BiasGrad::Features(f) = g.d_bias {
                    grads.global = f;
                }
            }
        }
    }
    grads.f_o = dx;
    grads
}

/// Text cross-attention sublayer: `LN(F_o + Attn(F_o, F_t))` at scale sqrt(d_h).
pub fn cross_attention_text(f_o: ArrayView2<f64>, f_t: ArrayView2<f64>, p: &SublayerParams) -> Result<Array2<f64>> {
    let empty3 = Array3::zeros((0, 0, 0));
    let empty2 = Array2::zeros((0, 0));
    let inputs = LayerInputs { text: f_t, visual: empty2.view(), pair_logits: empty3.view(), global: empty2.view() };
    Ok(sublayer_forward(Sublayer::Lang, f_o, &inputs, p, BiasMode::QueryBias, Numerics::Standard)?.0)
}

/// Pairwise spatial self-attention with per-head logit bias, scale sqrt(2 d_h).
pub fn psa(f_o: ArrayView2<f64>, pair_logits: ArrayView3<f64>, p: &SublayerParams) -> Result<Array2<f64>> {
    let empty = Array2::zeros((0, 0));
    let inputs = LayerInputs { text: empty.view(), visual: empty.view(), pair_logits, global: empty.view() };
    Ok(sublayer_forward(Sublayer::Pair, f_o, &inputs, p, BiasMode::QueryBias, Numerics::Standard)?.0)
}

/// Global spatial attention from objects to scene tokens, scale sqrt(2 d_h).
pub fn gsa(
    f_o: ArrayView2<f64>,
    f_v: ArrayView2<f64>,
    f_g: ArrayView2<f64>,
    p: &SublayerParams,
    mode: BiasMode,
) -> Result<Array2<f64>> {
    let empty2 = Array2::zeros((0, 0));
    let empty3 = Array3::zeros((0, 0, 0));
    let inputs = LayerInputs { text: empty2.view(), visual: f_v, pair_logits: empty3.view(), global: f_g };
    Ok(sublayer_forward(Sublayer::Glb, f_o, &inputs, p, mode, Numerics::Standard)?.0)
}

/// One decoder layer on already-embedded spatial inputs.
pub fn decoder_layer(
    f_o: ArrayView2<f64>,
    inputs: &LayerInputs,
    p: &DecoderLayerParams,
    cfg: &DecoderConfig,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    Ok(layer_forward(f_o, inputs, p, cfg, Numerics::Standard)?.0)
}

/// Runs every layer in turn; each layer embeds the raw relations with its
/// own spatial MLPs.
pub fn decoder_stack(
    f_o: ArrayView2<f64>,
    text: ArrayView2<f64>,
    visual: ArrayView2<f64>,
    pair_relations: ArrayView3<f64>,
    global_relations: ArrayView2<f64>,
    layers: &[DecoderLayerParams],
    cfg: &DecoderConfig,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    if layers.is_empty() {
        return Err(LsadError::Config("decoder stack needs at least one layer".into()));
    }
    let mut x = f_o.to_owned();
    for layer in layers {
        let pair_logits = layer.spatial.pair_logits(pair_relations)?;
        let global = layer.spatial.global_features(global_relations)?;
        let inputs = LayerInputs { text, visual, pair_logits: pair_logits.view(), global: global.view() };
        x = layer_forward(x.view(), &inputs, layer, cfg, Numerics::Standard)?.0;
    }
    Ok(x)
}
