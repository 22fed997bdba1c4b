//! Dense double-precision implementation of a language-spatial adaptive
//! decoder: text cross-attention, pairwise spatial attention, global spatial
//! attention, layer stacking, top-K candidate selection and a grounding head.
//!
//! Every operation has a hand-written backward pass so gradients can be
//! verified against finite differences ([`grad`]). The [`check`] module runs
//! the full property suite and produces a machine-readable report.

pub mod attention;
pub mod check;
pub mod dense;
pub mod grad;
pub mod head;
pub mod layer;
pub mod oracle;
pub mod params;

use thiserror::Error;

pub use attention::{multihead_attention, AttentionParams, Bias, Weighting};
pub use head::{encode_select_topk, grounding_head, GroundingHeadParams, GroundingOutput, ScoreWeights};
pub use layer::{
    cross_attention_text, decoder_layer, decoder_stack, gsa, psa, BiasMode, DecoderConfig, DecoderLayerParams,
    LayerInputs, LayerOrder, SublayerParams,
};

#[derive(Debug, Error, PartialEq)]
pub enum LsadError {
    #[error("{what}: expected shape {expected:?}, got {actual:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot select top {k} of {n} candidates")]
    TopK { k: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, LsadError>;
