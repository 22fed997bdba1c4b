//! Object-insertion data augmentation for 3D visual grounding.
//!
//! The crate covers the data side of the pipeline: annotated point-cloud
//! scenes, collision-free floor insertion, multi-level point-splat
//! rendering, caption generation with offline fallbacks, and the spatial
//! relation features consumed by the decoder.

pub mod captioning;
pub mod client;
pub mod geometry;
pub mod insertion;
pub mod level;
pub mod metrics;
pub mod relations;
pub mod rendering;
pub mod scene;
pub mod tensor_io;
