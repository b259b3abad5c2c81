//! adavid-core: adaptive-width video-language models at desk scale.
//!
//! One shared parameter set serves a family of transformer widths: each
//! layer can run at any allowed width `d <= D` by slicing the leading
//! rows/columns of its weights, with attention dropping whole heads. On
//! top of that substrate the crate provides a divided space-time video
//! encoder, a fixed-width text encoder, a hierarchical long-video
//! aggregator, a closed-form FLOPs model reconciled against an
//! instrumented counter, contrastive training on synthetic data, and an
//! evaluation harness.

pub mod adaptive;
pub mod agg;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod flops;
pub mod gradcheck;
pub mod model;
pub mod reference;
pub mod rng;
pub mod schedule;
pub mod selfcheck;
pub mod tensor;
pub mod text;
pub mod train;
pub mod video;

pub use error::{Error, Result};
