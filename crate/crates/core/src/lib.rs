//! Instruction-conditioned image and video editing with a toy diffusion
//! transformer trained by flow matching on mixed image/video data.

pub mod ablation;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod curriculum;
pub mod error;
pub mod eval;
pub mod flow;
pub mod inference;
pub mod instruction;
pub mod model;
pub mod rng;
pub mod sequence;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
