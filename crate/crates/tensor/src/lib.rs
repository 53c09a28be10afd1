//! Minimal tensor library for training small transformers on the CPU.
//!
//! Values are dense row-major arrays ([`Tensor`]); differentiation goes
//! through a per-step [`Tape`]. Every rule is generic over [`Element`], so
//! the `f64` instantiation used by [`fd_check`] exercises exactly the code
//! that trains in `f32`.

mod element;
mod error;
pub mod gradcheck;
pub mod io;
mod optim;
mod params;
mod tape;
mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use gradcheck::{fd_check, fd_check_report, FdReport};
pub use optim::{adamw_step, clip_grad_norm, AdamW, OptimizerState};
pub use params::{ParamId, ParamStore};
pub use tape::{concat, Gradients, Tape, Var};
pub use tensor::Tensor;
