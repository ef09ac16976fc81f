//! Deep-unfolding compressive sensing reconstruction.
//!
//! An image is sampled block-wise by a learnable measurement matrix and
//! recovered by `K` unfolded iterations, each of which runs a gradient step
//! on the data term, fuses it with features from the two previous
//! iterations through channel-wise cross attention, and denoises with a
//! feed-forward network. Everything is differentiable end to end through
//! the small tape-based engine in [`autodiff`].

pub mod autodiff;
pub mod error;
mod fastmath;
pub mod init;
pub mod io;
pub mod metrics;
pub mod model;
pub mod params;
pub mod real;
pub mod sampling;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use autodiff::{Conv2dSpec, Tape, Var};
pub use error::{Error, FieldError, Result};
pub use io::{Checkpoint, RunConfig};
pub use model::{ModelConfig, OctufModel};
pub use params::{Bound, ParamId, ParamStore};
pub use real::Real;
pub use sampling::{ratio_to_m, SamplingOperator};
pub use tensor::Tensor;
pub use train::{AdamConfig, AdamState, LrSchedule, PatchDataset, Trainer};
