//! Word-level visual speech recognition toolkit.
//!
//! Turns short silent videos of a speaker's mouth into one of 18 German word
//! classes. The crate covers the whole pipeline on the CPU with no deep
//! learning framework: frame preprocessing into `[0,1]`-normalized
//! (channel, frame, height, width) tensors, three architectures (a 3-D
//! convolutional stack, a bidirectional-GRU stack, and their combination),
//! analytic forward/backward passes for every layer, Adam training with
//! best-validation-epoch checkpointing, and confusion-matrix evaluation.
//!
//! Every backward pass can be cross-checked against a 64-bit central
//! finite-difference oracle (see [`gradcheck`]), which is also exposed as a
//! CLI subcommand.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod video;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
