//! Hyper label model for programmatic weak supervision.
//!
//! A label matrix holds the votes of `m` labeling functions on `n` data
//! points (`+1`, `-1`, or `0` for abstain). This crate provides:
//!
//! - [`labelcore`]: the label-matrix data model, the better-than-random
//!   validity predicate and the majority-vote baseline.
//! - [`oracle`]: the optimal estimator `h*` (mean of all valid label
//!   vectors), exactly by enumeration or by Monte-Carlo rejection sampling.
//! - [`datagen`]: seeded synthetic training pairs and conditionally
//!   independent validation datasets.
//! - [`gradkernel`]: a small dense tensor kernel with a reverse-mode tape
//!   and an AMSGrad-capable Adam optimizer.
//! - [`hlmnet`]: the graph network that approximates `h*` in one forward pass.
//! - [`trainer`]: the on-the-fly pre-training loop with run selection.
//! - [`adapters`]: fine-tuning on revealed labels and one-vs-rest multi-class
//!   inference.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the CLI and file formats use.

pub mod adapters;
pub mod datagen;
pub mod error;
pub mod gradkernel;
pub mod hlmnet;
pub mod io;
pub mod labelcore;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use labelcore::{LabelMatrix, LabelMode, LabelVector, ProbVector};
pub use scalar::Scalar;

/// Dense tensor over `f64`.
pub type Tensor = gradkernel::Tensor<f64>;
/// Reverse-mode tape over `f64`.
pub type Tape = gradkernel::Tape<f64>;
/// Adam optimizer state over `f64`.
pub type AdamState = gradkernel::AdamState<f64>;
/// Hyper label model weights in double precision.
pub type ModelParams = hlmnet::ModelParams<f64>;
/// Single-precision model weights.
pub type ModelParams32 = hlmnet::ModelParams<f32>;
