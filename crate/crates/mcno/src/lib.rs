//! Monte Carlo-type neural operator for 1D PDE benchmarks.
//!
//! The crate bundles everything needed to reproduce the workflow end to end:
//!
//! - [`tensor`] — dense f64 tensors with a tape-based reverse-mode autodiff
//!   engine over the closed op set the model needs, plus finite-difference
//!   gradient checking;
//! - [`spectral`] — radix-2 FFT, Gaussian-random-field initial conditions,
//!   and pseudo-spectral solvers (split-step viscous Burgers, ETDRK4 KdV)
//!   that generate the benchmark datasets;
//! - [`model`] — the operator itself: lifting, iterated Monte Carlo kernel
//!   layers with one-time uniform grid sampling, projection, and
//!   cross-resolution evaluation through periodic interpolation;
//! - [`train`] — Adam, the halving learning-rate schedule, the training
//!   loop, and evaluation;
//! - [`bound`] — empirical verification of the estimator's bias and
//!   high-probability deviation bounds against analytic kernels;
//! - [`io`] — bit-exact binary formats for datasets and checkpoints,
//!   metrics CSV, and validated JSON configs;
//! - [`cli`] — the `mcno` binary's subcommands.
//!
//! Start with the `examples/` directory: each example is a runnable tour of
//! one capability (`cargo run --release --example train_burgers`, ...).

pub mod bound;
pub mod cli;
pub mod error;
pub mod io;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Tape, Tensor};
