//! Matrix-aware first-order optimizers and a deterministic benchmark harness.
//!
//! The crate centers on two optimizers that replace the raw gradient step with
//! an *orthogonalized* momentum direction:
//!
//! * **Muon** — heavy-ball momentum followed by `Orth(M_t)` and a constant
//!   stepsize.
//! * **AdaGO** — the same orthogonalized momentum, but with an AdaGrad-Norm
//!   style adaptive stepsize: a scalar accumulator grows by the clamped
//!   squared gradient norm `min{‖G_t‖², γ²}` and the stepsize is
//!   `max{ε, η·min{‖G_t‖, γ}/v_t}`.
//!
//! Everything needed to study these at desk scale ships alongside:
//!
//! * [`linalg`] — a small dense-matrix kernel with a one-sided Jacobi SVD,
//!   power-iteration spectral norm, and exact / Newton–Schulz
//!   orthogonalization.
//! * [`optim`] — the optimizer steps (GD, OGD, Adam, AdaGrad-Norm, Muon,
//!   AdaGO) plus a hybrid router that sends matrix parameters to a matrix
//!   rule and vectors/scalars to Adam.
//! * [`models`] — linear and two-layer GeLU MLP models with hand-written
//!   backprop and a finite-difference gradient oracle.
//! * [`data`] — seeded synthetic datasets (Gaussian random fields via random
//!   Fourier features, linear teacher, Gaussian blobs) and minibatch
//!   schedules.
//! * [`diagnostics`] — checks for the quantities the convergence analysis is
//!   built from: log-sum bounds, descent-lemma probes, contraction factors,
//!   rate-slope fits, and gradient-noise estimates.
//! * [`harness`] — experiment configs, deterministic runners, grid search,
//!   schedule presets, CSV/JSON telemetry, and SVG plots.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Matrix;
