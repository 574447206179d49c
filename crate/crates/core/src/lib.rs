//! Pilot-assisted joint channel estimation and data recovery (JCD) for
//! mmWave massive MIMO uplinks.
//!
//! The crate is organised the way the processing chain runs:
//!
//! - [`channel`]: ULA steering vectors, the DFT angular transform, sparse
//!   multipath channel draws, pilot/data frames and noisy observations.
//! - [`coarse`]: pilot-only coarse estimation (LS, Neyman-Pearson denoising,
//!   path tracking) and the interference-graph user decoupling.
//! - [`bigamp`]: the EM-BiGAMP message passing engine with a Bernoulli-Gaussian
//!   channel prior and a Gaussian-codebook data prior.
//! - [`pipeline`]: the two-stage method plus the full-size and pilot-only
//!   baselines.
//! - [`replica`]: large-system MSE predictions (fixed-point order parameters,
//!   scalar channel MSEs, high-dimension approximation, operation counts).
//! - [`harness`]: config parsing, seeded Monte-Carlo sweeps, metrics and CSV.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bigamp;
pub mod channel;
pub mod coarse;
mod error;
pub mod harness;
pub mod linalg;
pub mod pipeline;
pub mod quadrature;
pub mod replica;

pub use error::{Error, Result};

/// Dense complex matrix used throughout the crate.
pub type CMat = nalgebra::DMatrix<num_complex::Complex64>;
/// Dense real matrix (variances, posterior weights).
pub type RMat = nalgebra::DMatrix<f64>;
