//! Bayesian regression with a sum of Voronoi tessellations for the mean and
//! a product of Voronoi tessellations for the variance.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`); traces, I/O and diagnostics work in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_io;
pub mod diagnostics;
pub mod error;
pub mod matrix;
pub mod mean_ensemble;
pub mod priors;
pub mod sampler;
pub mod scalar;
pub mod tessellation;
pub mod trace;
pub mod variance_ensemble;

pub use data_io::{Dataset, Scaling};
pub use error::{Result, VortesError};
pub use matrix::Matrix;
pub use mean_ensemble::MeanEnsemble;
pub use priors::{Hyperparams, PriorParams, SigmaEstimate};
pub use sampler::{run_chains, run_mcmc, run_mcmc_with, Sampler, SamplerOptions, SamplerState};
pub use scalar::Real;
pub use tessellation::{CellId, Move, MoveKind, Role, Tessellation};
pub use trace::{Mode, Rows, Trace};
pub use variance_ensemble::VarianceEnsemble;

pub type Tessellation64 = Tessellation<f64>;
pub type Tessellation32 = Tessellation<f32>;
pub type MeanEnsemble64 = MeanEnsemble<f64>;
pub type MeanEnsemble32 = MeanEnsemble<f32>;
pub type VarianceEnsemble64 = VarianceEnsemble<f64>;
pub type VarianceEnsemble32 = VarianceEnsemble<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Matrix64 = Matrix<f64>;
