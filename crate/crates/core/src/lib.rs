//! Bayesian CP tensor factorization with high-dimensional sparse side
//! information.
//!
//! The model factorizes a sparsely observed tensor as a sum of D rank-one
//! terms. Any mode may carry a sparse feature matrix whose link matrix shifts
//! the prior mean of that mode's latent vectors; the link matrix is sampled by
//! solving ridge-type normal equations with injected noise, using
//! matrix-free conjugate gradient so the feature dimension can reach millions.
//!
//! Precision-matrix convention: every `lambda` / `Λ` here is an inverse
//! covariance.

pub mod analysis;
pub mod cg;
pub mod dense;
pub mod error;
pub mod io;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod sparse;
mod stats;

pub use cg::{cg_solve, cg_solve_multi, CgSettings, LinearOperator};
pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use model::{
    latent_conditional, predict_entry, sample_alpha, sample_lambda_beta, sample_mode_hyperparams,
    GaussianConditional, HyperPriorConfig, LambdaBetaMode, ModeData, ModeState, ObservationSet,
    SamplerState,
};
pub use sampler::{
    gibbs_sweep, initial_state, run_sampler, sample_link_matrix, PosteriorSummary, SamplerConfig,
};
pub use sparse::{apply_k, spmv, spmv_t, RidgeGramOperator, SparseMatrix};
pub use stats::sample_gamma;
