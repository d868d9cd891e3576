//! Large-time-step Monte Carlo simulation of scalar SDEs with learned
//! stochastic collocation.
//!
//! The solver replaces the classical small-step discretization of an SDE by
//! a per-step sampler: for every path and time step, `m` conditional
//! collocation points of the transition law are predicted (either by a
//! trained feed-forward network or, for the Ornstein-Uhlenbeck process, by
//! the closed-form transition law), a polynomial map from the standard
//! normal to the target distribution is built through those points by
//! barycentric Lagrange interpolation, and one normal draw per path and
//! step is pushed through that map. The per-step error is then governed by
//! the predictor, not by the step size.
//!
//! | Module          | Contents                                                           |
//! |-----------------|--------------------------------------------------------------------|
//! | [`models`]      | SDE abstraction, Ornstein-Uhlenbeck dynamics, exact transition law |
//! | [`simulate`]    | Per-path RNG streams, Euler-Maruyama, training-set generation      |
//! | [`collocation`] | Gauss-Hermite grids for N(0,1), empirical quantile extraction      |
//! | [`interp`]      | Barycentric Lagrange interpolation                                 |
//! | [`ann`]         | From-scratch MLP: Glorot init, softplus, Adam, persistence         |
//! | [`scheme`]      | The large-step sampler and its marginal-table (CDC) variant        |
//! | [`runtime`]     | Sequential / worker-pool execution backends, wall-clock timing     |
//! | [`harness`]     | Strong/weak error metrics, convergence studies, benchmarks, CLI    |
//!
//! All numeric kernels are generic over the scalar type via [`Real`];
//! concrete `f64` aliases are exported below.

// Domain guards are written as negated comparisons (`!(x > 0)`) so that NaN
// fails them; the positive forms clippy suggests would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ann;
pub mod collocation;
pub(crate) mod csvnum;
pub mod harness;
pub mod interp;
pub mod models;
pub mod num;
pub mod runtime;
pub mod scheme;
pub mod simulate;

pub use num::Real;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is outside its accepted range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Interpolation nodes contain a duplicate.
    #[error("degenerate interpolation nodes: nodes {i} and {j} coincide")]
    DegenerateNodes { i: usize, j: usize },

    /// A collocation predictor produced a non-finite value.
    #[error("prediction produced a non-finite value on path {path}")]
    Prediction { path: usize },

    /// A persisted model file failed validation.
    #[error("model file: field `{field}`: {reason}")]
    ModelFormat { field: &'static str, reason: String },

    /// A CSV input could not be parsed.
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },

    /// A worker-pool task failed; `group` is the partition group index.
    #[error("group {group}: {source}")]
    TaskFailed { group: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub type ModelParams64 = models::ModelParams<f64>;
pub type SdeModel64 = models::SdeModel<f64>;
pub type CollocationGrid64 = collocation::CollocationGrid<f64>;
pub type TrainingSet64 = simulate::TrainingSet<f64>;
pub type PathSet64 = simulate::PathSet<f64>;
pub type Mlp64 = ann::Mlp<f64>;
pub type Normalization64 = ann::Normalization<f64>;
pub type SchemeConfig64 = scheme::SchemeConfig<f64>;
