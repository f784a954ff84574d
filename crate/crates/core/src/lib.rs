//! Kernel-mean-embedding particle flows for Bayesian posterior sampling,
//! with Kalman-Bucy and ensemble Kalman filter baselines.
//!
//! The flow transports samples of a prior `π₀` to approximate samples of the
//! posterior `π₁ ∝ e^{-h} π₀` along the tempered curve `π_t ∝ e^{-th} π₀`.

pub mod baselines;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod flow;
pub mod kernels;
pub mod linalg;
pub mod lorenz63;
pub mod metrics;
pub mod models;
pub mod quadrature;
pub mod sampling;
pub mod special;

pub use ensemble::{ensemble_covariance, Ensemble};
pub use error::{Error, Result};
pub use exec::Exec;
pub use kernels::KernelSpec;
