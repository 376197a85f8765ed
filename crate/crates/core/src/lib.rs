//! M-estimation of the coefficient of a first-order moving-average model
//! with bounded-variation score functions, together with simulation-based
//! checks of the estimator's large-sample behaviour.
//!
//! The model is `u_i = eps_i - alpha * eps_{i-1}` with iid innovations.
//! Residuals are recovered by the inversion filter in [`residuals`]; the
//! estimator in [`estimator`] solves
//! `n^-1 sum_k eps_k'(theta) Psi(eps_k(theta)) = 0`.

pub mod cli;
pub mod distribution;
pub mod empirical;
pub mod error;
pub mod estimator;
pub mod kde;
pub mod ks;
pub mod model;
pub mod montecarlo;
pub mod quadrature;
pub mod residuals;
pub mod score;
pub mod stats;

pub use distribution::{Density, Innovation, Moment};
pub use error::{Error, Result};
pub use estimator::{m_estimate, EstimateResult, SolverOptions, SolverStatus};
pub use model::{simulate_ma1, TimeSeriesSample};
pub use residuals::ResidualPath;
pub use score::ScoreFunction;
