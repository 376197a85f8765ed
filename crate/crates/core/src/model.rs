//! Stationary MA(1) simulation: `u_i = eps_i - alpha * eps_{i-1}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::Innovation;
use crate::error::{Error, Result};

/// Deterministic generator for a 64-bit seed. Replication `r` of a study
/// draws from `rng_for_seed(base_seed + r)`.
pub fn rng_for_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An observed series, optionally with the innovations that generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSample {
    /// Observations `u_1..u_n`.
    pub u: Vec<f64>,
    /// `eps_0..eps_n` when simulated.
    pub innovations: Option<Vec<f64>>,
    pub alpha_true: Option<f64>,
    pub seed: Option<u64>,
    pub distribution: Option<Innovation>,
}

impl TimeSeriesSample {
    /// Wraps an external series with no ground truth.
    pub fn observed(u: Vec<f64>) -> Self {
        Self {
            u,
            innovations: None,
            alpha_true: None,
            seed: None,
            distribution: None,
        }
    }

    /// Builds the series from explicit innovations `eps_0..eps_n`.
    pub fn from_innovations(alpha: f64, innovations: Vec<f64>) -> Result<Self> {
        check_alpha(alpha)?;
        if innovations.len() < 2 {
            return Err(Error::InvalidParameter(
                "need eps_0 and at least one further innovation".into(),
            ));
        }
        let u = innovations.windows(2).map(|w| w[1] - alpha * w[0]).collect();
        Ok(Self {
            u,
            innovations: Some(innovations),
            alpha_true: Some(alpha),
            seed: None,
            distribution: None,
        })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// True innovations `eps_1..eps_n` aligned with `u`.
    pub fn true_innovations(&self) -> Result<&[f64]> {
        self.innovations
            .as_deref()
            .map(|e| &e[1..])
            .ok_or(Error::MissingInnovations)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "alpha must satisfy |alpha| < 1, got {alpha}"
        )));
    }
    Ok(())
}

/// Simulates `n` observations of a stationary MA(1) series.
///
/// One pre-sample innovation `eps_0` is drawn, so the path is exactly
/// stationary without burn-in.
pub fn simulate_ma1(alpha: f64, n: usize, dist: Innovation, seed: u64) -> Result<TimeSeriesSample> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let mut rng = rng_for_seed(seed);
    let eps: Vec<f64> = (0..=n).map(|_| dist.sample(&mut rng)).collect();
    let mut sample = TimeSeriesSample::from_innovations(alpha, eps)?;
    sample.seed = Some(seed);
    sample.distribution = Some(dist);
    Ok(sample)
}

/// Lag-one autocorrelation `-alpha / (1 + alpha^2)` of the MA(1) model.
pub fn theoretical_lag1_autocorr(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(-alpha / (1.0 + alpha * alpha))
}

/// Sample lag-one autocorrelation about the sample mean.
pub fn sample_lag1_autocorr(u: &[f64]) -> f64 {
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    let c0: f64 = u.iter().map(|x| (x - mean) * (x - mean)).sum();
    if c0 == 0.0 {
        return 0.0;
    }
    let c1: f64 = u.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    c1 / c0
}
