//! Inversion filter `eps_k(theta) = u_k + theta * eps_{k-1}(theta)`, `eps_0(theta) = 0`,
//! with its first and second derivatives in `theta`.
//!
//! Vectors are indexed from zero: element `k - 1` holds the value for time `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residuals and their `theta`-derivatives along one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPath {
    pub theta: f64,
    pub eps: Vec<f64>,
    pub deps: Vec<f64>,
    pub d2eps: Vec<f64>,
    /// Set when `|theta| >= 1`: the filter is no longer contractive.
    pub unstable: bool,
}

impl ResidualPath {
    /// Runs all three recursions in a single pass.
    pub fn compute(u: &[f64], theta: f64) -> Result<Self> {
        check(u, theta)?;
        let n = u.len();
        let mut eps = Vec::with_capacity(n);
        let mut deps = Vec::with_capacity(n);
        let mut d2eps = Vec::with_capacity(n);
        let (mut e, mut d, mut s) = (0.0, 0.0, 0.0);
        for &x in u {
            // order matters: each update reads the previous step's values
            s = 2.0 * d + theta * s;
            d = e + theta * d;
            e = x + theta * e;
            eps.push(e);
            deps.push(d);
            d2eps.push(s);
        }
        Ok(Self {
            theta,
            eps,
            deps,
            d2eps,
            unstable: theta.abs() >= 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }
}

fn check(u: &[f64], theta: f64) -> Result<()> {
    if u.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("theta must be finite, got {theta}")));
    }
    Ok(())
}

/// Residuals `eps_k(theta)`, `k = 1..n`.
pub fn residual_filter(u: &[f64], theta: f64) -> Result<Vec<f64>> {
    check(u, theta)?;
    let mut prev = 0.0;
    Ok(u.iter()
        .map(|&x| {
            prev = x + theta * prev;
            prev
        })
        .collect())
}

/// First derivatives `d eps_k / d theta`; the first element is zero.
pub fn residual_derivative(u: &[f64], theta: f64) -> Result<Vec<f64>> {
    Ok(ResidualPath::compute(u, theta)?.deps)
}

/// Second derivatives `d^2 eps_k / d theta^2`; the first two elements are zero.
pub fn residual_second_derivative(u: &[f64], theta: f64) -> Result<Vec<f64>> {
    Ok(ResidualPath::compute(u, theta)?.d2eps)
}
