//! Residual weighted empirical processes
//!
//! `u_n(x, theta) = n^-1 sum_k eps_k'(theta) I(eps_k(theta) <= x)` and its
//! counterpart `u~_n(x, alpha)` built on the true innovations, together with
//! a numerical check of their uniform local expansion in `theta`:
//!
//! `sqrt(n) [u_n(x, alpha + tau / sqrt(n)) - u~_n(x, alpha)] ~ -tau g(x) E eps^2 / (1 - alpha^2)`.

use std::io::Write;

use serde::Serialize;

use crate::distribution::Innovation;
use crate::error::{Error, Result};
use crate::model::TimeSeriesSample;
use crate::residuals::ResidualPath;
use crate::stats::ols_slope;

/// Default bound on `|tau|`.
pub const DEFAULT_TAU_BOUND: f64 = 2.0;
pub const DEFAULT_TAU_POINTS: usize = 21;
pub const DEFAULT_X_POINTS: usize = 201;

fn check_sorted(grid: &[f64]) -> Result<()> {
    if grid.windows(2).any(|w| w[0].partial_cmp(&w[1]).is_none_or(|o| o.is_gt())) {
        return Err(Error::UnsortedGrid);
    }
    Ok(())
}

/// `n^-1 sum_k w_k I(v_k <= x)` for every `x` of a sorted grid, by sorting the
/// values and sweeping prefix sums.
fn weighted_step(values: &[f64], weights: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    let mut next = 0;
    for &x in grid {
        while next < order.len() && values[order[next]] <= x {
            acc += weights[order[next]];
            next += 1;
        }
        out.push(acc / n);
    }
    out
}

/// `u_n(x, theta)` on a sorted grid.
pub fn weighted_empirical(u: &[f64], theta: f64, x_grid: &[f64]) -> Result<Vec<f64>> {
    check_sorted(x_grid)?;
    let path = ResidualPath::compute(u, theta)?;
    Ok(weighted_step(&path.eps, &path.deps, x_grid))
}

/// `u_n(x, theta)` split by the sign of the weights: returns the processes
/// built on the positive and negative parts, so `u_n = plus - minus`.
pub fn weighted_empirical_split(u: &[f64], theta: f64, x_grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_sorted(x_grid)?;
    let path = ResidualPath::compute(u, theta)?;
    let plus: Vec<f64> = path.deps.iter().map(|d| d.max(0.0)).collect();
    let minus: Vec<f64> = path.deps.iter().map(|d| (-d).max(0.0)).collect();
    Ok((
        weighted_step(&path.eps, &plus, x_grid),
        weighted_step(&path.eps, &minus, x_grid),
    ))
}

/// `u~_n(x, alpha)`: weights at the true coefficient, indicators on the true innovations.
pub fn weighted_empirical_true(sample: &TimeSeriesSample, x_grid: &[f64]) -> Result<Vec<f64>> {
    check_sorted(x_grid)?;
    let eps = sample.true_innovations()?;
    let alpha = sample.alpha_true.ok_or(Error::MissingInnovations)?;
    let path = ResidualPath::compute(&sample.u, alpha)?;
    Ok(weighted_step(eps, &path.deps, x_grid))
}

/// `tau` values equally spaced on `[-bound, bound]`.
pub fn tau_grid(bound: f64, points: usize) -> Vec<f64> {
    linspace(-bound, bound, points)
}

/// Equally spaced points between the 0.001 and 0.999 quantiles of `dist`.
pub fn default_x_grid(dist: &Innovation, points: usize) -> Vec<f64> {
    linspace(dist.quantile(0.001), dist.quantile(0.999), points)
}

/// Adds every jump location of the processes compared at `tau_grid`, so the
/// supremum over `x` is evaluated at the points where it can be attained.
pub fn with_jump_points(x_grid: &[f64], sample: &TimeSeriesSample, tau_grid: &[f64]) -> Result<Vec<f64>> {
    let alpha = sample.alpha_true.ok_or(Error::MissingInnovations)?;
    let root_n = (sample.len() as f64).sqrt();
    let mut out = x_grid.to_vec();
    out.extend_from_slice(sample.true_innovations()?);
    for t in tau_grid {
        out.extend(ResidualPath::compute(&sample.u, alpha + t / root_n)?.eps);
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

fn linspace(a: f64, b: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => (0..points)
            .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Scaled process difference, its predicted drift, and their gap over an `(tau, x)` grid.
/// Matrices are indexed `[tau][x]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EPDiagnostic {
    pub n: usize,
    pub alpha: f64,
    pub tau_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    /// `sqrt(n) [u_n(x, alpha + tau / sqrt(n)) - u~_n(x, alpha)]`.
    pub empirical: Vec<Vec<f64>>,
    /// `-tau g(x) E eps^2 / (1 - alpha^2)`.
    pub drift_term: Vec<Vec<f64>>,
    /// `|empirical - drift_term|`.
    pub residual_surface: Vec<Vec<f64>>,
    pub sup_residual: f64,
}

fn sample_truth(sample: &TimeSeriesSample) -> Result<(f64, Innovation)> {
    let alpha = sample.alpha_true.ok_or(Error::MissingInnovations)?;
    let dist = sample.distribution.ok_or_else(|| {
        Error::InvalidParameter("sample does not record its innovation distribution".into())
    })?;
    Ok((alpha, dist))
}

/// `sqrt(n) [u_n(x, alpha + tau / sqrt(n)) - u~_n(x, alpha)]` for each `tau`.
fn scaled_differences(sample: &TimeSeriesSample, alpha: f64, tau_grid: &[f64], x_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let root_n = (sample.len() as f64).sqrt();
    let truth = weighted_empirical_true(sample, x_grid)?;
    tau_grid
        .iter()
        .map(|t| {
            let shifted = weighted_empirical(&sample.u, alpha + t / root_n, x_grid)?;
            Ok(shifted.iter().zip(&truth).map(|(a, b)| root_n * (a - b)).collect())
        })
        .collect()
}

/// Measures how far the scaled process difference is from its predicted drift.
pub fn theorem1_residual(sample: &TimeSeriesSample, tau_grid: &[f64], x_grid: &[f64]) -> Result<EPDiagnostic> {
    check_sorted(x_grid)?;
    let (alpha, dist) = sample_truth(sample)?;
    let empirical = scaled_differences(sample, alpha, tau_grid, x_grid)?;
    let coef = dist.second_moment() / (1.0 - alpha * alpha);
    let drift_term: Vec<Vec<f64>> = tau_grid
        .iter()
        .map(|t| x_grid.iter().map(|x| -t * dist.density(*x) * coef).collect())
        .collect();
    let residual_surface: Vec<Vec<f64>> = empirical
        .iter()
        .zip(&drift_term)
        .map(|(e, d)| e.iter().zip(d).map(|(a, b)| (a - b).abs()).collect())
        .collect();
    let sup_residual = residual_surface
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(*v));
    Ok(EPDiagnostic {
        n: sample.len(),
        alpha,
        tau_grid: tau_grid.to_vec(),
        x_grid: x_grid.to_vec(),
        empirical,
        drift_term,
        residual_surface,
        sup_residual,
    })
}

/// Least-squares slope in `tau` of the scaled process difference at a single `x`.
pub fn drift_slope(sample: &TimeSeriesSample, x: f64, tau_grid: &[f64]) -> Result<f64> {
    let (alpha, _) = sample_truth(sample)?;
    let rows = scaled_differences(sample, alpha, tau_grid, &[x])?;
    let ys: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    Ok(ols_slope(tau_grid, &ys))
}

impl EPDiagnostic {
    /// Long-format CSV: `n,tau,x,empirical,drift,residual`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "tau", "x", "empirical", "drift", "residual"])?;
        for (i, t) in self.tau_grid.iter().enumerate() {
            for (j, x) in self.x_grid.iter().enumerate() {
                w.write_record([
                    self.n.to_string(),
                    t.to_string(),
                    x.to_string(),
                    self.empirical[i][j].to_string(),
                    self.drift_term[i][j].to_string(),
                    self.residual_surface[i][j].to_string(),
                ])?;
            }
        }
        w.flush()
    }
}
