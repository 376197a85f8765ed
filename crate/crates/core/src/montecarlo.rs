//! Replicated simulate-and-estimate studies.
//!
//! Replication `r` uses seed `base_seed + r`. Replications run in parallel
//! and are merged by index, so results do not depend on the thread count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::distribution::Innovation;
use crate::empirical::{default_x_grid, drift_slope, tau_grid, theorem1_residual, DEFAULT_TAU_BOUND, DEFAULT_TAU_POINTS, DEFAULT_X_POINTS};
use crate::error::{Error, Result};
use crate::estimator::{asymptotic_variance, lambda_alpha, local_objective_slope, m_estimate, SolverOptions};
use crate::ks::{ks_statistic, KsResult, MIN_KS_SAMPLE};
use crate::model::simulate_ma1;
use crate::score::{integral_g_dpsi, ScoreFunction};
use crate::stats::{mean, median, sample_variance};

/// Studies abort when more than this fraction of replications fail.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    /// Distribution of `sqrt(n) (alpha_hat - alpha)`.
    Normality,
    /// Uniform expansion of the weighted empirical process.
    EpConvergence,
    /// Normality across several `n` plus a trend test on `var(z)` against `1/n`.
    VarianceTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub alpha: f64,
    pub n_values: Vec<usize>,
    pub replications: usize,
    #[serde(default = "default_dist")]
    pub dist: String,
    #[serde(default = "default_psi")]
    pub psi: String,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    pub study_kind: StudyKind,
    /// Bound on `|tau|` for the process and slope diagnostics.
    #[serde(default = "default_tau_bound")]
    pub tau_bound: f64,
    #[serde(default = "default_tau_points")]
    pub tau_points: usize,
    #[serde(default = "default_x_points")]
    pub x_points: usize,
    /// Where the drift slope is measured.
    #[serde(default)]
    pub drift_x: f64,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn default_dist() -> String {
    "normal".into()
}
fn default_psi() -> String {
    "cdf_centered".into()
}
fn default_ci_level() -> f64 {
    0.95
}
fn default_tau_bound() -> f64 {
    DEFAULT_TAU_BOUND
}
fn default_tau_points() -> usize {
    DEFAULT_TAU_POINTS
}
fn default_x_points() -> usize {
    DEFAULT_X_POINTS
}

impl StudyConfig {
    pub fn new(alpha: f64, n_values: Vec<usize>, replications: usize, study_kind: StudyKind) -> Self {
        Self {
            alpha,
            n_values,
            replications,
            dist: default_dist(),
            psi: default_psi(),
            base_seed: 0,
            ci_level: default_ci_level(),
            study_kind,
            tau_bound: DEFAULT_TAU_BOUND,
            tau_points: DEFAULT_TAU_POINTS,
            x_points: DEFAULT_X_POINTS,
            drift_x: 0.0,
            solver: SolverOptions::default(),
        }
    }

    /// Checks the invariants and resolves the identifiers.
    pub fn resolve(&self) -> Result<(Innovation, ScoreFunction)> {
        if self.replications < 1 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        if self.n_values.is_empty() || self.n_values.iter().any(|&n| n < 10) {
            return Err(Error::InvalidParameter("every n must be at least 10".into()));
        }
        if !self.alpha.is_finite() || self.alpha.abs() >= 1.0 {
            return Err(Error::InvalidParameter(format!("alpha must satisfy |alpha| < 1, got {}", self.alpha)));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidParameter("ci_level must lie in (0, 1)".into()));
        }
        if self.tau_bound.is_nan() || self.tau_bound <= 0.0 || self.tau_points < 2 || self.x_points < 2 {
            return Err(Error::InvalidParameter("tau/x grids need a positive bound and two points".into()));
        }
        self.solver.validate()?;
        Ok((self.dist.parse()?, self.psi.parse()?))
    }
}

/// One successful replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub seed: u64,
    pub alpha_hat: f64,
    /// `sqrt(n) (alpha_hat - alpha)`.
    pub z: f64,
    pub status: String,
    pub ci_covers: Option<bool>,
    pub sup_residual: Option<f64>,
    pub drift_slope: Option<f64>,
    pub objective_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRecord {
    pub rep: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub count: usize,
    pub failures: usize,
    pub mean_z: f64,
    /// `None` with a single record.
    pub var_z: Option<f64>,
    /// `sigma_Psi^2(alpha)` at the true coefficient.
    pub sigma2_psi: f64,
    /// KS test of `z` against `N(0, sigma_Psi^2)`; `None` below eight records.
    pub ks: Option<KsResult>,
    pub coverage: Option<f64>,
    pub median_sup_residual: Option<f64>,
    pub median_drift_slope: Option<f64>,
    /// `-g(x) E eps^2 / (1 - alpha^2)` at the drift point.
    pub drift_target: Option<f64>,
    pub median_objective_slope: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyBlock {
    pub n: usize,
    pub records: Vec<ReplicationRecord>,
    pub failed: Vec<FailureRecord>,
    pub aggregates: Aggregates,
}

/// Weighted least-squares fit of `var(z)` on `1/n`. Under root-n scaling the
/// slope is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCheck {
    pub slope: f64,
    pub slope_se: f64,
    pub t_statistic: f64,
    /// `|t| < 3`.
    pub consistent_with_root_n: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub blocks: Vec<StudyBlock>,
    pub rate_check: Option<RateCheck>,
}

enum Outcome {
    Ok(ReplicationRecord),
    Failed(FailureRecord),
}

struct Context<'a> {
    config: &'a StudyConfig,
    dist: Innovation,
    psi: ScoreFunction,
    taus: Vec<f64>,
    x_grid: Vec<f64>,
}

fn replicate(ctx: &Context<'_>, n: usize, rep: usize) -> Result<Outcome> {
    let cfg = ctx.config;
    let seed = cfg.base_seed.wrapping_add(rep as u64);
    let sample = simulate_ma1(cfg.alpha, n, ctx.dist, seed)?;
    let est = match m_estimate(&sample.u, &ctx.psi, Some(&ctx.dist), &cfg.solver) {
        Ok(e) => e,
        Err(e @ Error::NoRootInWindow { .. }) => {
            return Ok(Outcome::Failed(FailureRecord { rep, seed, reason: e.to_string() }));
        }
        Err(e) => return Err(e),
    };
    let ci_covers = est
        .confidence_interval(cfg.ci_level)
        .map(|(lo, hi)| lo <= cfg.alpha && cfg.alpha <= hi);
    let (sup_residual, drift, objective_slope) = if cfg.study_kind == StudyKind::EpConvergence {
        let diag = theorem1_residual(&sample, &ctx.taus, &ctx.x_grid)?;
        let slope_taus: Vec<f64> = (-2..=2).map(f64::from).collect();
        (
            Some(diag.sup_residual),
            Some(drift_slope(&sample, cfg.drift_x, &slope_taus)?),
            Some(local_objective_slope(&sample.u, cfg.alpha, &ctx.psi, &slope_taus)?),
        )
    } else {
        (None, None, None)
    };
    Ok(Outcome::Ok(ReplicationRecord {
        rep,
        seed,
        alpha_hat: est.alpha_hat,
        z: (n as f64).sqrt() * (est.alpha_hat - cfg.alpha),
        status: est.solver_status.as_str().to_string(),
        ci_covers,
        sup_residual,
        drift_slope: drift,
        objective_slope,
    }))
}

fn median_of<F: Fn(&ReplicationRecord) -> Option<f64>>(records: &[ReplicationRecord], f: F) -> Option<f64> {
    let v: Vec<f64> = records.iter().filter_map(f).collect();
    median(&v)
}

fn aggregate(ctx: &Context<'_>, records: &[ReplicationRecord], failures: usize) -> Result<Aggregates> {
    let cfg = ctx.config;
    let sigma2_psi = asymptotic_variance(cfg.alpha, &ctx.dist, &ctx.psi)?;
    let zs: Vec<f64> = records.iter().map(|r| r.z).collect();
    let ks = if zs.len() >= MIN_KS_SAMPLE {
        let normal = Normal::new(0.0, sigma2_psi.sqrt())
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Some(ks_statistic(&zs, |x| normal.cdf(x))?)
    } else {
        None
    };
    let ep = cfg.study_kind == StudyKind::EpConvergence;
    let coef = ctx.dist.second_moment() / (1.0 - cfg.alpha * cfg.alpha);
    Ok(Aggregates {
        count: records.len(),
        failures,
        mean_z: if zs.is_empty() { f64::NAN } else { mean(&zs) },
        var_z: sample_variance(&zs),
        sigma2_psi,
        ks,
        coverage: coverage(records),
        median_sup_residual: median_of(records, |r| r.sup_residual),
        median_drift_slope: median_of(records, |r| r.drift_slope),
        drift_target: ep.then(|| -ctx.dist.density(cfg.drift_x) * coef),
        median_objective_slope: median_of(records, |r| r.objective_slope),
        lambda: if ep { Some(lambda_alpha(cfg.alpha, &ctx.dist, &ctx.psi)?) } else { None },
    })
}

/// Fraction of records whose interval contains the true coefficient.
pub fn coverage(records: &[ReplicationRecord]) -> Option<f64> {
    let flags: Vec<bool> = records.iter().filter_map(|r| r.ci_covers).collect();
    if flags.is_empty() {
        return None;
    }
    Some(flags.iter().filter(|c| **c).count() as f64 / flags.len() as f64)
}

/// Coverage of intervals `(lo, hi)` for the true coefficient.
pub fn coverage_of_intervals(intervals: &[(f64, f64)], alpha_true: f64) -> f64 {
    let hit = intervals.iter().filter(|(lo, hi)| *lo <= alpha_true && alpha_true <= *hi).count();
    hit as f64 / intervals.len() as f64
}

fn rate_check(blocks: &[StudyBlock]) -> Option<RateCheck> {
    // var(z) has sampling variance about 2 var^2 / (R - 1)
    let pts: Vec<(f64, f64, f64)> = blocks
        .iter()
        .filter_map(|b| {
            let v = b.aggregates.var_z?;
            let r = b.aggregates.count as f64;
            Some((1.0 / b.n as f64, v, 2.0 * v * v / (r - 1.0)))
        })
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let w: Vec<f64> = pts.iter().map(|p| 1.0 / p.2).collect();
    let sw: f64 = w.iter().sum();
    let mx = pts.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let my = pts.iter().zip(&w).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().zip(&w).map(|(p, w)| w * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let slope_se = (1.0 / sxx).sqrt();
    let t = slope / slope_se;
    Some(RateCheck {
        slope,
        slope_se,
        t_statistic: t,
        consistent_with_root_n: t.abs() < 3.0,
    })
}

/// Runs the study on the current rayon pool.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    let (dist, psi) = config.resolve()?;
    let ctx = Context {
        config,
        dist,
        psi,
        taus: tau_grid(config.tau_bound, config.tau_points),
        x_grid: default_x_grid(&dist, config.x_points),
    };
    let gd = integral_g_dpsi(&dist, &ctx.psi);
    if gd.vanishes {
        return Err(Error::DegenerateScore(gd.value));
    }
    let mut blocks = Vec::with_capacity(config.n_values.len());
    for &n in &config.n_values {
        let outcomes: Vec<Outcome> = (0..config.replications)
            .into_par_iter()
            .map(|rep| replicate(&ctx, n, rep))
            .collect::<Result<Vec<_>>>()?;
        let mut records = Vec::new();
        let mut failed = Vec::new();
        for o in outcomes {
            match o {
                Outcome::Ok(r) => records.push(r),
                Outcome::Failed(f) => failed.push(f),
            }
        }
        let rate = failed.len() as f64 / config.replications as f64;
        if rate > MAX_FAILURE_RATE {
            return Err(Error::TooManyFailures {
                failures: failed.len(),
                replications: config.replications,
                rate,
            });
        }
        let aggregates = aggregate(&ctx, &records, failed.len())?;
        blocks.push(StudyBlock { n, records, failed, aggregates });
    }
    let rate_check = match config.study_kind {
        StudyKind::VarianceTable => rate_check(&blocks),
        _ => None,
    };
    Ok(StudyResult { config: config.clone(), blocks, rate_check })
}

/// Runs the study on a dedicated pool of `threads` workers.
pub fn run_study_with_threads(config: &StudyConfig, threads: usize) -> Result<StudyResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    pool.install(|| run_study(config))
}

impl StudyBlock {
    /// Per-replication CSV: `rep,seed,alpha_hat,z,status`.
    pub fn write_records_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rep", "seed", "alpha_hat", "z", "status"])?;
        for r in &self.records {
            w.write_record([
                r.rep.to_string(),
                r.seed.to_string(),
                r.alpha_hat.to_string(),
                r.z.to_string(),
                r.status.clone(),
            ])?;
        }
        w.flush()
    }
}
