//! M-estimation of the MA(1) coefficient.
//!
//! The estimate is a root of `l_n(theta) = n^-1 sum_k eps_k'(theta) Psi(eps_k(theta))`
//! located by a grid scan for sign changes around a method-of-moments pilot,
//! refined by bisection.

use std::collections::HashMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::distribution::Innovation;
use crate::error::{Error, Result};
use crate::kde::GaussianKde;
use crate::model::{sample_lag1_autocorr, TimeSeriesSample};
use crate::residuals::ResidualPath;
use crate::score::{
    check_theorem2_conditions, e_psi_squared, integral_g_dpsi, ScoreFunction, VANISHING_INTEGRAL,
};
use crate::stats::{ols_slope, sample_variance};

/// Minimum series length for the pilot and the estimator.
pub const MIN_LENGTH: usize = 10;

fn objective_from_path(path: &ResidualPath, psi: &ScoreFunction) -> f64 {
    let n = path.len() as f64;
    path.deps
        .iter()
        .zip(&path.eps)
        .map(|(d, e)| d * psi.eval(*e))
        .sum::<f64>()
        / n
}

/// `l_n(theta)`.
pub fn objective_ln(u: &[f64], theta: f64, psi: &ScoreFunction) -> Result<f64> {
    Ok(objective_from_path(&ResidualPath::compute(u, theta)?, psi))
}

/// `l~_n(alpha)`: derivative weights at the true coefficient, score of the true innovations.
pub fn objective_tilde(sample: &TimeSeriesSample, psi: &ScoreFunction) -> Result<f64> {
    let alpha = sample.alpha_true.ok_or(Error::MissingInnovations)?;
    let eps = sample.true_innovations()?;
    let path = ResidualPath::compute(&sample.u, alpha)?;
    Ok(path.deps.iter().zip(eps).map(|(d, e)| d * psi.eval(*e)).sum::<f64>() / eps.len() as f64)
}

/// Inverts `r1 = -theta / (1 + theta^2)` for the invertible root.
pub fn pilot_from_autocorr(r1: f64) -> f64 {
    let r = r1.clamp(-0.499, 0.499);
    if r.abs() < 1e-12 {
        return 0.0;
    }
    let theta = (-1.0 + (1.0 - 4.0 * r * r).sqrt()) / (2.0 * r);
    theta.clamp(-0.99, 0.99)
}

/// Method-of-moments start value from the lag-one sample autocorrelation.
pub fn pilot_estimate(u: &[f64]) -> Result<f64> {
    if u.len() < MIN_LENGTH {
        return Err(Error::TooShort { required: MIN_LENGTH, actual: u.len() });
    }
    Ok(pilot_from_autocorr(sample_lag1_autocorr(u)))
}

/// Tuning of the root search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Initial half-width of the scan window, in units of `n^-1/2`.
    pub half_width_scale: f64,
    /// Grid step, in units of `n^-1/2`.
    pub grid_step_scale: f64,
    pub min_grid_step: f64,
    /// The scan never leaves `[-scan_bound, scan_bound]`.
    pub scan_bound: f64,
    /// Bisection stops once the bracket is shorter than this.
    pub theta_tol: f64,
    /// Relative tolerance on `|l_n|` at the root, scaled by `1 + max |eps'|`.
    pub objective_tol: f64,
    pub ci_level: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            half_width_scale: 5.0,
            grid_step_scale: 0.5,
            min_grid_step: 1e-4,
            scan_bound: 0.999,
            theta_tol: 1e-8,
            objective_tol: 1e-6,
            ci_level: 0.95,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.half_width_scale > 0.0
            && self.grid_step_scale > 0.0
            && self.min_grid_step > 0.0
            && self.scan_bound > 0.0
            && self.scan_bound < 1.0
            && self.theta_tol > 0.0
            && self.objective_tol > 0.0
            && self.ci_level > 0.0
            && self.ci_level < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid solver options {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    /// Bisection bracket below tolerance and `|l_n|` below the objective tolerance.
    Converged,
    /// Located the point where a discontinuous objective changes sign.
    SignChangeCrossing,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::Converged => "converged",
            SolverStatus::SignChangeCrossing => "sign_change_crossing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    /// Closed-form functionals of the known innovation law.
    Population,
    /// Sample moments of the residuals and a kernel density estimate.
    PlugIn,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub alpha_hat: f64,
    pub pilot: f64,
    /// Grid cell in which the sign change was found.
    pub bracket: (f64, f64),
    pub objective_at_root: f64,
    pub sigma2_psi: Option<f64>,
    pub variance_source: VarianceSource,
    pub ci: Option<(f64, f64)>,
    pub ci_level: f64,
    pub n: usize,
    pub solver_status: SolverStatus,
    /// Number of sign changes in the final scan window.
    pub sign_changes: usize,
    pub objective_evaluations: usize,
    pub condition_warnings: Vec<String>,
}

struct Objective<'a> {
    u: &'a [f64],
    psi: &'a ScoreFunction,
    calls: usize,
}

impl Objective<'_> {
    fn eval(&mut self, theta: f64) -> f64 {
        self.calls += 1;
        let path = ResidualPath::compute(self.u, theta).expect("length checked by caller");
        objective_from_path(&path, self.psi)
    }
}

enum Located {
    /// `l_n` changes strictly from `fa` to `fb` across `(a, b)`.
    Cell { a: f64, fa: f64, b: f64 },
    /// `l_n` vanishes exactly at a grid point.
    GridZero { x: f64, bracket: (f64, f64) },
}

/// Expanding-window grid scan for the sign change nearest the pilot.
fn locate_sign_change(
    f: &mut Objective<'_>,
    pilot: f64,
    n: usize,
    opts: &SolverOptions,
) -> Result<(Located, usize)> {
    let root_n = (n as f64).sqrt();
    let bound = opts.scan_bound;
    // the window is centred inside the scan range even if the pilot is not
    let pilot = pilot.clamp(-bound, bound);
    let step = (opts.grid_step_scale / root_n).max(opts.min_grid_step);
    let mut half_width = opts.half_width_scale / root_n;
    let mut cache: HashMap<i64, f64> = HashMap::new();
    loop {
        let lo = (pilot - half_width).max(-bound);
        let hi = (pilot + half_width).min(bound);
        // anchored at the pilot so cached values stay valid as the window grows
        let i_lo = ((lo - pilot) / step).ceil() as i64;
        let i_hi = ((hi - pilot) / step).floor() as i64;
        let mut grid: Vec<(f64, f64)> = Vec::new();
        if pilot + i_lo as f64 * step > lo {
            grid.push((lo, f.eval(lo)));
        }
        for i in i_lo..=i_hi {
            let x = pilot + i as f64 * step;
            let v = match cache.get(&i) {
                Some(v) => *v,
                None => {
                    let v = f.eval(x);
                    cache.insert(i, v);
                    v
                }
            };
            grid.push((x, v));
        }
        if pilot + i_hi as f64 * step < hi {
            grid.push((hi, f.eval(hi)));
        }

        let mut best: Option<(Located, f64)> = None;
        let mut changes = 0;
        for k in 0..grid.len() {
            let (x, fx) = grid[k];
            let candidate = if fx == 0.0 {
                let before = if k > 0 { grid[k - 1].0 } else { x };
                let after = grid.get(k + 1).map_or(x, |p| p.0);
                Some((Located::GridZero { x, bracket: (before, after) }, (x - pilot).abs()))
            } else if let Some(&(b, fb)) = grid.get(k + 1) {
                (fb != 0.0 && (fx < 0.0) != (fb < 0.0))
                    .then(|| (Located::Cell { a: x, fa: fx, b }, (0.5 * (x + b) - pilot).abs()))
            } else {
                None
            };
            if let Some((loc, d)) = candidate {
                changes += 1;
                if best.as_ref().is_none_or(|(_, bd)| d < *bd) {
                    best = Some((loc, d));
                }
            }
        }
        if let Some((loc, _)) = best {
            return Ok((loc, changes));
        }
        if lo <= -bound && hi >= bound {
            return Err(Error::NoRootInWindow { pilot, scan_bound: bound });
        }
        half_width *= 2.0;
    }
}

/// Solves the estimating equation.
///
/// `dist`, when given, is the innovation law used for the asymptotic variance
/// and the condition checks; otherwise the variance is a plug-in estimate.
pub fn m_estimate(
    u: &[f64],
    psi: &ScoreFunction,
    dist: Option<&Innovation>,
    opts: &SolverOptions,
) -> Result<EstimateResult> {
    opts.validate()?;
    let pilot = pilot_estimate(u)?;
    let n = u.len();
    let mut f = Objective { u, psi, calls: 0 };
    let (located, sign_changes) = locate_sign_change(&mut f, pilot, n, opts)?;

    let (alpha_hat, bracket) = match located {
        Located::GridZero { x, bracket } => (x, bracket),
        Located::Cell { a, fa, b } => {
            let (mut lo, mut hi) = (a, b);
            let lo_negative = fa < 0.0;
            while hi - lo >= opts.theta_tol {
                let mid = 0.5 * (lo + hi);
                let fm = f.eval(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (fm < 0.0) == lo_negative {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (0.5 * (lo + hi), (a, b))
        }
    };

    let path = ResidualPath::compute(u, alpha_hat)?;
    let objective_at_root = objective_from_path(&path, psi);
    let scale = 1.0 + path.deps.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let solver_status = if psi.is_continuous() && objective_at_root.abs() <= opts.objective_tol * scale
    {
        SolverStatus::Converged
    } else {
        SolverStatus::SignChangeCrossing
    };

    let mut condition_warnings = match dist {
        Some(d) => check_theorem2_conditions(d, psi).warnings(),
        None => {
            let mut w = Vec::new();
            if !psi.total_variation().is_finite() {
                w.push("condition violated: total_variation_finite".to_string());
            }
            if !psi.is_continuous() {
                w.push("psi is discontinuous: existence of a root is not guaranteed".to_string());
            }
            w
        }
    };
    if sign_changes > 1 {
        condition_warnings.push(format!(
            "{sign_changes} sign changes in the scan window; kept the one nearest the pilot"
        ));
    }

    let (sigma2, variance_source) = match dist {
        Some(d) => (asymptotic_variance(alpha_hat, d, psi), VarianceSource::Population),
        None => (plug_in_variance(u, alpha_hat, psi), VarianceSource::PlugIn),
    };
    let sigma2_psi = match sigma2 {
        Ok(v) => Some(v),
        Err(e) => {
            condition_warnings.push(format!("asymptotic variance unavailable: {e}"));
            None
        }
    };
    let ci = sigma2_psi.map(|s2| confidence_interval(alpha_hat, s2, n, opts.ci_level));

    Ok(EstimateResult {
        alpha_hat,
        pilot,
        bracket,
        objective_at_root,
        sigma2_psi,
        variance_source,
        ci,
        ci_level: opts.ci_level,
        n,
        solver_status,
        sign_changes,
        objective_evaluations: f.calls,
        condition_warnings,
    })
}

/// `sigma_Psi^2 = (1 - alpha^2) E Psi^2 / ((int g dPsi)^2 E eps^2)`.
pub fn variance_from_functionals(alpha: f64, e_psi2: f64, g_dpsi: f64, second_moment: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if g_dpsi.abs() <= VANISHING_INTEGRAL {
        return Err(Error::DegenerateScore(g_dpsi));
    }
    Ok((1.0 - alpha * alpha) * e_psi2 / (g_dpsi * g_dpsi * second_moment))
}

/// Asymptotic variance of `sqrt(n) (alpha_hat - alpha)`.
pub fn asymptotic_variance(alpha: f64, dist: &Innovation, psi: &ScoreFunction) -> Result<f64> {
    variance_from_functionals(
        alpha,
        e_psi_squared(dist, psi),
        integral_g_dpsi(dist, psi).value,
        dist.second_moment(),
    )
}

/// Asymptotic variance with the innovation law replaced by the residuals at
/// `alpha_hat`: sample `E Psi^2`, sample variance, and `int g dPsi` against a
/// Gaussian kernel density estimate.
pub fn plug_in_variance(u: &[f64], alpha_hat: f64, psi: &ScoreFunction) -> Result<f64> {
    let path = ResidualPath::compute(u, alpha_hat)?;
    let eps = &path.eps;
    let e_psi2 = eps.iter().map(|e| psi.eval(*e).powi(2)).sum::<f64>() / eps.len() as f64;
    let var = sample_variance(eps).ok_or(Error::TooShort { required: 2, actual: eps.len() })?;
    let kde = GaussianKde::new(eps)
        .ok_or_else(|| Error::InvalidParameter("residuals are degenerate".into()))?;
    let g_dpsi = integral_g_dpsi(&kde, psi).value;
    variance_from_functionals(alpha_hat, e_psi2, g_dpsi, var)
}

/// Slope of the local linearisation of the objective at `alpha`:
/// `-int g dPsi * E eps^2 / (1 - alpha^2)`.
pub fn lambda_alpha(alpha: f64, dist: &Innovation, psi: &ScoreFunction) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(-integral_g_dpsi(dist, psi).value * dist.second_moment() / (1.0 - alpha * alpha))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!("alpha must satisfy |alpha| < 1, got {alpha}")));
    }
    Ok(())
}

/// Normal-theory interval `alpha_hat +- z sqrt(sigma2 / n)`, clipped to `[-1, 1]`.
pub fn confidence_interval(alpha_hat: f64, sigma2: f64, n: usize, level: f64) -> (f64, f64) {
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + level));
    let half = z * (sigma2 / n as f64).sqrt();
    ((alpha_hat - half).max(-1.0), (alpha_hat + half).min(1.0))
}

impl EstimateResult {
    /// Interval at another level; `None` without a variance.
    pub fn confidence_interval(&self, level: f64) -> Option<(f64, f64)> {
        self.sigma2_psi
            .map(|s2| confidence_interval(self.alpha_hat, s2, self.n, level))
    }
}

/// Least-squares slope in `tau` of `sqrt(n) [l_n(alpha + tau / sqrt(n)) - l_n(alpha)]`.
pub fn local_objective_slope(u: &[f64], alpha: f64, psi: &ScoreFunction, taus: &[f64]) -> Result<f64> {
    let root_n = (u.len() as f64).sqrt();
    let base = objective_ln(u, alpha, psi)?;
    let ys = taus
        .iter()
        .map(|t| Ok(root_n * (objective_ln(u, alpha + t / root_n, psi)? - base)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ols_slope(taus, &ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate_ma1;
    use crate::score::{make_cdf_centered_score, make_huber_score, make_identity_score, make_sign_score};
    use std::f64::consts::PI;

    #[test]
    fn objective_small_cases() {
        let id = make_identity_score();
        for theta in [-0.5, 0.0, 0.7] {
            assert_eq!(objective_ln(&[3.0], theta, &id).unwrap(), 0.0);
        }
        assert_eq!(objective_ln(&[1.0, 2.0], 0.0, &id).unwrap(), 1.0);
    }

    #[test]
    fn objective_near_zero_at_truth() {
        let s = simulate_ma1(0.5, 100_000, Innovation::Normal, 8).unwrap();
        let psi = make_cdf_centered_score(Innovation::Normal);
        assert!(objective_ln(&s.u, 0.5, &psi).unwrap().abs() < 0.01);
    }

    #[test]
    fn pilot_inversion() {
        assert!((pilot_from_autocorr(-0.4) - 0.5).abs() < 1e-12);
        assert_eq!(pilot_from_autocorr(0.0), 0.0);
        assert_eq!(pilot_from_autocorr(5e-13), 0.0);
        // clamped to 0.499, then the invertible root; oracle value from the quadratic formula
        assert!((pilot_from_autocorr(0.55) + 0.938_663_404_291_466_4).abs() < 1e-12);
        assert_eq!(pilot_from_autocorr(-0.9999), -pilot_from_autocorr(0.9999));
        assert!(pilot_estimate(&[1.0; 9]).is_err());
    }

    #[test]
    fn variance_closed_forms() {
        let g = Innovation::Normal;
        let cdf = make_cdf_centered_score(g);
        assert!((asymptotic_variance(0.0, &g, &cdf).unwrap() - PI / 3.0).abs() < 1e-6);
        assert!((asymptotic_variance(0.0, &g, &make_sign_score()).unwrap() - PI / 2.0).abs() < 1e-6);
        for d in [g, Innovation::Logistic, Innovation::student_t(12.0).unwrap()] {
            for a in [-0.8, 0.0, 0.3, 0.95] {
                let v = asymptotic_variance(a, &d, &make_identity_score()).unwrap();
                assert!((v - (1.0 - a * a)).abs() < 1e-9, "{d} {a}: {v}");
            }
        }
        let cancel = ScoreFunction::Combination(vec![(1.0, make_sign_score()), (-1.0, make_sign_score())]);
        assert!(matches!(asymptotic_variance(0.0, &g, &cancel), Err(Error::DegenerateScore(_))));
    }

    #[test]
    fn lambda_values() {
        let g = Innovation::Normal;
        assert!((lambda_alpha(0.0, &g, &make_identity_score()).unwrap() + 1.0).abs() < 1e-9);
        let l = lambda_alpha(0.0, &g, &make_cdf_centered_score(g)).unwrap();
        assert!((l + 1.0 / (2.0 * PI.sqrt())).abs() < 1e-9);
        let near = lambda_alpha(0.999, &g, &make_identity_score()).unwrap();
        assert!((near * (1.0 - 0.999f64.powi(2)) + 1.0).abs() < 1e-9);
        assert!(lambda_alpha(1.0, &g, &make_identity_score()).is_err());
    }

    #[test]
    fn interval_arithmetic() {
        let (lo, hi) = confidence_interval(0.0, 1.0, 100, 0.95);
        assert!((hi - 0.195_996_398_454_005_4).abs() < 1e-9);
        assert!((lo + hi).abs() < 1e-15);
        let (lo, hi) = confidence_interval(0.3, 1.0, 100, 1e-12);
        assert!((hi - lo).abs() < 1e-10);
        let (lo, hi) = confidence_interval(0.5, PI / 3.0, 2000, 0.95);
        assert!((0.5 * (hi - lo) - 0.044_848_446_294_456_28).abs() < 1e-9);
        // z ~ 7.1 at this level: half-width 2.2 covers (-1, 1) from anywhere
        assert_eq!(confidence_interval(0.9, 1.0, 10, 1.0 - 1e-12), (-1.0, 1.0));
    }

    #[test]
    fn estimate_on_simulated_series() {
        let g = Innovation::Normal;
        let psi = make_cdf_centered_score(g);
        let s = simulate_ma1(0.5, 2000, g, 1).unwrap();
        let r = m_estimate(&s.u, &psi, Some(&g), &SolverOptions::default()).unwrap();
        assert_eq!(r.solver_status, SolverStatus::Converged);
        assert!(r.bracket.0 < r.alpha_hat && r.alpha_hat < r.bracket.1);
        assert!((r.alpha_hat - 0.5).abs() < 0.1);
        let scale = 1.0 + ResidualPath::compute(&s.u, r.alpha_hat).unwrap().deps.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(r.objective_at_root.abs() < 1e-6 * scale);
        let (lo, hi) = r.ci.unwrap();
        assert!(((r.alpha_hat - lo) - (hi - r.alpha_hat)).abs() < 1e-12);
        assert!(r.condition_warnings.is_empty(), "{:?}", r.condition_warnings);
        assert_eq!(r.variance_source, VarianceSource::Population);
    }

    #[test]
    fn sign_score_reports_crossing() {
        let g = Innovation::Normal;
        let s = simulate_ma1(-0.3, 3000, g, 12).unwrap();
        let r = m_estimate(&s.u, &make_sign_score(), Some(&g), &SolverOptions::default()).unwrap();
        assert_eq!(r.solver_status, SolverStatus::SignChangeCrossing);
        assert!((r.alpha_hat + 0.3).abs() < 0.1);
        assert!(r.condition_warnings.iter().any(|w| w.contains("discontinuous")));
    }

    #[test]
    fn plug_in_variance_tracks_population() {
        let g = Innovation::Normal;
        let psi = make_cdf_centered_score(g);
        let s = simulate_ma1(0.4, 5000, g, 21).unwrap();
        let r = m_estimate(&s.u, &psi, None, &SolverOptions::default()).unwrap();
        assert_eq!(r.variance_source, VarianceSource::PlugIn);
        let pop = asymptotic_variance(r.alpha_hat, &g, &psi).unwrap();
        let plug = r.sigma2_psi.unwrap();
        assert!((plug / pop - 1.0).abs() < 0.15, "plug-in {plug}, population {pop}");
    }

    #[test]
    fn constant_sign_objective_reports_no_root() {
        // the only root sits near 0.9, outside a scan bound of 0.5, and l_n < 0 below it
        let s = simulate_ma1(0.9, 4000, Innovation::Normal, 3).unwrap();
        let psi = make_huber_score(1.0).unwrap();
        let opts = SolverOptions { scan_bound: 0.5, ..SolverOptions::default() };
        for theta in [-0.5, 0.0, 0.5] {
            assert!(objective_ln(&s.u, theta, &psi).unwrap() < 0.0);
        }
        match m_estimate(&s.u, &psi, None, &opts) {
            Err(Error::NoRootInWindow { scan_bound, .. }) => assert_eq!(scan_bound, 0.5),
            other => panic!("expected no root, got {other:?}"),
        }
        assert!(m_estimate(&s.u, &psi, None, &SolverOptions::default()).is_ok());
    }

    #[test]
    fn identity_root_is_scale_equivariant() {
        let s = simulate_ma1(0.35, 800, Innovation::Normal, 5).unwrap();
        let psi = make_identity_score();
        let opts = SolverOptions::default();
        let a = m_estimate(&s.u, &psi, None, &opts).unwrap().alpha_hat;
        let scaled: Vec<f64> = s.u.iter().map(|x| 3.7 * x).collect();
        let b = m_estimate(&scaled, &psi, None, &opts).unwrap().alpha_hat;
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn pilot_error_shrinks_with_n() {
        let err = |n: usize| {
            let errs: Vec<f64> = (0..200)
                .map(|r| {
                    let s = simulate_ma1(0.5, n, Innovation::Normal, 1000 + r).unwrap();
                    (pilot_estimate(&s.u).unwrap() - 0.5).abs()
                })
                .collect();
            crate::stats::median(&errs).unwrap()
        };
        let ratio = err(500) / err(2000);
        // sqrt(n) rate: quadrupling n halves the error
        assert!((ratio / 2.0 - 1.0).abs() < 0.3, "ratio {ratio}");
    }
}
