//! Score functions and the population functionals `E Psi^2(eps)` and
//! `int g dPsi`.
//!
//! Every supported score is a finite sum of a step function and an
//! absolutely continuous function, so the Stieltjes integral is split into
//! a jump part `sum g(x_j) * jump_j` and an ordinary integral `int g psi'`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distribution::{Density, Innovation};
use crate::error::{Error, Result};
use crate::quadrature::{integrate_partition, integrate_real_line};

/// Default Huber clipping constant.
pub const HUBER_DEFAULT_C: f64 = 1.345;

/// Below this magnitude `int g dPsi` is treated as zero.
pub const VANISHING_INTEGRAL: f64 = 1e-12;

/// Internal quadrature tolerance; leaves headroom under the 1e-9 target.
const QUAD_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub location: f64,
    pub size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TotalVariation {
    Finite(f64),
    Infinite,
}

impl TotalVariation {
    pub fn is_finite(&self) -> bool {
        matches!(self, TotalVariation::Finite(_))
    }
}

/// A score function `Psi`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreFunction {
    /// `F(x) - 1/2` for the CDF `F` of a symmetric distribution.
    CdfCentered(Innovation),
    /// `-1/2` below zero, `+1/2` above, `0` at zero.
    Sign,
    /// `Psi(x) = x`; unbounded, kept as the least-squares reference.
    Identity,
    /// `clip(x, -c, c)`.
    Huber { c: f64 },
    /// Weighted sum of scores.
    Combination(Vec<(f64, ScoreFunction)>),
}

pub fn make_cdf_centered_score(f: Innovation) -> ScoreFunction {
    ScoreFunction::CdfCentered(f)
}

pub fn make_sign_score() -> ScoreFunction {
    ScoreFunction::Sign
}

pub fn make_identity_score() -> ScoreFunction {
    ScoreFunction::Identity
}

pub fn make_huber_score(c: f64) -> Result<ScoreFunction> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::InvalidParameter(format!("huber constant must be positive, got {c}")));
    }
    Ok(ScoreFunction::Huber { c })
}

impl ScoreFunction {
    pub fn name(&self) -> String {
        self.to_string()
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScoreFunction::CdfCentered(f) => f.cdf(x) - 0.5,
            ScoreFunction::Sign => {
                if x > 0.0 {
                    0.5
                } else if x < 0.0 {
                    -0.5
                } else {
                    0.0
                }
            }
            ScoreFunction::Identity => x,
            ScoreFunction::Huber { c } => x.clamp(-c, *c),
            ScoreFunction::Combination(parts) => parts.iter().map(|(w, s)| w * s.eval(x)).sum(),
        }
    }

    pub fn is_continuous(&self) -> bool {
        self.jumps().is_empty()
    }

    pub fn is_bounded(&self) -> bool {
        match self {
            ScoreFunction::Identity => false,
            ScoreFunction::Combination(parts) => {
                parts.iter().all(|(w, s)| *w == 0.0 || s.is_bounded())
            }
            _ => true,
        }
    }

    /// Nondecreasing on the whole line.
    pub fn is_monotone(&self) -> bool {
        match self {
            ScoreFunction::Combination(parts) => {
                parts.iter().all(|(w, s)| *w >= 0.0 && s.is_monotone())
            }
            _ => true,
        }
    }

    /// Discontinuities with their jump sizes, merged by location.
    pub fn jumps(&self) -> Vec<Jump> {
        match self {
            ScoreFunction::Sign => vec![Jump { location: 0.0, size: 1.0 }],
            ScoreFunction::Combination(parts) => {
                let mut out: Vec<Jump> = Vec::new();
                for (w, s) in parts {
                    for j in s.jumps() {
                        match out.iter_mut().find(|o| o.location == j.location) {
                            Some(o) => o.size += w * j.size,
                            None => out.push(Jump { location: j.location, size: w * j.size }),
                        }
                    }
                }
                out.retain(|j| j.size != 0.0);
                out.sort_by(|a, b| a.location.total_cmp(&b.location));
                out
            }
            _ => Vec::new(),
        }
    }

    /// Derivative of the absolutely continuous part.
    pub fn ac_derivative(&self, x: f64) -> f64 {
        match self {
            ScoreFunction::CdfCentered(f) => f.density(x),
            ScoreFunction::Sign => 0.0,
            ScoreFunction::Identity => 1.0,
            ScoreFunction::Huber { c } => {
                if x.abs() < *c {
                    1.0
                } else {
                    0.0
                }
            }
            ScoreFunction::Combination(parts) => {
                parts.iter().map(|(w, s)| w * s.ac_derivative(x)).sum()
            }
        }
    }

    /// False for pure step functions.
    pub fn has_ac_part(&self) -> bool {
        match self {
            ScoreFunction::Sign => false,
            ScoreFunction::Combination(parts) => {
                parts.iter().any(|(w, s)| *w != 0.0 && s.has_ac_part())
            }
            _ => true,
        }
    }

    /// Points where `Psi` or `psi'` is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = match self {
            ScoreFunction::Sign => vec![0.0],
            ScoreFunction::Huber { c } => vec![-c, *c],
            ScoreFunction::Combination(parts) => {
                parts.iter().flat_map(|(_, s)| s.breakpoints()).collect()
            }
            _ => Vec::new(),
        };
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Total variation on the real line. Exact for monotone scores; for
    /// mixed-sign combinations an upper bound.
    pub fn total_variation(&self) -> TotalVariation {
        match self {
            ScoreFunction::CdfCentered(_) | ScoreFunction::Sign => TotalVariation::Finite(1.0),
            ScoreFunction::Identity => TotalVariation::Infinite,
            ScoreFunction::Huber { c } => TotalVariation::Finite(2.0 * c),
            ScoreFunction::Combination(parts) => {
                let mut total = 0.0;
                for (w, s) in parts {
                    if *w == 0.0 {
                        continue;
                    }
                    match s.total_variation() {
                        TotalVariation::Finite(v) => total += w.abs() * v,
                        TotalVariation::Infinite => return TotalVariation::Infinite,
                    }
                }
                TotalVariation::Finite(total)
            }
        }
    }

    /// Support of `psi'` when it decays (the CDF-centered family); used to widen
    /// the integration range.
    fn derivative_support(&self) -> Option<(f64, f64)> {
        match self {
            ScoreFunction::CdfCentered(f) => Some(f.effective_support()),
            ScoreFunction::Combination(parts) => {
                parts.iter().filter_map(|(_, s)| s.derivative_support()).reduce(|a, b| {
                    (a.0.min(b.0), a.1.max(b.1))
                })
            }
            _ => None,
        }
    }
}

impl fmt::Display for ScoreFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreFunction::CdfCentered(Innovation::Normal) => write!(f, "cdf_centered"),
            ScoreFunction::CdfCentered(d) => write!(f, "cdf_centered:{d}"),
            ScoreFunction::Sign => write!(f, "sign"),
            ScoreFunction::Identity => write!(f, "identity"),
            ScoreFunction::Huber { c } => write!(f, "huber:{c}"),
            ScoreFunction::Combination(parts) => {
                let terms: Vec<String> = parts.iter().map(|(w, s)| format!("{w}*{s}")).collect();
                write!(f, "{}", terms.join("+"))
            }
        }
    }
}

impl FromStr for ScoreFunction {
    type Err = Error;

    /// Accepts `cdf_centered` (standard normal CDF), `cdf_centered:<dist>`,
    /// `sign`, `identity`, `huber` and `huber:<c>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "cdf_centered" => return Ok(ScoreFunction::CdfCentered(Innovation::Normal)),
            "sign" => return Ok(ScoreFunction::Sign),
            "identity" => return Ok(ScoreFunction::Identity),
            "huber" => return make_huber_score(HUBER_DEFAULT_C),
            _ => {}
        }
        if let Some(d) = s.strip_prefix("cdf_centered:") {
            return Ok(ScoreFunction::CdfCentered(d.parse()?));
        }
        if let Some(c) = s.strip_prefix("huber:") {
            let c: f64 = c.parse().map_err(|_| Error::UnknownIdentifier(s.to_string()))?;
            return make_huber_score(c);
        }
        Err(Error::UnknownIdentifier(s.to_string()))
    }
}

impl Serialize for ScoreFunction {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

/// Value of `int g dPsi` with a flag for the degenerate case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StieltjesIntegral {
    pub value: f64,
    /// `|value| < 1e-12`: the asymptotic-variance denominator vanishes.
    pub vanishes: bool,
}

fn partition(density: &dyn Density, psi: &ScoreFunction) -> Vec<f64> {
    let (mut lo, mut hi) = density.effective_support();
    if let Some((a, b)) = psi.derivative_support() {
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let mut pts = vec![lo, hi];
    pts.extend(psi.breakpoints().into_iter().filter(|x| *x > lo && *x < hi));
    pts.sort_by(f64::total_cmp);
    pts
}

/// `int h(x) g(x) dx`, over the effective support for bounded integrands and
/// over the whole line otherwise.
fn integrate_against<F: Fn(f64) -> f64>(
    density: &dyn Density,
    psi: &ScoreFunction,
    h: F,
    bounded: bool,
) -> f64 {
    let integrand = |x: f64| {
        let g = density.pdf(x);
        if g == 0.0 { 0.0 } else { h(x) * g }
    };
    if bounded {
        integrate_partition(integrand, &partition(density, psi), QUAD_TOL).value
    } else {
        let mut breaks = psi.breakpoints();
        breaks.push(0.0);
        integrate_real_line(integrand, &breaks, QUAD_TOL).value
    }
}

/// `int g dPsi = sum_j g(x_j) jump_j + int g(x) psi'(x) dx`.
pub fn integral_g_dpsi(density: &dyn Density, psi: &ScoreFunction) -> StieltjesIntegral {
    let jump_part: f64 = psi.jumps().iter().map(|j| density.pdf(j.location) * j.size).sum();
    let ac_part = if psi.has_ac_part() {
        // psi' is bounded for every supported score; g psi' integrable
        integrate_against(density, psi, |x| psi.ac_derivative(x), psi.is_bounded())
    } else {
        0.0
    };
    let value = jump_part + ac_part;
    StieltjesIntegral {
        value,
        vanishes: value.abs() < VANISHING_INTEGRAL,
    }
}

/// `E Psi^2(eps) = int Psi^2 g`.
pub fn e_psi_squared(density: &dyn Density, psi: &ScoreFunction) -> f64 {
    integrate_against(density, psi, |x| psi.eval(x).powi(2), psi.is_bounded())
}

/// `E Psi(eps) = int Psi g`.
pub fn e_psi(density: &dyn Density, psi: &ScoreFunction) -> f64 {
    integrate_against(density, psi, |x| psi.eval(x), psi.is_bounded())
}

/// Centering tolerance for `E Psi(eps) = 0`.
pub const CENTERING_TOL: f64 = 1e-8;

/// Which assumptions behind the asymptotic-normality result hold for a
/// given innovation law and score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub distribution: String,
    pub score: String,
    /// `E eps^8 < inf`.
    pub eighth_moment_finite: bool,
    /// `g > 0`, `g -> 0` in both tails, `sup |g'| < inf`.
    pub density_regular: bool,
    pub total_variation_finite: bool,
    pub integral_g_dpsi: f64,
    pub integral_nonzero: bool,
    pub e_psi: f64,
    pub centered: bool,
    /// Needed only for the existence part of the result.
    pub psi_continuous: bool,
}

impl ConditionReport {
    /// Conditions whose failure invalidates the limit distribution.
    pub fn hard_failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.eighth_moment_finite {
            out.push("eighth_moment_finite");
        }
        if !self.density_regular {
            out.push("density_regular");
        }
        if !self.total_variation_finite {
            out.push("total_variation_finite");
        }
        if !self.integral_nonzero {
            out.push("integral_nonzero");
        }
        if !self.centered {
            out.push("centered");
        }
        out
    }

    /// Hard failures plus the continuity caveat, as human-readable strings.
    pub fn warnings(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .hard_failures()
            .into_iter()
            .map(|c| format!("condition violated: {c}"))
            .collect();
        if !self.psi_continuous {
            out.push("psi is discontinuous: existence of a root is not guaranteed".to_string());
        }
        out
    }

    pub fn all_pass(&self) -> bool {
        self.hard_failures().is_empty() && self.psi_continuous
    }
}

pub fn check_theorem2_conditions(dist: &Innovation, psi: &ScoreFunction) -> ConditionReport {
    let (lo, hi) = dist.effective_support();
    let far = 1e6;
    let density_regular = dist.density(lo) > 0.0
        && dist.density(hi) > 0.0
        && dist.density(0.0) > 0.0
        && dist.density(far) < 1e-12
        && dist.density(-far) < 1e-12
        && dist.density_derivative_bound().is_finite();
    let g_dpsi = integral_g_dpsi(dist, psi);
    let mean = e_psi(dist, psi);
    ConditionReport {
        distribution: dist.to_string(),
        score: psi.to_string(),
        eighth_moment_finite: dist.eighth_moment().is_finite(),
        density_regular,
        total_variation_finite: psi.total_variation().is_finite(),
        integral_g_dpsi: g_dpsi.value,
        integral_nonzero: !g_dpsi.vanishes,
        e_psi: mean,
        centered: mean.abs() < CENTERING_TOL,
        psi_continuous: psi.is_continuous(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rng_for_seed;
    use crate::quadrature::integrate;
    use std::f64::consts::PI;

    fn dists() -> Vec<Innovation> {
        vec![Innovation::Normal, Innovation::student_t(9.0).unwrap(), Innovation::Logistic]
    }

    #[test]
    fn cdf_centered_shape() {
        let psi = make_cdf_centered_score(Innovation::Normal);
        assert_eq!(psi.eval(0.0), 0.0);
        assert!((psi.eval(40.0) - 0.5).abs() < 1e-15);
        assert!((psi.eval(-40.0) + 0.5).abs() < 1e-15);
        assert_eq!(psi.total_variation(), TotalVariation::Finite(1.0));
        assert!(psi.is_continuous());
    }

    #[test]
    fn sign_score_values() {
        let psi = make_sign_score();
        assert_eq!(psi.eval(-3.0), -0.5);
        assert_eq!(psi.eval(7.0), 0.5);
        assert_eq!(psi.eval(0.0), 0.0);
        assert_eq!(psi.jumps(), vec![Jump { location: 0.0, size: 1.0 }]);
        assert!(!psi.is_continuous());
        assert_eq!(psi.total_variation(), TotalVariation::Finite(1.0));
    }

    #[test]
    fn identity_and_huber() {
        assert_eq!(make_identity_score().eval(2.5), 2.5);
        assert_eq!(make_identity_score().total_variation(), TotalVariation::Infinite);
        let h = make_huber_score(1.345).unwrap();
        assert_eq!(h.eval(3.0), 1.345);
        assert_eq!(h.eval(-0.2), -0.2);
        assert_eq!(h.total_variation(), TotalVariation::Finite(2.69));
        assert!(make_huber_score(0.0).is_err());
    }

    #[test]
    fn ac_derivative_integrates_to_increment() {
        let scores = [
            make_cdf_centered_score(Innovation::Normal),
            make_cdf_centered_score(Innovation::Logistic),
            make_huber_score(0.8).unwrap(),
            make_identity_score(),
        ];
        for psi in &scores {
            for (a, b) in [(-2.0, 1.0), (-0.5, 0.3), (0.1, 4.0)] {
                let mut pts = vec![a, b];
                pts.extend(psi.breakpoints().into_iter().filter(|x| *x > a && *x < b));
                pts.sort_by(f64::total_cmp);
                let r = integrate_partition(|x| psi.ac_derivative(x), &pts, 1e-12).value;
                assert!((r - (psi.eval(b) - psi.eval(a))).abs() < 1e-8, "{psi} on [{a}, {b}]");
            }
        }
    }

    #[test]
    fn total_variation_dominates_partition_sums() {
        let scores = [
            make_cdf_centered_score(Innovation::Normal),
            make_sign_score(),
            make_huber_score(2.0).unwrap(),
            ScoreFunction::Combination(vec![(1.0, make_sign_score()), (-0.5, make_huber_score(1.0).unwrap())]),
        ];
        for psi in &scores {
            let TotalVariation::Finite(tv) = psi.total_variation() else { panic!() };
            let xs: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.05 + 1e-7).collect();
            let sum: f64 = xs.windows(2).map(|w| (psi.eval(w[1]) - psi.eval(w[0])).abs()).sum();
            assert!(sum <= tv + 1e-12, "{psi}: {sum} > {tv}");
        }
    }

    #[test]
    fn normal_functionals() {
        let g = Innovation::Normal;
        let cdf = make_cdf_centered_score(g);
        assert!((e_psi_squared(&g, &cdf) - 1.0 / 12.0).abs() < 1e-9);
        assert!((integral_g_dpsi(&g, &cdf).value - 1.0 / (2.0 * PI.sqrt())).abs() < 1e-9);
        let sign = make_sign_score();
        assert!((integral_g_dpsi(&g, &sign).value - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((e_psi_squared(&g, &make_identity_score()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_product_cross_check() {
        // int phi^2 by direct quadrature, independent of the score machinery
        let direct = integrate(g2, -12.0, 12.0, 1e-13).value;
        fn g2(x: f64) -> f64 {
            let p = Innovation::Normal.density(x);
            p * p
        }
        let via_score = integral_g_dpsi(&Innovation::Normal, &make_cdf_centered_score(Innovation::Normal));
        assert!((direct - via_score.value).abs() < 1e-9);
    }

    #[test]
    fn distribution_free_values() {
        for g in dists() {
            assert!((e_psi_squared(&g, &make_sign_score()) - 0.25).abs() < 1e-9, "{g}");
            assert!((integral_g_dpsi(&g, &make_identity_score()).value - 1.0).abs() < 1e-9, "{g}");
            assert!((e_psi_squared(&g, &make_identity_score()) - g.second_moment()).abs() < 1e-9, "{g}");
            // probability integral transform: F(eps) uniform
            let own = make_cdf_centered_score(g);
            assert!((e_psi_squared(&g, &own) - 1.0 / 12.0).abs() < 1e-9, "{g}");
        }
    }

    #[test]
    fn stieltjes_integral_is_linear() {
        for g in dists() {
            let sign = make_sign_score();
            let cdf = make_cdf_centered_score(Innovation::Normal);
            let mix = ScoreFunction::Combination(vec![(0.5, sign.clone()), (0.5, cdf.clone())]);
            let lhs = integral_g_dpsi(&g, &mix).value;
            let rhs = 0.5 * (integral_g_dpsi(&g, &sign).value + integral_g_dpsi(&g, &cdf).value);
            assert!((lhs - rhs).abs() < 1e-9);
            assert_eq!(mix.jumps(), vec![Jump { location: 0.0, size: 0.5 }]);
        }
    }

    #[test]
    fn odd_scores_are_centered() {
        for g in dists() {
            for psi in [
                make_cdf_centered_score(Innovation::Normal),
                make_sign_score(),
                make_identity_score(),
                make_huber_score(1.345).unwrap(),
            ] {
                assert!(e_psi(&g, &psi).abs() < 1e-10, "{g} {psi}");
            }
        }
    }

    #[test]
    fn probability_integral_transform_monte_carlo() {
        let g = Innovation::Normal;
        let psi = make_cdf_centered_score(g);
        let mut rng = rng_for_seed(77);
        let m = 1_000_000;
        let vals: Vec<f64> = (0..m).map(|_| psi.eval(g.sample(&mut rng)).powi(2)).collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!((mean - 1.0 / 12.0).abs() < 3.0 * se, "{mean} vs 1/12 (se {se})");
    }

    #[test]
    fn huber_matches_independent_quadrature() {
        // value computed with scipy: E clip(e, -c, c)^2, int_{-c}^{c} phi
        let g = Innovation::Normal;
        let h = make_huber_score(1.345).unwrap();
        assert!((e_psi_squared(&g, &h) - 0.710_164_548_269_048_6).abs() < 1e-9);
        assert!((integral_g_dpsi(&g, &h).value - 0.821_374_765_431_325_9).abs() < 1e-9);
    }

    #[test]
    fn condition_reports() {
        let g = Innovation::Normal;
        let r = check_theorem2_conditions(&g, &make_cdf_centered_score(g));
        assert!(r.all_pass(), "{r:?}");

        let r = check_theorem2_conditions(&g, &make_identity_score());
        assert!(!r.total_variation_finite);
        assert_eq!(r.hard_failures(), vec!["total_variation_finite"]);

        let r = check_theorem2_conditions(&g, &make_sign_score());
        assert!(r.hard_failures().is_empty());
        assert!(!r.psi_continuous);
        assert!(!r.all_pass());
        assert_eq!(r.warnings().len(), 1);
    }

    #[test]
    fn vanishing_integral_is_flagged() {
        let cancel = ScoreFunction::Combination(vec![
            (1.0, make_sign_score()),
            (-1.0, make_sign_score()),
        ]);
        let r = integral_g_dpsi(&Innovation::Normal, &cancel);
        assert!(r.vanishes);
        let report = check_theorem2_conditions(&Innovation::Normal, &cancel);
        assert!(!report.integral_nonzero);
    }

    #[test]
    fn identifiers() {
        for s in ["cdf_centered", "cdf_centered:logistic", "sign", "identity", "huber:2"] {
            assert_eq!(s.parse::<ScoreFunction>().unwrap().to_string(), s);
        }
        assert_eq!("huber".parse::<ScoreFunction>().unwrap(), ScoreFunction::Huber { c: 1.345 });
        assert!("tukey".parse::<ScoreFunction>().is_err());
        assert!("huber:-1".parse::<ScoreFunction>().is_err());
    }
}
