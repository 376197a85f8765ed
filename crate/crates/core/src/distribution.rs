//! Innovation distributions for the MA(1) model.
//!
//! Every built-in family is symmetric about zero with a smooth, strictly
//! positive density. Second and eighth moments are closed-form constants.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT as StudentTSampler};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Smallest Student-t degrees of freedom accepted; keeps the eighth moment finite.
pub const MIN_STUDENT_DOF: f64 = 9.0;

/// Tail probability cut off on each side when integrating against a density.
pub const SUPPORT_TAIL: f64 = 1e-10;

/// A univariate density with a bounded region holding all but negligible mass.
pub trait Density {
    fn pdf(&self, x: f64) -> f64;

    /// Interval outside of which the density carries negligible mass.
    fn effective_support(&self) -> (f64, f64);
}

/// Eighth moment of an innovation law; Student-t with few degrees of freedom has none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Moment {
    Finite(f64),
    Infinite,
}

impl Moment {
    pub fn is_finite(&self) -> bool {
        matches!(self, Moment::Finite(_))
    }
}

/// Built-in innovation distributions, selected by the identifiers
/// `normal`, `student_t:<nu>` and `logistic`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Innovation {
    /// Standard normal.
    Normal,
    /// Standard Student-t with `nu` degrees of freedom (not rescaled).
    StudentT { nu: f64 },
    /// Standard logistic, scale 1.
    Logistic,
}

impl Innovation {
    pub fn student_t(nu: f64) -> Result<Self> {
        if !nu.is_finite() || nu < MIN_STUDENT_DOF {
            return Err(Error::InvalidParameter(format!(
                "student_t degrees of freedom must be >= {MIN_STUDENT_DOF}, got {nu}"
            )));
        }
        Ok(Innovation::StudentT { nu })
    }

    pub fn name(&self) -> String {
        self.to_string()
    }

    pub fn density(&self, x: f64) -> f64 {
        match *self {
            Innovation::Normal => (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
            Innovation::StudentT { nu } => {
                (student_log_norm(nu) - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp()
            }
            Innovation::Logistic => {
                let e = (-x.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
        }
    }

    pub fn density_derivative(&self, x: f64) -> f64 {
        match *self {
            Innovation::Normal => -x * self.density(x),
            Innovation::StudentT { nu } => -(nu + 1.0) * x / (nu + x * x) * self.density(x),
            Innovation::Logistic => self.density(x) * (1.0 - 2.0 * self.cdf(x)),
        }
    }

    /// Finite upper bound on `sup |g'(x)|`, attained in closed form.
    pub fn density_derivative_bound(&self) -> f64 {
        match *self {
            Innovation::Normal => self.density(1.0),
            Innovation::StudentT { nu } => {
                let x = (nu / (nu + 2.0)).sqrt();
                self.density_derivative(x).abs()
            }
            Innovation::Logistic => 1.0 / (6.0 * 3f64.sqrt()),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Innovation::Normal => 0.5 * statrs::function::erf::erfc(-x / SQRT_2),
            Innovation::StudentT { nu } => student(nu).cdf(x),
            Innovation::Logistic => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Inverse CDF on (0, 1).
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Innovation::Normal => Normal::standard().inverse_cdf(p),
            Innovation::StudentT { nu } => student(nu).inverse_cdf(p),
            Innovation::Logistic => (p / (1.0 - p)).ln(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Innovation::Normal => StandardNormal.sample(rng),
            Innovation::StudentT { nu } => StudentTSampler::new(nu)
                .expect("degrees of freedom validated at construction")
                .sample(rng),
            Innovation::Logistic => {
                // open interval (0, 1)
                let p: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                (p / (1.0 - p)).ln()
            }
        }
    }

    /// `E eps^2`.
    pub fn second_moment(&self) -> f64 {
        match *self {
            Innovation::Normal => 1.0,
            Innovation::StudentT { nu } => nu / (nu - 2.0),
            Innovation::Logistic => PI * PI / 3.0,
        }
    }

    /// `E eps^8`.
    pub fn eighth_moment(&self) -> Moment {
        match *self {
            Innovation::Normal => Moment::Finite(105.0),
            Innovation::StudentT { nu } if nu > 8.0 => Moment::Finite(
                105.0 * nu.powi(4) / ((nu - 2.0) * (nu - 4.0) * (nu - 6.0) * (nu - 8.0)),
            ),
            Innovation::StudentT { .. } => Moment::Infinite,
            // (2^8 - 2) pi^8 |B_8|, B_8 = -1/30
            Innovation::Logistic => Moment::Finite(127.0 * PI.powi(8) / 15.0),
        }
    }
}

fn student(nu: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, nu).expect("degrees of freedom validated at construction")
}

fn student_log_norm(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
}

impl Density for Innovation {
    fn pdf(&self, x: f64) -> f64 {
        self.density(x)
    }

    fn effective_support(&self) -> (f64, f64) {
        (self.quantile(SUPPORT_TAIL), self.quantile(1.0 - SUPPORT_TAIL))
    }
}

impl fmt::Display for Innovation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Innovation::Normal => write!(f, "normal"),
            Innovation::StudentT { nu } => write!(f, "student_t:{nu}"),
            Innovation::Logistic => write!(f, "logistic"),
        }
    }
}

impl FromStr for Innovation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "normal" => return Ok(Innovation::Normal),
            "logistic" => return Ok(Innovation::Logistic),
            _ => {}
        }
        if let Some(nu) = s.strip_prefix("student_t:") {
            let nu: f64 = nu
                .parse()
                .map_err(|_| Error::UnknownIdentifier(s.to_string()))?;
            return Innovation::student_t(nu);
        }
        Err(Error::UnknownIdentifier(s.to_string()))
    }
}

impl Serialize for Innovation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Innovation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
