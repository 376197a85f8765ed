//! One-sample Kolmogorov-Smirnov test with the asymptotic p-value.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

/// Smallest sample accepted by [`ks_statistic`].
pub const MIN_KS_SAMPLE: usize = 8;

const SERIES_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// `D = sup |F_m - F|` over the sample points (both one-sided suprema) and the
/// asymptotic p-value `P(K > sqrt(m) D)`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<KsResult> {
    let m = sample.len();
    if m < MIN_KS_SAMPLE {
        return Err(Error::TooShort { required: MIN_KS_SAMPLE, actual: m });
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mf = m as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let c = cdf(*x);
        let above = (i + 1) as f64 / mf - c;
        let below = c - i as f64 / mf;
        d = d.max(above).max(below);
    }
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(mf.sqrt() * d),
    })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
///
/// Uses the alternating series `2 sum (-1)^(k-1) exp(-2 k^2 lambda^2)` for
/// larger `lambda` and the theta-function form of the CDF for small `lambda`,
/// summing until terms fall below 1e-10.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let mut sum = 0.0;
        let c = PI * PI / (8.0 * lambda * lambda);
        for k in 1.. {
            let odd = (2 * k - 1) as f64;
            let term = (-odd * odd * c).exp();
            sum += term;
            if term < SERIES_CUTOFF {
                break;
            }
        }
        let cdf = (2.0 * PI).sqrt() / lambda * sum;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1.. {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < SERIES_CUTOFF {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}
