//! Gaussian kernel density estimate with Silverman's bandwidth.

use std::f64::consts::PI;

use crate::distribution::Density;

#[derive(Debug, Clone)]
pub struct GaussianKde {
    data: Vec<f64>,
    bandwidth: f64,
}

/// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, falling back to `sd` when the IQR is zero.
pub fn silverman_bandwidth(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let sd = (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl GaussianKde {
    /// Returns `None` for fewer than two points or degenerate data.
    pub fn new(data: &[f64]) -> Option<Self> {
        if data.len() < 2 {
            return None;
        }
        let bandwidth = silverman_bandwidth(data);
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return None;
        }
        Some(Self { data: data.to_vec(), bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

impl Density for GaussianKde {
    fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let s: f64 = self
            .data
            .iter()
            .map(|d| {
                let z = (x - d) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        s / (self.data.len() as f64 * h * (2.0 * PI).sqrt())
    }

    fn effective_support(&self) -> (f64, f64) {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        // 7 bandwidths leaves under 1e-11 of each kernel's mass outside
        (lo - 7.0 * self.bandwidth, hi + 7.0 * self.bandwidth)
    }
}
