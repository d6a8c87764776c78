//! Small statistics helpers shared by the ensemble and spectral estimators.

use serde::{Deserialize, Serialize};

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn new(mean: f64, se: f64) -> Self {
        Estimate { mean, se }
    }

    pub fn exact(mean: f64) -> Self {
        Estimate { mean, se: 0.0 }
    }

    /// `|self - value| <= k * se`.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.se
    }

    /// Standard error of `self - other` for independent estimates.
    pub fn combined_se(&self, other: &Estimate) -> f64 {
        self.se.hypot(other.se)
    }
}

/// Running sum and sum of squares of i.i.d. samples.
///
/// Merging is plain addition, so a fold over blocks in a fixed order is
/// bit-reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub sum: f64,
    pub sum_sq: f64,
    pub count: u64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
        self.count += 1;
    }

    #[inline]
    pub fn merge(&mut self, other: &Moments) {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.count += other.count;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Unbiased sample variance (zero for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn estimate(&self) -> Estimate {
        let se = if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        };
        Estimate::new(self.mean(), se)
    }
}

/// Result of a weighted straight-line fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: Estimate,
    pub slope: Estimate,
    /// Weighted coefficient of determination.
    pub r_squared: f64,
}

/// Weighted least squares with weights `1 / se^2`.
///
/// Parameter errors are the usual covariance-matrix errors for known
/// measurement uncertainties. Points with zero error get unit weight, so the
/// fit degrades to ordinary least squares for exact data.
pub fn weighted_line_fit(x: &[f64], y: &[Estimate]) -> Option<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let all_exact = y.iter().all(|e| e.se == 0.0);
    let w: Vec<f64> = y
        .iter()
        .map(|e| if all_exact { 1.0 } else { 1.0 / (e.se * e.se) })
        .collect();
    if w.iter().any(|w| !w.is_finite()) {
        return None;
    }
    let s: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y.mean).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y.mean).sum();
    let det = s * sxx - sx * sx;
    if det.abs() < f64::EPSILON * s * sxx {
        return None;
    }
    let slope = (s * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;

    let ybar = sy / s;
    let ss_tot: f64 = w.iter().zip(y).map(|(w, y)| w * (y.mean - ybar).powi(2)).sum();
    let ss_res: f64 = w
        .iter()
        .zip(x)
        .zip(y)
        .map(|((w, x), y)| w * (y.mean - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    let (se_slope, se_intercept) = if all_exact {
        (0.0, 0.0)
    } else {
        ((s / det).sqrt(), (sxx / det).sqrt())
    };
    Some(LineFit {
        intercept: Estimate::new(intercept, se_intercept),
        slope: Estimate::new(slope, se_slope),
        r_squared,
    })
}
