//! Small statistical helpers: interval estimates, weighted regression and
//! an independence test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Wilson score interval for `hits` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(hits: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (all, none) = (hits >= n, hits == 0);
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The closed form leaves rounding residue at the edges.
    let lo = if none { 0.0 } else { (centre - half).max(0.0) };
    let hi = if all { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub n: usize,
}

/// Weighted least squares of `y` on `x` with weights `w` (inverse variances).
///
/// Standard errors assume the weights are correct inverse variances, which
/// is the case when they come from Monte Carlo standard errors.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], w: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n || w.len() != n {
        return None;
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x
        .iter()
        .zip(w)
        .map(|(&a, &b)| b * (a - mx) * (a - mx))
        .sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&a, &c), &b)| b * (a - mx) * (c - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Some(LinearFit {
        intercept,
        slope,
        slope_stderr: (1.0 / sxx).sqrt(),
        intercept_stderr: (1.0 / sw + mx * mx / sxx).sqrt(),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LjungBox {
    pub statistic: f64,
    pub lags: usize,
    pub p_value: f64,
}

/// Ljung-Box portmanteau test of zero autocorrelation at lags `1..=lags`.
pub fn ljung_box(x: &[f64], lags: usize) -> LjungBox {
    let n = x.len();
    assert!(n > lags + 1, "series too short for {lags} lags");
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let mut q = 0.0;
    for k in 1..=lags {
        let ck: f64 = (0..n - k).map(|i| (x[i] - mean) * (x[i + k] - mean)).sum();
        let r = ck / c0;
        q += r * r / (n - k) as f64;
    }
    let statistic = n as f64 * (n as f64 + 2.0) * q;
    let chi = ChiSquared::new(lags as f64).expect("positive degrees of freedom");
    LjungBox {
        statistic,
        lags,
        p_value: 1.0 - chi.cdf(statistic),
    }
}

/// Running first and second moments with exact, order-fixed merging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let m = self.sum / n;
        let var = ((self.sum_sq / n - m * m) * n / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}
