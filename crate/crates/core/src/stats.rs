//! Sample moments and their standard errors. Sums run in slice order so that
//! results are bitwise reproducible.

use serde::{Deserialize, Serialize};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    covariance(x, x)
}

/// Unbiased sample covariance.
pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let (mx, my) = (mean(x), mean(y));
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (n - 1) as f64
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    covariance(x, y) / (variance(x) * variance(y)).sqrt()
}

pub fn stderr_mean(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

/// Standard error of the sample covariance, from the spread of the centred
/// products. With `x == y` this is the standard error of the variance.
pub fn stderr_covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mx, my) = (mean(x), mean(y));
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    (variance(&prods) / n as f64).sqrt()
}

pub fn stderr_variance(x: &[f64]) -> f64 {
    stderr_covariance(x, x)
}

/// Large-sample standard error of a correlation estimate.
pub fn correlation_stderr(rho: f64, n: usize) -> f64 {
    (1.0 - rho * rho) / ((n as f64 - 3.0).max(1.0)).sqrt()
}

/// Estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Self { value, stderr }
    }

    /// `|value - target| <= k * stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }

    /// Two estimates whose `k`-sigma bands overlap.
    pub fn overlaps(&self, other: &Estimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * (self.stderr + other.stderr)
    }
}

pub fn mean_estimate(x: &[f64]) -> Estimate {
    Estimate::new(mean(x), stderr_mean(x))
}

pub fn variance_estimate(x: &[f64]) -> Estimate {
    Estimate::new(variance(x), stderr_variance(x))
}

pub fn covariance_estimate(x: &[f64], y: &[f64]) -> Estimate {
    Estimate::new(covariance(x, y), stderr_covariance(x, y))
}

/// Least-squares line with the standard error of the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
}

pub fn line_fit(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len();
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let slope_stderr = if n > 2 {
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    LineFit {
        intercept,
        slope,
        slope_stderr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn basic_moments() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        assert_relative_eq!(mean(&x), 2.5);
        assert_relative_eq!(variance(&x), 5.0 / 3.0);
        assert_relative_eq!(covariance(&x, &y), 10.0 / 3.0);
        assert_relative_eq!(correlation(&x, &y), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn line_fit_exact() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 0.5 * v).collect();
        let f = line_fit(&x, &y);
        assert_relative_eq!(f.slope, -0.5, max_relative = 1e-12);
        assert_relative_eq!(f.intercept, 1.0, max_relative = 1e-12);
        assert!(f.slope_stderr < 1e-12);
    }

    #[test]
    fn band_overlap() {
        let a = Estimate::new(1.0, 0.1);
        let b = Estimate::new(1.7, 0.1);
        assert!(a.overlaps(&b, 4.0));
        assert!(!a.overlaps(&b, 3.0));
        assert!(a.within(1.35, 4.0));
    }
}
