//! Ordinary least squares in a polynomial of the total volume.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};
use crate::params::SimplifiedCoefficients;

use super::features::{FeatureSeries, Target};

pub const MIN_OBSERVATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdErrKind {
    #[default]
    Homoskedastic,
    /// White's heteroskedasticity-consistent estimator.
    Robust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub model_id: String,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub stderr: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub r2: f64,
    pub n_obs: usize,
    /// `max |X'(y - X b)| / (|X|_F |y|)`.
    pub normal_eq_residual: f64,
}

impl RegressionFit {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| (self.coefficients[i], self.stderr[i]))
    }

    /// Whether `truth` lies within `k` standard errors of the estimate.
    pub fn covers(&self, name: &str, truth: f64, k: f64) -> bool {
        self.get(name)
            .is_some_and(|(c, se)| (c - truth).abs() <= k * se)
    }
}

/// Fits `values ~ sum_i b_i y^i / i!` for `i <= degree`.
///
/// The regressor is standardised before solving; coefficients and their
/// covariance are mapped back to the raw powers of `y`.
pub fn fit_polynomial(
    model_id: &str,
    target: &Target,
    degree: usize,
    se_kind: StdErrKind,
) -> Result<RegressionFit> {
    let n = target.y.len();
    let k = degree + 1;
    if n < MIN_OBSERVATIONS.max(k + 1) {
        return Err(LobError::InsufficientData(format!(
            "model {model_id}: {n} observations, need {MIN_OBSERVATIONS}"
        )));
    }
    let mean = target.y.iter().sum::<f64>() / n as f64;
    let scale = (target.y.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(scale > 1e-12 * mean.abs().max(1.0)) {
        return Err(LobError::RankDeficient(model_id.into()));
    }
    let z = |y: f64| (y - mean) / scale;
    let xs = DMatrix::from_fn(n, k, |r, c| z(target.y[r]).powi(c as i32));
    let yv = DVector::from_column_slice(&target.values);
    let xtx = xs.transpose() * &xs;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| LobError::RankDeficient(model_id.into()))?;
    let inv = chol.inverse();
    let beta_z = &inv * (xs.transpose() * &yv);
    let resid = &yv - &xs * &beta_z;
    let rss = resid.norm_squared();
    let cov_z = match se_kind {
        StdErrKind::Homoskedastic => &inv * (rss / (n - k) as f64),
        StdErrKind::Robust => {
            let mut meat = DMatrix::zeros(k, k);
            for r in 0..n {
                let row = xs.row(r).transpose();
                meat.ger(resid[r] * resid[r], &row, &row, 1.0);
            }
            &inv * meat * &inv
        }
    };
    // raw power coefficients c_j of y^j from z = (y - m)/s, then b_j = c_j j!
    let mut map = DMatrix::zeros(k, k);
    for i in 0..k {
        // z^i = s^-i sum_j binom(i, j) y^j (-m)^(i-j)
        let mut binom = 1.0;
        for j in 0..=i {
            map[(j, i)] = binom * (-mean).powi((i - j) as i32) / scale.powi(i as i32);
            binom = binom * (i - j) as f64 / (j + 1) as f64;
        }
    }
    let fact = |j: usize| (1..=j).map(|v| v as f64).product::<f64>();
    let to_named = DMatrix::from_fn(k, k, |r, c| map[(r, c)] * fact(r));
    let beta = &to_named * &beta_z;
    let cov = &to_named * cov_z * to_named.transpose();
    let stderr: Vec<f64> = (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let ybar = target.values.iter().sum::<f64>() / n as f64;
    let tss: f64 = target.values.iter().map(|v| (v - ybar).powi(2)).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    // normal equations in the raw design
    let x_raw = DMatrix::from_fn(n, k, |r, c| target.y[r].powi(c as i32) / fact(c));
    let resid_raw = &yv - &x_raw * &beta;
    let ne = x_raw.transpose() * resid_raw;
    let denom = x_raw.norm() * yv.norm().max(f64::MIN_POSITIVE);
    let names = ["c", "y", "yy"];
    Ok(RegressionFit {
        model_id: model_id.into(),
        names: (0..k)
            .map(|i| names.get(i).map_or(format!("y{i}"), |s| s.to_string()))
            .collect(),
        coefficients: beta.iter().copied().collect(),
        t_stats: (0..k).map(|i| beta[i] / stderr[i]).collect(),
        stderr,
        r2,
        n_obs: n,
        normal_eq_residual: ne.amax() / denom,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFits {
    pub p_ab: RegressionFit,
    pub f0: RegressionFit,
    pub big_f: RegressionFit,
    pub big_g: RegressionFit,
}

impl ModelFits {
    pub fn coefficients(&self) -> SimplifiedCoefficients {
        let c = |f: &RegressionFit, i: usize| f.coefficients[i];
        SimplifiedCoefficients {
            p_c: c(&self.p_ab, 0),
            p_y: c(&self.p_ab, 1),
            f0_c: c(&self.f0, 0),
            f0_y: c(&self.f0, 1),
            big_f_c: c(&self.big_f, 0),
            big_f_y: c(&self.big_f, 1),
            big_g_c: c(&self.big_g, 0),
            big_g_y: c(&self.big_g, 1),
            big_g_yy: c(&self.big_g, 2),
        }
    }

    /// Coefficient rows with t-statistics in parentheses beneath.
    pub fn table(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{title}");
        let _ = writeln!(out, "{:<12}{:>14}{:>14}{:>14}", "", "const", "Y", "Y^2/2");
        for (label, fit) in [
            ("p^{B+A}", &self.p_ab),
            ("f0", &self.f0),
            ("F", &self.big_f),
            ("G", &self.big_g),
        ] {
            let mut coef = format!("{label:<12}");
            let mut ts = format!("{:<12}", "");
            for i in 0..3 {
                if i < fit.coefficients.len() {
                    let _ = write!(coef, "{:>14.4e}", fit.coefficients[i]);
                    let _ = write!(ts, "{:>14}", format!("({:.2})", fit.t_stats[i]));
                } else {
                    let _ = write!(coef, "{:>14}", "");
                }
            }
            let _ = writeln!(out, "{}", coef.trim_end());
            let _ = writeln!(out, "{}", ts.trim_end());
        }
        out
    }
}

/// Linear fits for `p^{B+A}`, `f0`, `F` and the quadratic fit for `G`.
pub fn fit_models(features: &FeatureSeries, se_kind: StdErrKind) -> Result<ModelFits> {
    Ok(ModelFits {
        p_ab: fit_polynomial("pAB", &features.activity(), 1, se_kind)?,
        f0: fit_polynomial("f0", &features.top_target(), 1, se_kind)?,
        big_f: fit_polynomial("F", &features.flow_target(), 1, se_kind)?,
        big_g: fit_polynomial("G", &features.squared_flow_target(), 2, se_kind)?,
    })
}
