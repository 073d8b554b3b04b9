//! Correlation of price and volume fluctuations across non-overlapping windows.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};
use crate::params::SimplifiedCoefficients;
use crate::secondorder::{simplified_covariance, CovarianceExponent, SimplifiedModel};
use crate::stats;

pub const MIN_WINDOWS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOptions {
    /// Samples per window.
    pub window: usize,
    /// Model time of one sample.
    pub dt: f64,
    /// Offsets with `t < burn_in` are left out of the report.
    pub burn_in: f64,
    pub exponent: CovarianceExponent,
}

impl CorrelationOptions {
    pub fn new(window: usize, dt: f64) -> Self {
        Self {
            window,
            dt,
            burn_in: 0.15,
            exponent: CovarianceExponent::Integral,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub t: f64,
    pub sample_rho: f64,
    pub stderr: f64,
    pub model_rho: f64,
    pub n_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
    pub n_windows: usize,
    pub window: usize,
    /// Trailing samples that did not fill a window.
    pub remainder: usize,
}

impl CorrelationReport {
    pub fn mean_abs_gap(&self) -> f64 {
        stats::mean(
            &self
                .rows
                .iter()
                .map(|r| (r.sample_rho - r.model_rho).abs())
                .collect::<Vec<_>>(),
        )
    }

    pub fn mean_stderr(&self) -> f64 {
        stats::mean(&self.rows.iter().map(|r| r.stderr).collect::<Vec<_>>())
    }

    /// `t,sample_rho,model_rho,n_windows`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "sample_rho", "model_rho", "n_windows"])?;
        for r in &self.rows {
            wtr.write_record([
                format!("{}", r.t),
                format!("{}", r.sample_rho),
                format!("{}", r.model_rho),
                format!("{}", r.n_windows),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Correlation at each offset across windows: `zb[w][i]`, `zy[w][i]`.
pub fn cross_window_correlation(zb: &[Vec<f64>], zy: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let len = zb.first().map_or(0, |w| w.len());
    (0..len)
        .into_par_iter()
        .map(|i| {
            let a: Vec<f64> = zb.iter().map(|w| w[i]).collect();
            let b: Vec<f64> = zy.iter().map(|w| w[i]).collect();
            let rho = stats::correlation(&a, &b);
            (rho, stats::correlation_stderr(rho, a.len()))
        })
        .collect()
}

/// Splits `(B, Y)` into windows and measures each window against its own
/// first-order path: `B` constant and `Y` relaxing exponentially to the
/// root of `F`. The model correlation uses the simplified covariance started
/// from the mean window-initial volume with top density `u_top`.
pub fn windowed_correlation(
    b: &[f64],
    y: &[f64],
    coeffs: &SimplifiedCoefficients,
    u_top: f64,
    opts: &CorrelationOptions,
) -> Result<CorrelationReport> {
    if b.len() != y.len() {
        return Err(LobError::InvalidParameter(format!(
            "series lengths {} and {} differ",
            b.len(),
            y.len()
        )));
    }
    let w = opts.window;
    if w < 2 || b.len() < 2 * w {
        return Err(LobError::InsufficientData(format!(
            "{} samples do not fill two windows of {w}",
            b.len()
        )));
    }
    let n_windows = b.len() / w;
    let remainder = b.len() - n_windows * w;
    if n_windows < MIN_WINDOWS {
        warn!("only {n_windows} windows; correlation estimates are very uncertain");
    }
    let sq = opts.dt.sqrt();
    let lambda = coeffs.big_f_prime();
    let ys = coeffs.y_star();
    let mut zb = Vec::with_capacity(n_windows);
    let mut zy = Vec::with_capacity(n_windows);
    for k in 0..n_windows {
        let s = k * w;
        let (b0, y0) = (b[s], y[s]);
        zb.push((0..w).map(|i| (b[s + i] - b0) / sq).collect::<Vec<_>>());
        zy.push(
            (0..w)
                .map(|i| {
                    let t = i as f64 * opts.dt;
                    (y[s + i] - (ys + (y0 - ys) * (lambda * t).exp())) / sq
                })
                .collect::<Vec<_>>(),
        );
    }
    let corr = cross_window_correlation(&zb, &zy);
    let y_start = stats::mean(&(0..n_windows).map(|k| y[k * w]).collect::<Vec<_>>());
    let horizon = (w - 1) as f64 * opts.dt;
    let model = SimplifiedModel::closed_form(*coeffs, y_start, u_top, horizon, opts.dt)?;
    let mut rows = Vec::new();
    for (i, (rho, se)) in corr.into_iter().enumerate() {
        let t = i as f64 * opts.dt;
        if i == 0 || t < opts.burn_in - 1e-12 {
            continue;
        }
        let m = simplified_covariance(&model, t, 400, opts.exponent)?;
        rows.push(CorrelationRow {
            t,
            sample_rho: rho,
            stderr: se,
            model_rho: m.rho,
            n_windows,
        });
    }
    Ok(CorrelationReport {
        rows,
        n_windows,
        window: w,
        remainder,
    })
}
