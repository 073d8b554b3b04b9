//! Snapshot ingestion, per-second features, the volume regressions and the
//! windowed price/volume correlation.

pub mod correlation;
pub mod features;
pub mod ingest;
pub mod ols;

use serde::{Deserialize, Serialize};

pub use correlation::{windowed_correlation, CorrelationOptions, CorrelationReport};
pub use features::{build_features, FeatureSeries, MomentConvention, SideSeries};
pub use ingest::{ingest_csv, BookSnapshot, BookWriter, CsvSchema, IngestReport, Side};
pub use ols::{fit_models, ModelFits, RegressionFit, StdErrKind};

use crate::error::Result;
use crate::microsim::{run_ensemble, SimConfig, Simulator};
use crate::params::SimplifiedCoefficients;
use crate::presets::Scenario;

/// Fits of independent simulated sessions of `n_events` seconds each.
pub fn synthetic_fits(
    scenario: &Scenario,
    n_events: usize,
    n_sessions: usize,
    seed: u64,
    convention: MomentConvention,
    se_kind: StdErrKind,
) -> Result<Vec<ModelFits>> {
    let sim = Simulator::new(&scenario.spec, scenario.grid)?;
    let delta = scenario.grid.delta();
    let cfg = SimConfig::new(delta, n_events as f64 * delta, seed);
    run_ensemble(n_sessions, seed, |_, rng| {
        let path = sim.simulate_path_with(&cfg, scenario.b0, &scenario.u0, rng)?;
        let series = SideSeries::from_path(&path);
        let features = build_features(&series, delta, delta, convention)?;
        fit_models(&features, se_kind)
    })
}

/// `(B, Y)` of `n_windows` independent sessions of `window` samples, each
/// started from the scenario's initial book, laid end to end.
pub fn synthetic_windows(
    scenario: &Scenario,
    window: usize,
    n_windows: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sim = Simulator::new(&scenario.spec, scenario.grid)?;
    let delta = scenario.grid.delta();
    let cfg = SimConfig::new(delta, (window - 1) as f64 * delta, seed);
    let paths = run_ensemble(n_windows, seed, |_, rng| {
        let path = sim.simulate_path_with(&cfg, scenario.b0, &scenario.u0, rng)?;
        Ok((path.b, path.y))
    })?;
    let mut b = Vec::with_capacity(window * n_windows);
    let mut y = Vec::with_capacity(window * n_windows);
    for (pb, py) in paths {
        b.extend_from_slice(&pb[..window]);
        y.extend_from_slice(&py[..window]);
    }
    Ok((b, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRecovery {
    pub name: String,
    pub truth: f64,
    /// Sessions whose estimate is within `k` standard errors of the truth.
    pub covered: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub n_sessions: usize,
    pub k: f64,
    pub coefficients: Vec<CoefficientRecovery>,
    /// Sessions in which every coefficient is covered.
    pub jointly_covered: usize,
}

/// Coverage and RMSE of `p_c`, `p_y`, `F_c`, `F_y` against `truth`.
pub fn recovery_summary(
    fits: &[ModelFits],
    truth: &SimplifiedCoefficients,
    k: f64,
) -> RecoverySummary {
    let picks: [(&str, fn(&ModelFits) -> &RegressionFit, usize, f64); 4] = [
        ("p_c", |f| &f.p_ab, 0, truth.p_c),
        ("p_y", |f| &f.p_ab, 1, truth.p_y),
        ("F_c", |f| &f.big_f, 0, truth.big_f_c),
        ("F_y", |f| &f.big_f, 1, truth.big_f_y),
    ];
    let within =
        |f: &ModelFits, (_, pick, i, t): &(&str, fn(&ModelFits) -> &RegressionFit, usize, f64)| {
            let r = pick(f);
            (r.coefficients[*i] - t).abs() <= k * r.stderr[*i]
        };
    let coefficients = picks
        .iter()
        .map(|p| {
            let (name, pick, i, t) = p;
            let sq: f64 = fits
                .iter()
                .map(|f| (pick(f).coefficients[*i] - t).powi(2))
                .sum();
            CoefficientRecovery {
                name: name.to_string(),
                truth: *t,
                covered: fits.iter().filter(|f| within(f, p)).count(),
                rmse: (sq / fits.len() as f64).sqrt(),
            }
        })
        .collect();
    RecoverySummary {
        n_sessions: fits.len(),
        k,
        coefficients,
        jointly_covered: fits
            .iter()
            .filter(|f| picks.iter().all(|p| within(f, p)))
            .count(),
    }
}
