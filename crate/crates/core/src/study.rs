//! Convergence study on a ladder of tick sizes: law-of-large-numbers rate,
//! price variance, martingale diagnostics and agreement of the microscopic
//! fluctuations with the truncated limit.

use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};
use crate::firstorder::{solve_first_order, FirstOrderOptions, FirstOrderSolution};
use crate::fluctuations::{
    fluctuation_ensemble, martingale_ensemble, reference_projections, spaced_checkpoints,
    FluctuationStats,
};
use crate::grid::CellWeights;
use crate::microsim::{run_ensemble, EventRecord, LobState, SimConfig, Simulator};
use crate::presets::Scenario;
use crate::rng;
use crate::secondorder::{simulate_spde, EnsembleOptions, SpdeOptions};
use crate::stats::{self, Estimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCheck {
    pub id: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnRung {
    pub delta: f64,
    /// `E sup_t |<u^n - u, phi>|` per test function.
    pub errors: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnRate {
    pub names: Vec<String>,
    pub rungs: Vec<LlnRung>,
    /// Log-log slope of the error against `delta` per test function.
    pub slopes: Vec<f64>,
}

fn solve_on_events(s: &Scenario, delta: f64, horizon: f64) -> Result<FirstOrderSolution> {
    solve_first_order(
        &s.spec,
        s.b0,
        &s.u0,
        &FirstOrderOptions::new(delta, horizon),
        &s.test_fns,
    )
}

/// Mean over paths of the largest deviation of `<u, phi>` from the first-order
/// path, for each `delta` of `deltas`.
pub fn lln_rate(
    scenario_at: impl Fn(f64) -> Result<Scenario>,
    deltas: &[f64],
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<LlnRate> {
    if deltas.len() < 2 {
        return Err(LobError::InvalidParameter(
            "need at least two tick sizes".into(),
        ));
    }
    let mut rungs = Vec::with_capacity(deltas.len());
    let mut names = Vec::new();
    for (r, &delta) in deltas.iter().enumerate() {
        let s = scenario_at(delta)?;
        names = s.test_fns.iter().map(|f| f.name().to_string()).collect();
        let sol = solve_on_events(&s, delta, horizon)?;
        let reference = reference_projections(&sol, &s.test_fns)?;
        let sim = Simulator::new(&s.spec, s.grid)?;
        let weights: Vec<CellWeights> =
            s.test_fns.iter().map(|f| f.cell_weights(&s.grid)).collect();
        let cfg = SimConfig::new(delta, horizon, rng::child_seed(seed, r as u64));
        let sups = run_ensemble(n_paths, cfg.seed, |_, rng| {
            let mut state = sim.initial_state(s.b0, &s.u0)?;
            let mut sup = vec![0.0f64; weights.len()];
            let mut obs = |k: usize, st: &LobState, _: Option<&EventRecord>| -> Result<()> {
                for (i, w) in weights.iter().enumerate() {
                    sup[i] = sup[i].max((w.pair(st.u.values()) - reference[i][k]).abs());
                }
                Ok(())
            };
            sim.run(&cfg, &mut state, rng, &mut obs)?;
            Ok(sup)
        })?;
        let errors = (0..weights.len())
            .map(|i| stats::mean_estimate(&sups.iter().map(|p| p[i]).collect::<Vec<_>>()))
            .collect();
        rungs.push(LlnRung { delta, errors });
    }
    let log_d: Vec<f64> = rungs.iter().map(|r| r.delta.ln()).collect();
    let slopes = (0..names.len())
        .map(|i| {
            let log_e: Vec<f64> = rungs.iter().map(|r| r.errors[i].value.ln()).collect();
            stats::line_fit(&log_d, &log_e).slope
        })
        .collect();
    Ok(LlnRate {
        names,
        rungs,
        slopes,
    })
}

/// Band comparison of two fluctuation summaries at matching times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandComparison {
    pub t: f64,
    pub micro: FluctuationStats,
    pub limit: FluctuationStats,
    pub overlaps: bool,
}

pub fn compare_bands(
    micro: &[FluctuationStats],
    limit: &[FluctuationStats],
    k: f64,
) -> Vec<BandComparison> {
    micro
        .iter()
        .zip(limit)
        .map(|(m, l)| BandComparison {
            t: m.t,
            micro: *m,
            limit: *l,
            overlaps: m.var_zb.overlaps(&l.var_zb, k)
                && m.var_zy.overlaps(&l.var_zy, k)
                && m.cov.overlaps(&l.cov, k),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub base_delta: f64,
    pub rungs: usize,
    pub horizon: f64,
    pub n_paths: usize,
    pub checkpoints: usize,
    pub k_sigma: f64,
    pub modes: usize,
    pub spde_dt: f64,
    pub seed: u64,
}

/// All study checks; the finest rung carries the fluctuation comparisons.
pub fn convergence_study(
    scenario_at: impl Fn(f64) -> Result<Scenario>,
    opts: &StudyOptions,
) -> Result<Vec<StudyCheck>> {
    let deltas: Vec<f64> = (0..opts.rungs.max(2))
        .rev()
        .map(|i| opts.base_delta * 2f64.powi(i as i32))
        .collect();
    let mut checks = Vec::new();

    let lln = lln_rate(
        &scenario_at,
        &deltas,
        opts.horizon,
        opts.n_paths,
        rng::child_seed(opts.seed, 1),
    )?;
    checks.push(StudyCheck {
        id: "lln_rate".into(),
        passed: lln.slopes.iter().all(|s| (0.35..=0.65).contains(s)),
        detail: serde_json::to_value(&lln)?,
    });

    let delta = opts.base_delta;
    let s = scenario_at(delta)?;
    let sol = solve_on_events(&s, delta, opts.horizon)?;
    let sim = Simulator::new(&s.spec, s.grid)?;
    let cfg = SimConfig::new(delta, opts.horizon, rng::child_seed(opts.seed, 2));
    let ks = spaced_checkpoints(cfg.n_events(), opts.checkpoints);
    let fe = fluctuation_ensemble(
        &sim,
        &sol,
        &cfg,
        s.b0,
        &s.u0,
        opts.n_paths,
        &ks,
        &s.test_fns,
    )?;
    let micro = fe.stats();

    // price variance against the integrated sigma0^2 of the first-order path
    let last = micro.last().expect("at least one checkpoint");
    let k_last = *ks.last().unwrap();
    let target: f64 = (0..k_last)
        .map(|i| delta * s.spec.probs.sigma0_sq(sol.b[i], sol.y[i]))
        .sum();
    checks.push(StudyCheck {
        id: "price_variance".into(),
        passed: last.var_zb.within(target, opts.k_sigma),
        detail: serde_json::json!({ "t": last.t, "estimate": last.var_zb, "target": target }),
    });

    let mcfg = SimConfig::new(delta, opts.horizon, rng::child_seed(opts.seed, 3));
    let me = martingale_ensemble(
        &sim,
        &sol,
        &mcfg,
        s.b0,
        &s.u0,
        opts.n_paths,
        &ks,
        &s.test_fns,
    )?;
    let mchecks = me.checks(opts.k_sigma);
    checks.push(StudyCheck {
        id: "martingales".into(),
        passed: mchecks.iter().all(|c| c.passed),
        detail: serde_json::json!(mchecks
            .iter()
            .map(|c| serde_json::json!({ "series": c.series, "passed": c.passed, "max_z": c.max_z() }))
            .collect::<Vec<_>>()),
    });

    let times: Vec<f64> = fe.times.clone();
    let ens = EnsembleOptions {
        horizon: opts.horizon,
        dt: opts.spde_dt,
        n_paths: opts.n_paths,
        seed: rng::child_seed(opts.seed, 4),
        checkpoints: times,
    };
    let spde = simulate_spde(
        &s.spec,
        &sol,
        &SpdeOptions::new(ens, opts.modes),
        &s.test_fns,
        None,
    )?;
    let bands = compare_bands(&micro, &spde.stats(), opts.k_sigma);
    checks.push(StudyCheck {
        id: "micro_to_limit".into(),
        passed: bands.iter().all(|b| b.overlaps),
        detail: serde_json::to_value(&bands)?,
    });
    Ok(checks)
}
