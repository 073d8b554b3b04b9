//! Rescaled fluctuations `Z = (S^n - S) / sqrt(delta)` of a simulated book
//! around the first-order solution, and the compensated martingales that
//! characterise their limit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};
use crate::firstorder::FirstOrderSolution;
use crate::grid::{CellWeights, StepDensity, TestFunction};
use crate::microsim::{
    run_ensemble, EventRecord, LobPath, LobState, PathObserver, SimConfig, Simulator,
};
use crate::params::{DiscreteMoments, ModelSpec};
use crate::stats::{self, Estimate};

fn check_mesh(delta: f64, n_events: usize, sol: &FirstOrderSolution) -> Result<()> {
    if (sol.dt - delta).abs() > 1e-12 * delta {
        return Err(LobError::MeshMismatch(format!(
            "first-order dt {} differs from the tick {delta}",
            sol.dt
        )));
    }
    if sol.times.len() < n_events + 1 {
        return Err(LobError::MeshMismatch(format!(
            "first-order solution has {} steps, path has {n_events} events",
            sol.times.len() - 1
        )));
    }
    Ok(())
}

/// `<u(t_k), phi>` for every step `k` of the solution. Uses the solver's own
/// projections when it computed them for the same functions, else stored
/// densities.
pub fn reference_projections(
    sol: &FirstOrderSolution,
    test_fns: &[TestFunction],
) -> Result<Vec<Vec<f64>>> {
    test_fns
        .iter()
        .map(|phi| {
            if let Some(i) = sol.projection_names.iter().position(|n| n == phi.name()) {
                return Ok(sol.projections[i].clone());
            }
            let w = phi.cell_weights(sol.grid());
            (0..sol.times.len())
                .map(|k| match sol.density_at_step(k) {
                    Some(u) => Ok(w.pair(u.values())),
                    None => Err(LobError::MeshMismatch(format!(
                        "density at step {k} not stored and {} was not projected by the solver",
                        phi.name()
                    ))),
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSeries {
    pub normalization: f64,
    pub times: Vec<f64>,
    pub zb: Vec<f64>,
    pub zy: Vec<f64>,
    pub names: Vec<String>,
    /// Event indices at which the density was recorded.
    pub proj_ks: Vec<usize>,
    /// `<Z^u, phi>` per test function at `proj_ks`.
    pub zu: Vec<Vec<f64>>,
}

pub fn compute_fluctuations(
    path: &LobPath,
    sol: &FirstOrderSolution,
    test_fns: &[TestFunction],
) -> Result<FluctuationSeries> {
    let delta = path.config.delta;
    let n = path.b.len() - 1;
    check_mesh(delta, n, sol)?;
    let sq = delta.sqrt();
    let reference = reference_projections(sol, test_fns)?;
    let proj_ks: Vec<usize> = path.snapshots.iter().map(|s| s.k).collect();
    let zu = test_fns
        .iter()
        .enumerate()
        .map(|(i, phi)| {
            let w = phi.cell_weights(sol.grid());
            path.snapshots
                .iter()
                .map(|s| (w.pair(s.density.values()) - reference[i][s.k]) / sq)
                .collect()
        })
        .collect();
    Ok(FluctuationSeries {
        normalization: sq,
        times: (0..=n).map(|k| k as f64 * delta).collect(),
        zb: (0..=n).map(|k| (path.b[k] - sol.b[k]) / sq).collect(),
        zy: (0..=n).map(|k| (path.y[k] - sol.y[k]) / sq).collect(),
        names: test_fns.iter().map(|f| f.name().to_string()).collect(),
        proj_ks,
        zu,
    })
}

impl FluctuationSeries {
    /// `t,ZB,ZY`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "ZB", "ZY"])?;
        for k in 0..self.times.len() {
            wtr.write_record([
                format!("{}", self.times[k]),
                format!("{}", self.zb[k]),
                format!("{}", self.zy[k]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Fluctuations of many paths at fixed event indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationEnsemble {
    pub ks: Vec<usize>,
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `[checkpoint][path]`.
    pub zb: Vec<Vec<f64>>,
    pub zy: Vec<Vec<f64>>,
    /// `[function][checkpoint][path]`.
    pub zu: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationStats {
    pub t: f64,
    pub mean_zb: Estimate,
    pub mean_zy: Estimate,
    pub var_zb: Estimate,
    pub var_zy: Estimate,
    pub cov: Estimate,
    pub corr: f64,
    pub corr_stderr: f64,
}

pub fn pair_stats(t: f64, zb: &[f64], zy: &[f64]) -> FluctuationStats {
    let corr = stats::correlation(zb, zy);
    FluctuationStats {
        t,
        mean_zb: stats::mean_estimate(zb),
        mean_zy: stats::mean_estimate(zy),
        var_zb: stats::variance_estimate(zb),
        var_zy: stats::variance_estimate(zy),
        cov: stats::covariance_estimate(zb, zy),
        corr,
        corr_stderr: stats::correlation_stderr(corr, zb.len()),
    }
}

impl FluctuationEnsemble {
    pub fn stats(&self) -> Vec<FluctuationStats> {
        (0..self.ks.len())
            .map(|i| pair_stats(self.times[i], &self.zb[i], &self.zy[i]))
            .collect()
    }
}

/// Runs `n_paths` paths (streams of `config.seed`) and records `Z` at `ks`.
pub fn fluctuation_ensemble(
    sim: &Simulator,
    sol: &FirstOrderSolution,
    config: &SimConfig,
    b0: f64,
    u0: &StepDensity,
    n_paths: usize,
    ks: &[usize],
    test_fns: &[TestFunction],
) -> Result<FluctuationEnsemble> {
    let n = config.n_events();
    check_mesh(config.delta, n, sol)?;
    if let Some(k) = ks.iter().find(|k| **k > n) {
        return Err(LobError::MeshMismatch(format!(
            "checkpoint {k} beyond {n} events"
        )));
    }
    let sq = config.delta.sqrt();
    let reference = reference_projections(sol, test_fns)?;
    let weights: Vec<CellWeights> = test_fns
        .iter()
        .map(|f| f.cell_weights(sim.grid()))
        .collect();
    let rows = run_ensemble(n_paths, config.seed, |_, rng| {
        let mut state = sim.initial_state(b0, u0)?;
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(ks.len());
        let mut next = 0;
        let mut obs = |k: usize, s: &LobState, _: Option<&EventRecord>| -> Result<()> {
            while next < ks.len() && ks[next] == k {
                let mut row = vec![(s.b - sol.b[k]) / sq, (s.y - sol.y[k]) / sq];
                for (i, w) in weights.iter().enumerate() {
                    row.push((w.pair(s.u.values()) - reference[i][k]) / sq);
                }
                out.push(row);
                next += 1;
            }
            Ok(())
        };
        sim.run(config, &mut state, rng, &mut obs)?;
        Ok(out)
    })?;
    let col = |i: usize, c: usize| -> Vec<f64> { rows.iter().map(|r| r[i][c]).collect() };
    Ok(FluctuationEnsemble {
        ks: ks.to_vec(),
        times: ks.iter().map(|k| *k as f64 * config.delta).collect(),
        names: test_fns.iter().map(|f| f.name().to_string()).collect(),
        zb: (0..ks.len()).map(|i| col(i, 0)).collect(),
        zy: (0..ks.len()).map(|i| col(i, 1)).collect(),
        zu: (0..test_fns.len())
            .map(|f| (0..ks.len()).map(|i| col(i, 2 + f)).collect())
            .collect(),
    })
}

/// Per-function constants for the one-step conditional moments of `<u, phi>`.
struct PhiTerms {
    weights: CellWeights,
    /// `<psi_i, phi>` per first-moment term.
    f_pair: Vec<f64>,
    /// `sum_j chi_ij Phi_j^2 / delta` per second-moment term, `Phi_j = int_cell phi`.
    g_pair: Vec<f64>,
}

impl PhiTerms {
    fn new(phi: &TestFunction, dm: &DiscreteMoments) -> Self {
        let grid = dm.grid();
        let weights = phi.cell_weights(grid);
        let f_pair = dm
            .first_profiles()
            .iter()
            .map(|psi| weights.pair(psi))
            .collect();
        let g_pair = dm
            .second_profiles()
            .iter()
            .map(|chi| {
                weights
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(i, w)| chi[weights.start + i] * w * w)
                    .sum::<f64>()
                    / grid.delta()
            })
            .collect();
        Self {
            weights,
            f_pair,
            g_pair,
        }
    }
}

/// Conditional one-step moments of `(dB, d<u, phi>)` at one state.
#[derive(Debug, Clone, Copy, Default)]
struct StepMoments {
    proj: f64,
    /// `E[d<u,phi>] / delta`.
    drift: f64,
    /// Conditional variance rate of `d<u,phi> / sqrt(delta)`.
    r: f64,
    /// Conditional covariance rate with `dB / sqrt(delta)`.
    q: f64,
}

/// Values at the checkpoints of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleDiagnostics {
    pub ks: Vec<usize>,
    pub mb: Vec<f64>,
    pub lb: Vec<f64>,
    /// `[function][checkpoint]`.
    pub mu: Vec<Vec<f64>>,
    pub lu: Vec<Vec<f64>>,
    pub n: Vec<Vec<f64>>,
    /// Accumulated compensator `sum delta Q` per function.
    pub q_integral: Vec<Vec<f64>>,
}

/// Streams the compensated processes along one path:
/// `M^B = Z^B - Z^B_0 - sum U`, `L^B = (M^B)^2 - sum delta P`,
/// `M^u(phi)` likewise, `L^u = (M^u)^2 - sum delta R`, `N = M^B M^u - sum delta Q`.
/// Compensators use the exact one-step conditional moments of the discrete
/// model at the realised states and the solver's own increments.
pub struct MartingaleTracker<'a> {
    spec: &'a ModelSpec,
    dm: &'a DiscreteMoments,
    sol: &'a FirstOrderSolution,
    reference: &'a [Vec<f64>],
    phis: Vec<PhiTerms>,
    ks: &'a [usize],
    delta: f64,
    prev_b: f64,
    prev_p: f64,
    prev_sigma: f64,
    prev: Vec<StepMoments>,
    mb: f64,
    sum_p: f64,
    mu: Vec<f64>,
    sum_r: Vec<f64>,
    sum_q: Vec<f64>,
    next: usize,
    out: MartingaleDiagnostics,
}

impl<'a> MartingaleTracker<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        dm: &'a DiscreteMoments,
        sol: &'a FirstOrderSolution,
        reference: &'a [Vec<f64>],
        test_fns: &[TestFunction],
        ks: &'a [usize],
    ) -> Self {
        let m = test_fns.len();
        Self {
            spec,
            dm,
            sol,
            reference,
            phis: test_fns.iter().map(|phi| PhiTerms::new(phi, dm)).collect(),
            ks,
            delta: dm.grid().delta(),
            prev_b: 0.0,
            prev_p: 0.0,
            prev_sigma: 0.0,
            prev: vec![StepMoments::default(); m],
            mb: 0.0,
            sum_p: 0.0,
            mu: vec![0.0; m],
            sum_r: vec![0.0; m],
            sum_q: vec![0.0; m],
            next: 0,
            out: MartingaleDiagnostics {
                ks: ks.to_vec(),
                mb: Vec::with_capacity(ks.len()),
                lb: Vec::with_capacity(ks.len()),
                mu: vec![Vec::with_capacity(ks.len()); m],
                lu: vec![Vec::with_capacity(ks.len()); m],
                n: vec![Vec::with_capacity(ks.len()); m],
                q_integral: vec![Vec::with_capacity(ks.len()); m],
            },
        }
    }

    fn prepare(&mut self, s: &LobState) {
        let probs = self.spec.probs.eval(s.b, s.y);
        let (pa, pb, p) = (probs.a, probs.b, probs.p());
        let a_coef = self.dm.first_coefs(s.b, s.y);
        let c_coef = self.dm.second_coefs(s.b, s.y);
        let d = self.delta;
        let v = s.u.values();
        self.prev_b = s.b;
        self.prev_p = p;
        self.prev_sigma = probs.sigma0_sq();
        for (i, t) in self.phis.iter().enumerate() {
            let proj = t.weights.pair(v);
            // <T_- u, phi> pairs phi with u(. - delta): index offset +1
            let alpha = (proj - t.weights.pair_offset(v, 1)) / d;
            let beta = (t.weights.pair_offset(v, -1) - proj) / d;
            let fphi: f64 = a_coef.iter().zip(&t.f_pair).map(|(a, f)| a * f).sum();
            let gphi: f64 = c_coef.iter().zip(&t.g_pair).map(|(c, g)| c * g).sum();
            let drift = pb * beta - pa * alpha + fphi;
            self.prev[i] = StepMoments {
                proj,
                drift,
                r: pa * alpha * alpha + pb * beta * beta + gphi - drift * drift,
                q: pa * alpha + pb * beta - p * drift,
            };
        }
    }

    fn emit(&mut self, k: usize) {
        while self.next < self.ks.len() && self.ks[self.next] == k {
            self.out.mb.push(self.mb);
            self.out.lb.push(self.mb * self.mb - self.sum_p);
            for i in 0..self.phis.len() {
                self.out.mu[i].push(self.mu[i]);
                self.out.lu[i].push(self.mu[i] * self.mu[i] - self.sum_r[i]);
                self.out.n[i].push(self.mb * self.mu[i] - self.sum_q[i]);
                self.out.q_integral[i].push(self.sum_q[i]);
            }
            self.next += 1;
        }
    }

    pub fn finish(self) -> MartingaleDiagnostics {
        self.out
    }
}

impl PathObserver for MartingaleTracker<'_> {
    fn observe(&mut self, k: usize, s: &LobState, _: Option<&EventRecord>) -> Result<()> {
        let d = self.delta;
        let sq = d.sqrt();
        if k > 0 {
            let sol_db = self.sol.b[k] - self.sol.b[k - 1];
            let dzb = (s.b - self.prev_b - sol_db) / sq;
            let u_b = (d * self.prev_p - sol_db) / sq;
            self.mb += dzb - u_b;
            self.sum_p += d * self.prev_sigma;
            for (i, t) in self.phis.iter().enumerate() {
                let sol_d = self.reference[i][k] - self.reference[i][k - 1];
                let dzu = (t.weights.pair(s.u.values()) - self.prev[i].proj - sol_d) / sq;
                let v = (d * self.prev[i].drift - sol_d) / sq;
                self.mu[i] += dzu - v;
                self.sum_r[i] += d * self.prev[i].r;
                self.sum_q[i] += d * self.prev[i].q;
            }
        }
        self.prepare(s);
        self.emit(k);
        Ok(())
    }
}

/// Diagnostics along a recorded path; needs the density after every event
/// (`record_stride == 1`).
pub fn martingale_diagnostics(
    sim: &Simulator,
    sol: &FirstOrderSolution,
    path: &LobPath,
    test_fns: &[TestFunction],
    ks: &[usize],
) -> Result<MartingaleDiagnostics> {
    let n = path.b.len() - 1;
    check_mesh(path.config.delta, n, sol)?;
    if path.snapshots.len() != n + 1 {
        return Err(LobError::InvalidParameter(
            "martingale diagnostics need the density after every event (record_stride = 1)".into(),
        ));
    }
    let dm = sim.spec().moments.discretize(sim.grid())?;
    let reference = reference_projections(sol, test_fns)?;
    let mut tracker = MartingaleTracker::new(sim.spec(), &dm, sol, &reference, test_fns, ks);
    for snap in &path.snapshots {
        let k = snap.k;
        let state = LobState {
            b: path.b[k],
            y: path.y[k],
            u: snap.density.clone(),
            dropped_mass: 0.0,
        };
        tracker.observe(k, &state, None)?;
    }
    Ok(tracker.finish())
}

/// Cross-path zero-mean test of one diagnostic series at every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroMeanCheck {
    pub series: String,
    pub times: Vec<f64>,
    pub means: Vec<Estimate>,
    pub k_sigma: f64,
    pub passed: bool,
}

impl ZeroMeanCheck {
    pub fn from_columns(
        series: impl Into<String>,
        times: Vec<f64>,
        columns: &[Vec<f64>],
        k_sigma: f64,
    ) -> Self {
        let means: Vec<Estimate> = columns.iter().map(|c| stats::mean_estimate(c)).collect();
        // a series that is identically zero passes trivially
        let passed = means
            .iter()
            .all(|m| m.value == 0.0 || m.within(0.0, k_sigma));
        Self {
            series: series.into(),
            times,
            means,
            k_sigma,
            passed,
        }
    }

    /// Largest `|mean| / stderr` over the checkpoints.
    pub fn max_z(&self) -> f64 {
        self.means
            .iter()
            .map(|m| {
                if m.stderr > 0.0 {
                    (m.value / m.stderr).abs()
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleEnsemble {
    pub ks: Vec<usize>,
    pub times: Vec<f64>,
    pub names: Vec<String>,
    pub paths: Vec<MartingaleDiagnostics>,
}

impl MartingaleEnsemble {
    fn columns(&self, pick: impl Fn(&MartingaleDiagnostics) -> &Vec<f64>) -> Vec<Vec<f64>> {
        (0..self.ks.len())
            .map(|i| self.paths.iter().map(|p| pick(p)[i]).collect())
            .collect()
    }

    /// Zero-mean checks for `M^B`, `L^B` and `M^u`, `L^u`, `N` per function.
    pub fn checks(&self, k_sigma: f64) -> Vec<ZeroMeanCheck> {
        let mut out = vec![
            ZeroMeanCheck::from_columns(
                "MB",
                self.times.clone(),
                &self.columns(|p| &p.mb),
                k_sigma,
            ),
            ZeroMeanCheck::from_columns(
                "LB",
                self.times.clone(),
                &self.columns(|p| &p.lb),
                k_sigma,
            ),
        ];
        for (i, name) in self.names.iter().enumerate() {
            out.push(ZeroMeanCheck::from_columns(
                format!("Mu[{name}]"),
                self.times.clone(),
                &self.columns(|p| &p.mu[i]),
                k_sigma,
            ));
            out.push(ZeroMeanCheck::from_columns(
                format!("Lu[{name}]"),
                self.times.clone(),
                &self.columns(|p| &p.lu[i]),
                k_sigma,
            ));
            out.push(ZeroMeanCheck::from_columns(
                format!("N[{name}]"),
                self.times.clone(),
                &self.columns(|p| &p.n[i]),
                k_sigma,
            ));
        }
        out
    }

    /// Zero-mean checks on the increments between consecutive checkpoints.
    pub fn increment_checks(&self, k_sigma: f64) -> Vec<ZeroMeanCheck> {
        let inc = |cols: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (1..cols.len())
                .map(|i| {
                    cols[i]
                        .iter()
                        .zip(&cols[i - 1])
                        .map(|(a, b)| a - b)
                        .collect()
                })
                .collect()
        };
        let times: Vec<f64> = self.times[1..].to_vec();
        let mut out = vec![ZeroMeanCheck::from_columns(
            "dMB",
            times.clone(),
            &inc(self.columns(|p| &p.mb)),
            k_sigma,
        )];
        for (i, name) in self.names.iter().enumerate() {
            out.push(ZeroMeanCheck::from_columns(
                format!("dMu[{name}]"),
                times.clone(),
                &inc(self.columns(|p| &p.mu[i])),
                k_sigma,
            ));
        }
        out
    }
}

/// Martingale diagnostics over `n_paths` independent paths.
pub fn martingale_ensemble(
    sim: &Simulator,
    sol: &FirstOrderSolution,
    config: &SimConfig,
    b0: f64,
    u0: &StepDensity,
    n_paths: usize,
    ks: &[usize],
    test_fns: &[TestFunction],
) -> Result<MartingaleEnsemble> {
    check_mesh(config.delta, config.n_events(), sol)?;
    let dm = sim.spec().moments.discretize(sim.grid())?;
    let reference = reference_projections(sol, test_fns)?;
    let paths = run_ensemble(n_paths, config.seed, |_, rng| {
        let mut state = sim.initial_state(b0, u0)?;
        let mut tracker = MartingaleTracker::new(sim.spec(), &dm, sol, &reference, test_fns, ks);
        sim.run(config, &mut state, rng, &mut tracker)?;
        Ok(tracker.finish())
    })?;
    Ok(MartingaleEnsemble {
        ks: ks.to_vec(),
        times: ks.iter().map(|k| *k as f64 * config.delta).collect(),
        names: test_fns.iter().map(|f| f.name().to_string()).collect(),
        paths,
    })
}

/// `count` roughly equally spaced event indices in `1..=n_events`.
pub fn spaced_checkpoints(n_events: usize, count: usize) -> Vec<usize> {
    let count = count.max(1).min(n_events.max(1));
    let mut ks: Vec<usize> = (1..=count)
        .map(|i| ((i as f64 * n_events as f64 / count as f64).round() as usize).max(1))
        .collect();
    ks.dedup();
    ks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firstorder::{solve_first_order, FirstOrderOptions};
    use crate::presets;
    use approx::assert_relative_eq;

    fn constant_setup(delta: f64, t: f64) -> (presets::Scenario, FirstOrderSolution) {
        let s = presets::constant_model(presets::ConstantParams::default(), delta).unwrap();
        let sol = solve_first_order(
            &s.spec,
            s.b0,
            &s.u0,
            &FirstOrderOptions::new(delta, t),
            &s.test_fns,
        )
        .unwrap();
        (s, sol)
    }

    #[test]
    fn fluctuations_start_at_zero_and_match_definitions() {
        let (s, sol) = constant_setup(0.004, 0.2);
        let sim = Simulator::new(&s.spec, s.grid).unwrap();
        let mut cfg = SimConfig::new(0.004, 0.2, 3);
        cfg.record_stride = 5;
        let path = sim.simulate_path(&cfg, s.b0, &s.u0).unwrap();
        let z = compute_fluctuations(&path, &sol, &s.test_fns).unwrap();
        assert_eq!(z.zb[0], 0.0);
        assert!(z.zy[0].abs() < 1e-12);
        let sq = 0.004_f64.sqrt();
        for k in 0..z.zb.len() {
            assert_relative_eq!(z.zb[k], (path.b[k] - sol.b[k]) / sq, max_relative = 1e-12);
        }
        // ZY equals <h, Z^u> recomputed from the densities
        for (i, k) in z.proj_ks.iter().enumerate() {
            let snap = &path.snapshots[i].density;
            let su = sol.density_at_step(*k).unwrap();
            let zu_h = (snap.inner_product(&s.spec.h.h) - su.inner_product(&s.spec.h.h)) / sq;
            assert!((zu_h - z.zy[*k]).abs() <= 1e-9 * zu_h.abs().max(1.0));
        }
    }

    #[test]
    fn mesh_mismatch_is_reported() {
        let (s, sol) = constant_setup(0.004, 0.2);
        let sim = Simulator::new(&s.spec, s.grid).unwrap();
        let path = sim
            .simulate_path(&SimConfig::new(0.004, 0.4, 1), s.b0, &s.u0)
            .unwrap();
        assert!(matches!(
            compute_fluctuations(&path, &sol, &[]),
            Err(LobError::MeshMismatch(_))
        ));
    }

    #[test]
    fn pure_price_fluctuation_variance() {
        let (q, delta, t) = (0.05, 0.002, 0.36);
        let s = presets::pure_price(q, delta).unwrap();
        let sol =
            solve_first_order(&s.spec, 0.0, &s.u0, &FirstOrderOptions::new(delta, t), &[]).unwrap();
        let sim = Simulator::new(&s.spec, s.grid).unwrap();
        let cfg = SimConfig::new(delta, t, 99);
        let ens = fluctuation_ensemble(&sim, &sol, &cfg, 0.0, &s.u0, 3000, &[180], &[]).unwrap();
        let st = &ens.stats()[0];
        let exact = 2.0 * q * t;
        assert!(st.var_zb.within(exact, 4.0), "{:?} vs {exact}", st.var_zb);
    }

    #[test]
    fn recorded_and_streamed_diagnostics_agree() {
        let (s, sol) = constant_setup(0.004, 0.12);
        let sim = Simulator::new(&s.spec, s.grid).unwrap();
        let mut cfg = SimConfig::new(0.004, 0.12, 8);
        cfg.record_stride = 1;
        let ks = spaced_checkpoints(cfg.n_events(), 5);
        let path = sim.simulate_path(&cfg, s.b0, &s.u0).unwrap();
        let a = martingale_diagnostics(&sim, &sol, &path, &s.test_fns, &ks).unwrap();
        let ens = martingale_ensemble(&sim, &sol, &cfg, s.b0, &s.u0, 1, &ks, &s.test_fns).unwrap();
        let b = &ens.paths[0];
        for i in 0..ks.len() {
            assert_relative_eq!(a.mb[i], b.mb[i], max_relative = 1e-10, epsilon = 1e-12);
            assert_relative_eq!(
                a.mu[0][i],
                b.mu[0][i],
                max_relative = 1e-10,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn martingales_have_zero_mean() {
        let (s, sol) = constant_setup(0.004, 0.2);
        let sim = Simulator::new(&s.spec, s.grid).unwrap();
        let cfg = SimConfig::new(0.004, 0.2, 21);
        let ks = spaced_checkpoints(cfg.n_events(), 5);
        let ens =
            martingale_ensemble(&sim, &sol, &cfg, s.b0, &s.u0, 2000, &ks, &s.test_fns).unwrap();
        for c in ens
            .checks(4.0)
            .iter()
            .chain(ens.increment_checks(4.0).iter())
        {
            assert!(c.passed, "{} max z {}", c.series, c.max_z());
        }
    }

    #[test]
    fn price_and_off_support_volume_noise_are_orthogonal() {
        // p = 0, phi away from the book and the placements: Q vanishes.
        let s = presets::pure_price(0.1, 0.004).unwrap();
        let sol = solve_first_order(
            &s.spec,
            0.0,
            &s.u0,
            &FirstOrderOptions::new(0.004, 0.2),
            &[],
        )
        .unwrap();
        let sim = Simulator::new(&s.spec, s.grid).unwrap();
        let phi = TestFunction::bump(1.6, 0.3, 1.0);
        let cfg = SimConfig::new(0.004, 0.2, 4);
        let ks = spaced_checkpoints(cfg.n_events(), 4);
        let ens = martingale_ensemble(&sim, &sol, &cfg, 0.0, &s.u0, 200, &ks, &[phi]).unwrap();
        for p in &ens.paths {
            assert!(p.q_integral[0].iter().all(|q| *q == 0.0));
        }
    }

    #[test]
    fn empirical_cross_covariance_matches_q() {
        // one-step covariance of (dB, d<u,phi>) at a frozen state
        let s = presets::constant_model(presets::ConstantParams::default(), 0.01).unwrap();
        let sim = Simulator::new(&s.spec, s.grid).unwrap();
        let dm = s.spec.moments.discretize(&s.grid).unwrap();
        let phi = &s.test_fns[0];
        let w = phi.cell_weights(&s.grid);
        let state0 = sim.initial_state(0.0, &s.u0).unwrap();
        let sol = solve_first_order(
            &s.spec,
            0.0,
            &s.u0,
            &FirstOrderOptions::new(0.01, 0.01),
            std::slice::from_ref(phi),
        )
        .unwrap();
        let reference = reference_projections(&sol, std::slice::from_ref(phi)).unwrap();
        let ks = [1usize];
        let mut tr = MartingaleTracker::new(
            &s.spec,
            &dm,
            &sol,
            &reference,
            std::slice::from_ref(phi),
            &ks,
        );
        tr.prepare(&state0);
        let q = tr.prev[0].q;
        let r = tr.prev[0].r;
        let n = 400_000;
        let mut rng = crate::rng::stream(31, 0);
        let (mut db, mut du) = (Vec::with_capacity(n), Vec::with_capacity(n));
        let p0 = w.pair(state0.u.values());
        for _ in 0..n {
            let mut st = state0.clone();
            sim.step(&mut st, &mut rng).unwrap();
            db.push(st.b / 0.1);
            du.push((w.pair(st.u.values()) - p0) / 0.1);
        }
        let cov = stats::covariance_estimate(&db, &du);
        let var = stats::variance_estimate(&du);
        // per-step covariance of the sqrt(delta)-scaled increments is delta * rate
        assert!(cov.within(0.01 * q, 4.0), "{cov:?} vs {}", 0.01 * q);
        assert!(var.within(0.01 * r, 4.0), "{var:?} vs {}", 0.01 * r);
    }

    #[test]
    fn checkpoints_are_spread() {
        assert_eq!(spaced_checkpoints(180, 20).len(), 20);
        assert_eq!(*spaced_checkpoints(180, 20).last().unwrap(), 180);
        assert_eq!(spaced_checkpoints(3, 20), vec![1, 2, 3]);
    }
}
