//! Event-by-event simulation of the discrete order book.
//!
//! Each event is a market order (A: price down one tick, book shifts right),
//! a spread placement (B: price up one tick, book shifts left) or a passive
//! placement/cancellation (C: one cell's density changes by `omega`).

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};
use crate::grid::{CellWeights, Direction, StepDensity, TestFunction, TickGrid};
use crate::params::{DiscreteMoments, IndicatorKind, ModelSpec};
use crate::rng::{self, PathRng};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub delta: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Store the density every `record_stride` events (0 stores none).
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(delta: f64, horizon: f64, seed: u64) -> Self {
        Self {
            delta,
            horizon,
            seed,
            record_stride: 0,
        }
    }

    /// `T_n = floor(T / delta)`.
    pub fn n_events(&self) -> usize {
        (self.horizon / self.delta + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.horizon > 0.0) {
            return Err(LobError::InvalidParameter(format!(
                "delta and horizon must be positive (delta = {}, horizon = {})",
                self.delta, self.horizon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    A,
    B,
    C,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::A => "A",
            EventKind::B => "B",
            EventKind::C => "C",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    pub cell: Option<usize>,
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LobState {
    pub b: f64,
    pub u: StepDensity,
    pub y: f64,
    pub dropped_mass: f64,
}

/// Receives the state at `k = 0` and after every event.
pub trait PathObserver {
    fn observe(&mut self, k: usize, state: &LobState, event: Option<&EventRecord>) -> Result<()>;
}

impl<F: FnMut(usize, &LobState, Option<&EventRecord>) -> Result<()>> PathObserver for F {
    fn observe(&mut self, k: usize, state: &LobState, event: Option<&EventRecord>) -> Result<()> {
        self(k, state, event)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub k: usize,
    pub density: StepDensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobPath {
    pub config: SimConfig,
    pub b: Vec<f64>,
    pub y: Vec<f64>,
    /// Density of the top visible cell `(-delta, 0]` after each event.
    pub top: Vec<f64>,
    pub events: Vec<EventRecord>,
    pub snapshots: Vec<Snapshot>,
    pub dropped_mass: f64,
    pub clamp_count: u64,
}

impl LobPath {
    pub fn times(&self) -> Vec<f64> {
        (0..self.b.len())
            .map(|k| k as f64 * self.config.delta)
            .collect()
    }

    /// `k,t,B,Y,event_kind`; the first row has an empty event.
    pub fn write_prices_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["k", "t", "B", "Y", "event_kind"])?;
        for k in 0..self.b.len() {
            let kind = if k == 0 {
                ""
            } else {
                self.events[k - 1].kind.as_str()
            };
            wtr.write_record([
                k.to_string(),
                format!("{}", k as f64 * self.config.delta),
                format!("{}", self.b[k]),
                format!("{}", self.y[k]),
                kind.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Relative tolerance for the incremental volume indicator.
const Y_TOL: f64 = 1e-9;

pub struct Simulator<'a> {
    spec: &'a ModelSpec,
    grid: TickGrid,
    moments: DiscreteMoments,
    h_weights: CellWeights,
}

impl<'a> Simulator<'a> {
    pub fn new(spec: &'a ModelSpec, grid: TickGrid) -> Result<Self> {
        Ok(Self {
            spec,
            grid,
            moments: spec.moments.discretize(&grid)?,
            h_weights: spec.h.h.cell_weights(&grid),
        })
    }

    pub fn grid(&self) -> &TickGrid {
        &self.grid
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    /// `<u, h>`.
    pub fn volume(&self, u: &StepDensity) -> f64 {
        self.h_weights.pair(u.values())
    }

    pub fn initial_state(&self, b0: f64, u0: &StepDensity) -> Result<LobState> {
        if *u0.grid() != self.grid {
            return Err(LobError::GridMismatch(format!(
                "initial density grid {:?} vs simulation grid {:?}",
                u0.grid(),
                self.grid
            )));
        }
        Ok(LobState {
            b: b0,
            y: self.volume(u0),
            u: u0.clone(),
            dropped_mass: 0.0,
        })
    }

    fn shift(&self, state: &mut LobState, dir: Direction) {
        let top = self.grid.top_cell();
        let delta = self.grid.delta();
        match self.spec.h.kind {
            IndicatorKind::LeftIndicator => {
                let v = state.u.values();
                state.y += match dir {
                    Direction::Minus => -v[top] * delta,
                    Direction::Plus => (v[top + 1] - v[0]) * delta,
                };
                state.dropped_mass += state.u.shift_in_place(dir).abs();
            }
            IndicatorKind::Smooth => {
                state.dropped_mass += state.u.shift_in_place(dir).abs();
                state.y = self.volume(&state.u);
            }
        }
    }

    /// Draws one event at the current state and applies it.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut LobState, rng: &mut R) -> Result<EventRecord> {
        let probs = self.spec.probs.eval(state.b, state.y);
        let draw = rng.random::<f64>();
        let delta = self.grid.delta();
        if draw < probs.a {
            state.b -= delta;
            self.shift(state, Direction::Minus);
            return Ok(EventRecord {
                kind: EventKind::A,
                cell: None,
                omega: None,
            });
        }
        if draw < probs.a + probs.b {
            state.b += delta;
            self.shift(state, Direction::Plus);
            return Ok(EventRecord {
                kind: EventKind::B,
                cell: None,
                omega: None,
            });
        }
        let law =
            self.moments
                .placement_law(state.b, state.y, probs.c(), self.spec.volume_bound)?;
        match self.moments.sample(&law, rng)? {
            None => Ok(EventRecord {
                kind: EventKind::C,
                cell: None,
                omega: Some(0.0),
            }),
            Some((j, omega)) => {
                // density rises by omega on one cell: mass delta * omega
                state.u.values_mut()[j] += omega;
                if j >= self.h_weights.start && j < self.h_weights.end() {
                    state.y += omega * self.h_weights.weights[j - self.h_weights.start];
                }
                Ok(EventRecord {
                    kind: EventKind::C,
                    cell: Some(j),
                    omega: Some(omega),
                })
            }
        }
    }

    /// Re-synchronises `Y` with the density; errors if the drift is larger
    /// than round-off.
    fn resync_volume(&self, state: &mut LobState, k: usize) -> Result<()> {
        let exact = self.volume(&state.u);
        let scale = exact
            .abs()
            .max(self.h_weights.pair_abs(state.u.values()))
            .max(1e-300);
        if (exact - state.y).abs() > Y_TOL * scale {
            return Err(LobError::InvalidParameter(format!(
                "volume indicator drifted at event {k}: incremental {} vs recomputed {exact}",
                state.y
            )));
        }
        state.y = exact;
        Ok(())
    }

    /// Runs `config.n_events()` events from `state`, reporting to `observer`.
    pub fn run<R: Rng + ?Sized, O: PathObserver + ?Sized>(
        &self,
        config: &SimConfig,
        state: &mut LobState,
        rng: &mut R,
        observer: &mut O,
    ) -> Result<()> {
        config.validate()?;
        if (config.delta - self.grid.delta()).abs() > 1e-12 * self.grid.delta() {
            return Err(LobError::GridMismatch(format!(
                "config delta {} vs grid delta {}",
                config.delta,
                self.grid.delta()
            )));
        }
        let n = config.n_events();
        // full recomputation guards accumulated round-off in Y
        let resync = if config.record_stride > 0 {
            config.record_stride
        } else {
            256
        };
        observer.observe(0, state, None)?;
        for k in 1..=n {
            let ev = self.step(state, rng)?;
            if k % resync == 0 {
                self.resync_volume(state, k)?;
            }
            observer.observe(k, state, Some(&ev))?;
        }
        Ok(())
    }

    /// A fully recorded path driven by `config.seed`.
    pub fn simulate_path(&self, config: &SimConfig, b0: f64, u0: &StepDensity) -> Result<LobPath> {
        let mut rng = rng::stream(config.seed, 0);
        self.simulate_path_with(config, b0, u0, &mut rng)
    }

    pub fn simulate_path_with<R: Rng + ?Sized>(
        &self,
        config: &SimConfig,
        b0: f64,
        u0: &StepDensity,
        rng: &mut R,
    ) -> Result<LobPath> {
        let mut state = self.initial_state(b0, u0)?;
        let n = config.n_events();
        let top = self.grid.top_cell();
        let mut path = LobPath {
            config: *config,
            b: Vec::with_capacity(n + 1),
            y: Vec::with_capacity(n + 1),
            top: Vec::with_capacity(n + 1),
            events: Vec::with_capacity(n),
            snapshots: Vec::new(),
            dropped_mass: 0.0,
            clamp_count: 0,
        };
        let stride = config.record_stride;
        let mut rec = |k: usize, s: &LobState, ev: Option<&EventRecord>| -> Result<()> {
            path.b.push(s.b);
            path.y.push(s.y);
            path.top.push(s.u.values()[top]);
            if let Some(ev) = ev {
                path.events.push(*ev);
            }
            if stride > 0 && (k.is_multiple_of(stride) || k == n) {
                path.snapshots.push(Snapshot {
                    k,
                    density: s.u.clone(),
                });
            }
            Ok(())
        };
        self.run(config, &mut state, rng, &mut rec)?;
        path.dropped_mass = state.dropped_mass;
        path.clamp_count = self.spec.probs.clamp_count();
        Ok(path)
    }
}

impl CellWeights {
    /// `sum_j |values[j] * weights[j]|`, a scale for relative comparisons.
    pub fn pair_abs(&self, values: &[f64]) -> f64 {
        values[self.start..self.end()]
            .iter()
            .zip(&self.weights)
            .map(|(u, w)| (u * w).abs())
            .sum()
    }
}

/// Runs `per_path` for every path index in parallel with its own stream.
/// Output order is the index order regardless of scheduling.
pub fn run_ensemble<T, F>(n_paths: usize, base_seed: u64, per_path: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut PathRng) -> Result<T> + Sync,
{
    if n_paths == 0 {
        return Err(LobError::InvalidParameter(
            "n_paths must be at least 1".into(),
        ));
    }
    let results: Vec<Result<T>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(base_seed, i as u64);
            per_path(i, &mut rng)
        })
        .collect();
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| LobError::Path {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Cross-path statistics at one recorded event index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePoint {
    pub k: usize,
    pub t: f64,
    pub mean_b: f64,
    pub var_b: f64,
    pub mean_y: f64,
    pub var_y: f64,
    pub cov_by: f64,
    pub proj_mean: Vec<f64>,
    pub proj_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub base_seed: u64,
    pub delta: f64,
    pub test_fns: Vec<String>,
    pub points: Vec<EnsemblePoint>,
    pub dropped_mass: f64,
}

/// Event indices `0, stride, 2 stride, ...` plus the last event.
pub fn checkpoints(n_events: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut ks: Vec<usize> = (0..=n_events).step_by(stride).collect();
    if *ks.last().unwrap() != n_events {
        ks.push(n_events);
    }
    ks
}

/// Independent paths from `(base_seed, path_index)` streams, summarised at
/// `checkpoints(T_n, record_stride)`.
pub fn simulate_ensemble(
    sim: &Simulator,
    config: &SimConfig,
    b0: f64,
    u0: &StepDensity,
    n_paths: usize,
    test_fns: &[TestFunction],
) -> Result<EnsembleSummary> {
    let ks = checkpoints(config.n_events(), config.record_stride);
    let weights: Vec<CellWeights> = test_fns
        .iter()
        .map(|f| f.cell_weights(sim.grid()))
        .collect();
    let per_path = run_ensemble(n_paths, config.seed, |_, rng| {
        let mut state = sim.initial_state(b0, u0)?;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(ks.len());
        let mut next = 0;
        let mut obs = |k: usize, s: &LobState, _: Option<&EventRecord>| -> Result<()> {
            if next < ks.len() && ks[next] == k {
                let mut row = vec![s.b, s.y];
                row.extend(weights.iter().map(|w| w.pair(s.u.values())));
                rows.push(row);
                next += 1;
            }
            Ok(())
        };
        sim.run(config, &mut state, rng, &mut obs)?;
        Ok((rows, state.dropped_mass))
    })?;
    let column =
        |i: usize, c: usize| -> Vec<f64> { per_path.iter().map(|(rows, _)| rows[i][c]).collect() };
    let points = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let b = column(i, 0);
            let y = column(i, 1);
            let (proj_mean, proj_var) = (0..test_fns.len())
                .map(|f| {
                    let v = column(i, 2 + f);
                    (
                        stats::mean(&v),
                        if n_paths > 1 {
                            stats::variance(&v)
                        } else {
                            0.0
                        },
                    )
                })
                .unzip();
            let var = |x: &[f64]| if n_paths > 1 { stats::variance(x) } else { 0.0 };
            EnsemblePoint {
                k,
                t: k as f64 * config.delta,
                mean_b: stats::mean(&b),
                var_b: var(&b),
                mean_y: stats::mean(&y),
                var_y: var(&y),
                cov_by: if n_paths > 1 {
                    stats::covariance(&b, &y)
                } else {
                    0.0
                },
                proj_mean,
                proj_var,
            }
        })
        .collect();
    Ok(EnsembleSummary {
        n_paths,
        base_seed: config.seed,
        delta: config.delta,
        test_fns: test_fns.iter().map(|f| f.name().to_string()).collect(),
        points,
        dropped_mass: per_path.iter().map(|(_, d)| d).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{coef, EventProbabilityFns, PlacementMomentFns, VolumeIndicator};
    use crate::presets;
    use approx::assert_relative_eq;

    fn spec_with(p_a: f64, p_b: f64, moments: PlacementMomentFns) -> ModelSpec {
        ModelSpec::new(
            EventProbabilityFns::constant(p_a, p_b),
            moments,
            VolumeIndicator::left_indicator(),
            1.0,
        )
        .with_volume_bound(5.0)
    }

    #[test]
    fn forced_market_orders_shift_right() {
        let grid = TickGrid::new(0.1, 2.0).unwrap();
        let spec = spec_with(1.0, 0.0, PlacementMomentFns::zero());
        let sim = Simulator::new(&spec, grid).unwrap();
        let u0 = StepDensity::from_fn(grid, |x| if x.abs() < 1.0 { 1.0 + x } else { 0.0 });
        let mut state = sim.initial_state(0.0, &u0).unwrap();
        let mut rng = rng::stream(1, 0);
        let ev = sim.step(&mut state, &mut rng).unwrap();
        assert_eq!(ev.kind, EventKind::A);
        assert_relative_eq!(state.b, -0.1);
        for j in 1..grid.n_cells() {
            assert_eq!(state.u.values()[j], u0.values()[j - 1]);
        }
        assert_relative_eq!(state.y, sim.volume(&state.u), max_relative = 1e-12);
    }

    #[test]
    fn spread_placements_move_price_up() {
        let grid = TickGrid::new(0.002, 1.0).unwrap();
        let spec = spec_with(0.0, 1.0, PlacementMomentFns::zero());
        let sim = Simulator::new(&spec, grid).unwrap();
        let cfg = SimConfig::new(0.002, 0.36, 3);
        let u0 = StepDensity::from_fn(grid, |x| if x.abs() < 0.5 { 1.0 } else { 0.0 });
        let path = sim.simulate_path(&cfg, 1.0, &u0).unwrap();
        assert_eq!(cfg.n_events(), 180);
        assert_relative_eq!(path.b[180], 1.0 + 180.0 * 0.002, max_relative = 1e-12);
    }

    #[test]
    fn deterministic_placement_accumulates_mass() {
        // g = v^2 / delta and f = v / delta on one cell, p_C = 1: omega == v on that cell.
        let delta = 0.1;
        let grid = TickGrid::new(delta, 1.0).unwrap();
        let j = 7;
        let (a, b) = (grid.x_left(j), grid.x_right(j));
        let v = 0.3;
        let cell = TestFunction::indicator(a, b);
        let moments = PlacementMomentFns::separable(
            coef(move |_, _| v / delta),
            coef(move |_, _| v * v / delta),
            cell,
        );
        let spec = spec_with(0.0, 0.0, moments);
        let sim = Simulator::new(&spec, grid).unwrap();
        let u0 = StepDensity::zeros(grid);
        let mut state = sim.initial_state(0.0, &u0).unwrap();
        let mut rng = rng::stream(9, 0);
        let k = 25;
        for _ in 0..k {
            let ev = sim.step(&mut state, &mut rng).unwrap();
            assert_eq!(ev.cell, Some(j));
            assert_relative_eq!(ev.omega.unwrap(), v, max_relative = 1e-12);
        }
        assert_relative_eq!(state.u.mass(), k as f64 * delta * v, max_relative = 1e-12);
        assert_relative_eq!(state.y, k as f64 * delta * v, max_relative = 1e-12);
    }

    #[test]
    fn noop_placements_leave_state_unchanged() {
        let grid = TickGrid::new(0.01, 1.0).unwrap();
        let spec = spec_with(0.0, 0.0, PlacementMomentFns::zero());
        let sim = Simulator::new(&spec, grid).unwrap();
        let u0 = StepDensity::from_fn(grid, |x| (1.0 - x * x).max(0.0));
        let path = sim
            .simulate_path(&SimConfig::new(0.01, 1.0, 0), 0.5, &u0)
            .unwrap();
        assert!(path.b.iter().all(|b| *b == 0.5));
        assert!(path.y.iter().all(|y| *y == path.y[0]));
    }

    #[test]
    fn event_frequencies_match_probabilities() {
        let grid = TickGrid::new(0.01, 1.0).unwrap();
        let spec = spec_with(0.2, 0.3, PlacementMomentFns::zero());
        let sim = Simulator::new(&spec, grid).unwrap();
        let u0 = StepDensity::zeros(grid);
        let mut state = sim.initial_state(0.0, &u0).unwrap();
        let mut rng = rng::stream(17, 0);
        let n = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            // freeze the state: the law does not depend on it here
            let ev = sim.step(&mut state, &mut rng).unwrap();
            counts[ev.kind as usize] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() <= 4.0 * se);
        }
    }

    #[test]
    fn path_invariants_on_constant_model() {
        let s = presets::constant_model(presets::ConstantParams::default(), 0.002).unwrap();
        let sim = Simulator::new(&s.spec, s.grid).unwrap();
        let mut cfg = SimConfig::new(0.002, 0.36, 5);
        cfg.record_stride = 20;
        let path = sim.simulate_path(&cfg, s.b0, &s.u0).unwrap();
        for (k, ev) in path.events.iter().enumerate() {
            let db = path.b[k + 1] - path.b[k];
            let expect = match ev.kind {
                EventKind::A => -0.002,
                EventKind::B => 0.002,
                EventKind::C => 0.0,
            };
            assert!((db - expect).abs() < 1e-12);
        }
        for snap in &path.snapshots {
            let y = sim.volume(&snap.density);
            assert!((y - path.y[snap.k]).abs() <= 1e-9 * y.abs().max(1.0));
        }
        assert_eq!(path.dropped_mass, 0.0);
    }

    #[test]
    fn shadow_book_does_not_enter_volume() {
        let grid = TickGrid::new(0.1, 1.0).unwrap();
        let spec = spec_with(0.5, 0.5, PlacementMomentFns::zero());
        let sim = Simulator::new(&spec, grid).unwrap();
        let mut u = StepDensity::zeros(grid);
        u.values_mut()[grid.first_shadow_cell() + 2] = 7.0;
        assert_eq!(sim.volume(&u), 0.0);
    }

    #[test]
    fn pure_shifts_preserve_norm() {
        let s = presets::pure_price(0.3, 0.01).unwrap();
        let sim = Simulator::new(&s.spec, s.grid).unwrap();
        let mut state = sim.initial_state(0.0, &s.u0).unwrap();
        let n0 = s.u0.l2_norm();
        let mut rng = rng::stream(2, 0);
        for _ in 0..50 {
            sim.step(&mut state, &mut rng).unwrap();
            assert_relative_eq!(state.u.l2_norm(), n0, max_relative = 1e-12);
        }
    }

    #[test]
    fn ensembles_are_reproducible() {
        let s = presets::constant_model(presets::ConstantParams::default(), 0.004).unwrap();
        let sim = Simulator::new(&s.spec, s.grid).unwrap();
        let mut cfg = SimConfig::new(0.004, 0.2, 77);
        cfg.record_stride = 10;
        let a = simulate_ensemble(&sim, &cfg, 0.0, &s.u0, 16, &s.test_fns).unwrap();
        let b = simulate_ensemble(&sim, &cfg, 0.0, &s.u0, 16, &s.test_fns).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let single = simulate_ensemble(&sim, &cfg, 0.0, &s.u0, 1, &s.test_fns).unwrap();
        let path = sim.simulate_path(&cfg, 0.0, &s.u0).unwrap();
        let last = single.points.last().unwrap();
        assert_eq!(last.mean_b, *path.b.last().unwrap());
        assert_eq!(last.mean_y, *path.y.last().unwrap());
    }

    #[test]
    fn pure_price_variance_closed_form() {
        let (q, delta, t) = (0.05, 0.002, 0.36);
        let s = presets::pure_price(q, delta).unwrap();
        let sim = Simulator::new(&s.spec, s.grid).unwrap();
        let mut cfg = SimConfig::new(delta, t, 123);
        cfg.record_stride = 180;
        let sum = simulate_ensemble(&sim, &cfg, 0.0, &s.u0, 4000, &[]).unwrap();
        let var = sum.points.last().unwrap().var_b;
        let exact = delta * t * 2.0 * q;
        // Var of a sample variance of a near-Gaussian sum: 2 sigma^4 / (n - 1)
        let se = exact * (2.0 / 3999.0_f64).sqrt();
        assert!((var - exact).abs() <= 4.0 * se, "{var} vs {exact}");
    }

    #[test]
    fn prices_csv_layout() {
        let s = presets::pure_price(0.3, 0.01).unwrap();
        let sim = Simulator::new(&s.spec, s.grid).unwrap();
        let path = sim
            .simulate_path(&SimConfig::new(0.01, 0.05, 1), 0.0, &s.u0)
            .unwrap();
        let mut buf = Vec::new();
        path.write_prices_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,t,B,Y,event_kind");
        assert_eq!(lines.len(), 7);
    }
}
