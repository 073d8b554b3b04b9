//! Deterministic first-order limit: `B' = p(B, Y)`, `u_t = p u_x + f(B, Y)`,
//! `Y = <h, u>`, solved by a semi-Lagrangian scheme.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};
use crate::grid::{CellWeights, StepDensity, TestFunction, TickGrid};
use crate::params::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirstOrderOptions {
    pub dt: f64,
    pub horizon: f64,
    /// Keep the density every `store_stride` steps (the last step is always kept).
    pub store_stride: usize,
}

impl FirstOrderOptions {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            store_stride: 1,
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderSolution {
    pub dt: f64,
    pub times: Vec<f64>,
    pub b: Vec<f64>,
    pub y: Vec<f64>,
    /// Cumulative `int_0^t p ds`.
    pub characteristic: Vec<f64>,
    /// Midpoint `p` used on step `i -> i+1`.
    pub p_steps: Vec<f64>,
    /// Density of the top visible cell.
    pub top: Vec<f64>,
    /// `(step index, density)` pairs.
    pub u: Vec<(usize, StepDensity)>,
    /// `<u(t_i), phi>` for each requested test function.
    pub projections: Vec<Vec<f64>>,
    pub projection_names: Vec<String>,
    pub sup_l2: f64,
}

/// Value at fractional cell index `r` (cell centres at integers) of the
/// piecewise-linear interpolant, with zero ghost values beyond the grid.
/// Never leaves the range of its two neighbours.
fn interpolate_index(u: &[f64], r: f64) -> f64 {
    let i = r.floor();
    let w = r - i;
    let at = |k: f64| {
        if k < 0.0 || k >= u.len() as f64 {
            0.0
        } else {
            u[k as usize]
        }
    };
    if w == 0.0 {
        at(i)
    } else {
        (1.0 - w) * at(i) + w * at(i + 1.0)
    }
}

/// Value at `z` of the piecewise-linear interpolant through the cell centres.
pub fn interpolate(u: &[f64], grid: &TickGrid, z: f64) -> f64 {
    interpolate_index(u, (z + grid.half_width()) / grid.delta() - 0.5)
}

/// `x -> u(x + shift)` resampled at the cell centres.
pub fn shift_interpolate(u: &[f64], grid: &TickGrid, shift: f64) -> Vec<f64> {
    let s = shift / grid.delta();
    (0..u.len())
        .map(|j| interpolate_index(u, j as f64 + s))
        .collect()
}

struct Stepper {
    grid: TickGrid,
    h: CellWeights,
}

impl Stepper {
    /// `u(x + p dt) + dt f(x + p dt / 2)`.
    fn advance(&self, u: &[f64], p: f64, f: &StepDensity, dt: f64) -> Vec<f64> {
        let fv = f.values();
        let s = p * dt / self.grid.delta();
        (0..u.len())
            .map(|j| {
                let r = j as f64;
                interpolate_index(u, r + s) + dt * interpolate_index(fv, r + 0.5 * s)
            })
            .collect()
    }

    fn volume(&self, u: &[f64]) -> f64 {
        self.h.pair(u)
    }
}

pub fn solve_first_order(
    spec: &ModelSpec,
    b0: f64,
    u0: &StepDensity,
    opts: &FirstOrderOptions,
    test_fns: &[TestFunction],
) -> Result<FirstOrderSolution> {
    if !(opts.dt > 0.0 && opts.horizon > 0.0) {
        return Err(LobError::InvalidParameter(format!(
            "dt and horizon must be positive (dt = {}, horizon = {})",
            opts.dt, opts.horizon
        )));
    }
    let grid = *u0.grid();
    if opts.dt > grid.delta() * (1.0 + 1e-12) {
        log::warn!(
            "first-order dt {} exceeds the grid spacing {}; interpolation error grows",
            opts.dt,
            grid.delta()
        );
    }
    let st = Stepper {
        grid,
        h: spec.h.h.cell_weights(&grid),
    };
    let weights: Vec<CellWeights> = test_fns.iter().map(|f| f.cell_weights(&grid)).collect();
    let n = opts.n_steps();
    let stride = opts.store_stride.max(1);
    let dt = opts.dt;
    let top_cell = grid.top_cell();

    let mut u = u0.values().to_vec();
    let mut b = b0;
    let mut y = st.volume(&u);
    let mut sol = FirstOrderSolution {
        dt,
        times: Vec::with_capacity(n + 1),
        b: Vec::with_capacity(n + 1),
        y: Vec::with_capacity(n + 1),
        characteristic: Vec::with_capacity(n + 1),
        p_steps: Vec::with_capacity(n),
        top: Vec::with_capacity(n + 1),
        u: Vec::new(),
        projections: vec![Vec::with_capacity(n + 1); test_fns.len()],
        projection_names: test_fns.iter().map(|f| f.name().to_string()).collect(),
        sup_l2: 0.0,
    };
    let mut chi = 0.0;
    let l2 = |u: &[f64]| (u.iter().map(|v| v * v).sum::<f64>() * grid.delta()).sqrt();
    let record = |sol: &mut FirstOrderSolution, i: usize, b: f64, y: f64, chi: f64, u: &[f64]| {
        sol.times.push(i as f64 * dt);
        sol.b.push(b);
        sol.y.push(y);
        sol.characteristic.push(chi);
        sol.top.push(u[top_cell]);
        for (k, w) in weights.iter().enumerate() {
            sol.projections[k].push(w.pair(u));
        }
        sol.sup_l2 = sol.sup_l2.max(l2(u));
        if i.is_multiple_of(stride) || i == n {
            sol.u.push((
                i,
                StepDensity::from_values(grid, u.to_vec()).expect("grid-sized"),
            ));
        }
    };
    record(&mut sol, 0, b, y, chi, &u);
    for i in 1..=n {
        // predictor: half step with the start-of-step coefficients
        let p0 = spec.probs.p(b, y);
        let f0 = spec.moments.f(&grid, b, y);
        let u_half = st.advance(&u, p0, &f0, 0.5 * dt);
        let b_half = b + 0.5 * dt * p0;
        let y_half = st.volume(&u_half);
        // corrector: full step with midpoint coefficients
        let pm = spec.probs.p(b_half, y_half);
        let fm = spec.moments.f(&grid, b_half, y_half);
        u = st.advance(&u, pm, &fm, dt);
        b += dt * pm;
        chi += dt * pm;
        y = st.volume(&u);
        sol.p_steps.push(pm);
        record(&mut sol, i, b, y, chi, &u);
    }
    Ok(sol)
}

impl FirstOrderSolution {
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn grid(&self) -> &TickGrid {
        self.u[0].1.grid()
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let horizon = self.horizon();
        if !(t >= -1e-12 && t <= horizon + 1e-12) {
            return Err(LobError::TimeOutOfRange { t, horizon });
        }
        let r = (t / self.dt).clamp(0.0, (self.times.len() - 1) as f64);
        let i = (r.floor() as usize).min(self.times.len().saturating_sub(2));
        Ok((i, r - i as f64))
    }

    /// Step index of `t` when `t` lies on the mesh.
    pub fn mesh_index(&self, t: f64) -> Option<usize> {
        let r = t / self.dt;
        let i = r.round();
        ((r - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < self.times.len()).then_some(i as usize)
    }

    /// `(B, Y, u)` at time `t`: linear in time for `B` and `Y`, nearest stored
    /// density transported by the characteristic difference for `u`.
    pub fn evaluate(&self, t: f64) -> Result<(f64, f64, StepDensity)> {
        let (i, w) = self.locate(t)?;
        let lerp = |v: &[f64]| {
            if w == 0.0 || i + 1 >= v.len() {
                v[i]
            } else {
                (1.0 - w) * v[i] + w * v[i + 1]
            }
        };
        let (b, y, chi) = (lerp(&self.b), lerp(&self.y), lerp(&self.characteristic));
        let target = i as f64 + w;
        let (k, u) = self
            .u
            .iter()
            .min_by(|a, b| {
                (a.0 as f64 - target)
                    .abs()
                    .total_cmp(&(b.0 as f64 - target).abs())
            })
            .expect("at least the initial density is stored");
        let u = if (*k as f64 - target).abs() < 1e-9 {
            u.clone()
        } else {
            let shift = chi - self.characteristic[*k];
            StepDensity::from_values(*u.grid(), shift_interpolate(u.values(), u.grid(), shift))?
        };
        Ok((b, y, u))
    }

    /// Stored density at step `i`, if kept.
    pub fn density_at_step(&self, i: usize) -> Option<&StepDensity> {
        self.u
            .binary_search_by_key(&i, |(k, _)| *k)
            .ok()
            .map(|idx| &self.u[idx].1)
    }

    /// `t,B,Y,characteristic`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "B", "Y", "characteristic"])?;
        for i in 0..self.times.len() {
            wtr.write_record([
                format!("{}", self.times[i]),
                format!("{}", self.b[i]),
                format!("{}", self.y[i]),
                format!("{}", self.characteristic[i]),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Reference bound for pure transport at speed `c` with `dt = delta`: the
/// step-function representation error `delta ||u0'|| / sqrt(12)` plus the
/// accumulated interpolation diffusion `t delta s (1 - s) / 2 ||u0''||`,
/// `s` the fractional cell shift per step. Norms are `L2`.
pub fn transport_error_bound(delta: f64, dt: f64, c: f64, t: f64, du_l2: f64, d2u_l2: f64) -> f64 {
    let s = (c * dt / delta).abs().fract();
    delta * du_l2 / 12f64.sqrt() + t * delta * delta / dt * s * (1.0 - s) / 2.0 * d2u_l2
}
