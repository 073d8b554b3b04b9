//! Galerkin truncation of the limiting SPDE on a real Fourier basis of the
//! periodic interval `[-L, L]`.
//!
//! The evolution family is a translation by `int p`, which acts on each
//! cosine/sine pair as a rotation, so it is applied exactly. Only the
//! lower-order drift and the noise are time-stepped.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};
use crate::firstorder::FirstOrderSolution;
use crate::fluctuations::{pair_stats, FluctuationStats};
use crate::grid::{gauss_legendre, Direction, StepDensity, TestFunction, TickGrid};
use crate::linalg::{psd_sqrt, FactorReport, PsdFactor};
use crate::microsim::run_ensemble;
use crate::params::ModelSpec;

use super::simplified::EnsembleOptions;

/// Orthonormal modes `1/sqrt(2L)`, then `cos(k pi x / L)/sqrt(L)`,
/// `sin(k pi x / L)/sqrt(L)` for `k = 1..=n_pairs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierBasis {
    pub half_width: f64,
    pub n_pairs: usize,
}

impl FourierBasis {
    /// Basis with `1 + 2 * (k / 2)` modes, so translations stay exact.
    pub fn with_modes(half_width: f64, k: usize) -> Result<Self> {
        if k == 0 || !(half_width > 0.0) {
            return Err(LobError::InvalidParameter(format!(
                "need K >= 1 and L > 0; got {k}, {half_width}"
            )));
        }
        Ok(Self {
            half_width,
            n_pairs: k / 2,
        })
    }

    pub fn n_modes(&self) -> usize {
        1 + 2 * self.n_pairs
    }

    fn freq(&self, m: usize) -> f64 {
        m.div_ceil(2) as f64 * PI / self.half_width
    }

    pub fn eval(&self, m: usize, x: f64) -> f64 {
        let l = self.half_width;
        if m == 0 {
            return 1.0 / (2.0 * l).sqrt();
        }
        let w = self.freq(m);
        if m % 2 == 1 {
            (w * x).cos() / l.sqrt()
        } else {
            (w * x).sin() / l.sqrt()
        }
    }

    /// Exact integral of mode `m` over `[a, b]`.
    pub fn integral(&self, m: usize, a: f64, b: f64) -> f64 {
        let l = self.half_width;
        if m == 0 {
            return (b - a) / (2.0 * l).sqrt();
        }
        let w = self.freq(m);
        let (mid, half) = (0.5 * w * (a + b), 0.5 * w * (b - a));
        // sum-to-product forms avoid cancellation on short cells
        let v = if m % 2 == 1 {
            2.0 * mid.cos() * half.sin()
        } else {
            2.0 * mid.sin() * half.sin()
        };
        v / (w * l.sqrt())
    }

    /// Cell means of every mode, `n_cells x n_modes`.
    pub fn cell_means(&self, grid: &TickGrid) -> DMatrix<f64> {
        let d = grid.delta();
        DMatrix::from_fn(grid.n_cells(), self.n_modes(), |j, m| {
            self.integral(m, grid.x_left(j), grid.x_right(j)) / d
        })
    }

    /// Coordinates of `x -> f(x + shift)` given those of `f`.
    pub fn translate(&self, coords: &mut [f64], shift: f64) {
        if shift == 0.0 {
            return;
        }
        for k in 1..=self.n_pairs {
            let (s, c) = (self.freq(2 * k - 1) * shift).sin_cos();
            let (a, b) = (coords[2 * k - 1], coords[2 * k]);
            coords[2 * k - 1] = a * c + b * s;
            coords[2 * k] = b * c - a * s;
        }
    }

    /// `<phi, e_m>` by per-cell Gauss-Legendre quadrature.
    pub fn project_fn(&self, phi: &TestFunction, grid: &TickGrid) -> DVector<f64> {
        let (lo, hi) = phi
            .support()
            .unwrap_or((-grid.half_width(), grid.half_width()));
        let cells = grid.cells_covering(lo, hi);
        DVector::from_fn(self.n_modes(), |m, _| {
            cells
                .clone()
                .map(|j| {
                    let a = grid.x_left(j).max(lo);
                    let b = grid.x_right(j).min(hi);
                    if b <= a {
                        0.0
                    } else {
                        gauss_legendre(&|x| phi.eval(x) * self.eval(m, x), a, b)
                    }
                })
                .sum()
        })
    }

    /// Weight `(1 + omega_m^2)^(-s)` of mode `m` in a negative Sobolev norm.
    pub fn sobolev_weight(&self, m: usize, s: f64) -> f64 {
        let w = if m == 0 { 0.0 } else { self.freq(m) };
        (1.0 + w * w).powf(-s)
    }
}

/// Grid-dependent quantities reused across time points.
pub struct Galerkin<'a> {
    pub spec: &'a ModelSpec,
    pub sol: &'a FirstOrderSolution,
    pub basis: FourierBasis,
    grid: TickGrid,
    /// Cell means of the modes.
    means: DMatrix<f64>,
    /// `<h, e_m>`.
    pub h_coords: DVector<f64>,
}

/// Ingredients of the linearised dynamics at one time.
#[derive(Debug, Clone)]
pub struct LocalOperators {
    pub t: f64,
    pub p: f64,
    pub sigma0_sq: f64,
    pub p_b: f64,
    pub p_y: f64,
    /// `<grad_+ u, e_m>`.
    pub du: DVector<f64>,
    /// `<f, e_m>`, `<f_b, e_m>`, `<f_y, e_m>`.
    pub f: DVector<f64>,
    pub f_b: DVector<f64>,
    pub f_y: DVector<f64>,
    /// `<g e_k, e_l>`.
    pub g: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SigmaSample {
    pub t: f64,
    /// Over `{price} + modes`.
    pub matrix: DMatrix<f64>,
    pub factor: PsdFactor,
}

impl SigmaSample {
    pub fn report(&self) -> FactorReport {
        self.factor.report
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Trace with mode `m` weighted by `(1 + omega_m^2)^(-s)`.
    pub fn weighted_trace(&self, basis: &FourierBasis, s: f64) -> f64 {
        self.matrix[(0, 0)]
            + (0..basis.n_modes())
                .map(|m| basis.sobolev_weight(m, s) * self.matrix[(m + 1, m + 1)])
                .sum::<f64>()
    }
}

impl<'a> Galerkin<'a> {
    pub fn new(spec: &'a ModelSpec, sol: &'a FirstOrderSolution, k: usize) -> Result<Self> {
        let grid = *sol.grid();
        let basis = FourierBasis::with_modes(grid.half_width(), k)?;
        let means = basis.cell_means(&grid);
        let hw = spec.h.h.cell_weights(&grid);
        let h_coords = DVector::from_fn(basis.n_modes(), |m, _| {
            hw.weights
                .iter()
                .enumerate()
                .map(|(i, w)| w * means[(hw.start + i, m)])
                .sum()
        });
        Ok(Self {
            spec,
            sol,
            basis,
            grid,
            means,
            h_coords,
        })
    }

    fn project(&self, d: &[f64]) -> DVector<f64> {
        let delta = self.grid.delta();
        let mut out = DVector::zeros(self.basis.n_modes());
        for (j, v) in d.iter().enumerate() {
            if *v != 0.0 {
                out.axpy(v * delta, &self.means.row(j).transpose(), 1.0);
            }
        }
        out
    }

    /// Coordinates of a step density.
    pub fn project_density(&self, d: &StepDensity) -> DVector<f64> {
        self.project(d.values())
    }

    pub fn local(&self, t: f64) -> Result<LocalOperators> {
        let (b, y, u) = self.sol.evaluate(t)?;
        let probs = self.spec.probs.eval(b, y);
        let (p_b, p_y) = self.spec.probs.p_partials(b, y);
        let du = u.finite_diff(Direction::Plus);
        let f = self.spec.moments.f(&self.grid, b, y);
        let g = self.spec.moments.g(&self.grid, b, y);
        let (fb, fy) = self.spec.moments.f_partials(&self.grid, b, y);
        let delta = self.grid.delta();
        let n = self.basis.n_modes();
        let mut gm = DMatrix::zeros(n, n);
        for (j, gj) in g.values().iter().enumerate() {
            if *gj != 0.0 {
                let row = self.means.row(j);
                gm.ger(gj * delta, &row.transpose(), &row.transpose(), 1.0);
            }
        }
        Ok(LocalOperators {
            t,
            p: probs.p(),
            sigma0_sq: probs.sigma0_sq(),
            p_b,
            p_y,
            du: self.project(du.values()),
            f: self.project(f.values()),
            f_b: self.project(fb.values()),
            f_y: self.project(fy.values()),
            g: gm,
        })
    }

    /// `Sigma(t)` over the price axis and the modes:
    /// `P = sigma0^2`, `Q = sigma0^2 du - p f`,
    /// `R = sigma0^2 du du' - p (f du' + du f') + G - f f'`.
    pub fn sigma_matrix(&self, op: &LocalOperators, zero_q: bool) -> DMatrix<f64> {
        let n = self.basis.n_modes();
        let mut s = DMatrix::zeros(n + 1, n + 1);
        s[(0, 0)] = op.sigma0_sq;
        let q = &op.du * op.sigma0_sq - &op.f * op.p;
        let r = &op.du * op.du.transpose() * op.sigma0_sq
            - (&op.f * op.du.transpose() + &op.du * op.f.transpose()) * op.p
            + &op.g
            - &op.f * op.f.transpose();
        s.view_mut((1, 1), (n, n)).copy_from(&r);
        if !zero_q {
            s.view_mut((1, 0), (n, 1)).copy_from(&q);
            s.view_mut((0, 1), (1, n)).copy_from(&q.transpose());
        }
        (&s + s.transpose()) * 0.5
    }
}

/// Assembles and factors `Sigma(t)` with `K` Fourier modes.
pub fn assemble_sigma(
    spec: &ModelSpec,
    sol: &FirstOrderSolution,
    t: f64,
    k: usize,
) -> Result<SigmaSample> {
    let gal = Galerkin::new(spec, sol, k)?;
    sample_sigma(&gal, t, false)
}

pub fn sample_sigma(gal: &Galerkin, t: f64, zero_q: bool) -> Result<SigmaSample> {
    let op = gal.local(t)?;
    let matrix = gal.sigma_matrix(&op, zero_q);
    let factor = psd_sqrt(&matrix);
    Ok(SigmaSample { t, matrix, factor })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdeOptions {
    pub ensemble: EnsembleOptions,
    pub n_modes: usize,
    pub zero_q: bool,
    pub drift: bool,
    pub noise: bool,
}

impl SpdeOptions {
    pub fn new(ensemble: EnsembleOptions, n_modes: usize) -> Self {
        Self {
            ensemble,
            n_modes,
            zero_q: false,
            drift: true,
            noise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdeEnsemble {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `[checkpoint][path]`.
    pub zb: Vec<Vec<f64>>,
    pub zy: Vec<Vec<f64>>,
    /// `[function][checkpoint][path]`.
    pub zu: Vec<Vec<Vec<f64>>>,
    /// Factor diagnostics at every step.
    pub factors: Vec<FactorReport>,
}

impl SpdeEnsemble {
    pub fn stats(&self) -> Vec<FluctuationStats> {
        (0..self.times.len())
            .map(|i| pair_stats(self.times[i], &self.zb[i], &self.zy[i]))
            .collect()
    }
}

struct StepData {
    /// Columns of the factor with non-zero eigenvalues.
    noise: DMatrix<f64>,
    op: LocalOperators,
    shift: f64,
}

/// Exponential-Euler paths of the truncated SPDE started from `z0`
/// (zero when `None`):
/// `z_{n+1} = S_n (z_n + dt F(t_n, z_n) + sigma(t_n) dW_n)`.
pub fn simulate_spde(
    spec: &ModelSpec,
    sol: &FirstOrderSolution,
    opts: &SpdeOptions,
    test_fns: &[TestFunction],
    z0: Option<(f64, DVector<f64>)>,
) -> Result<SpdeEnsemble> {
    let e = &opts.ensemble;
    let steps = e.checkpoint_steps()?;
    let n = e.n_steps();
    let gal = Galerkin::new(spec, sol, opts.n_modes)?;
    let m = gal.basis.n_modes();
    let dt = e.dt;
    let chi = |t: f64| -> Result<f64> {
        let r = t / sol.dt;
        let i = (r.floor() as usize).min(sol.times.len() - 1);
        if !(t <= sol.horizon() + 1e-9) {
            return Err(LobError::TimeOutOfRange {
                t,
                horizon: sol.horizon(),
            });
        }
        let w = r - i as f64;
        Ok(if w <= 1e-12 || i + 1 >= sol.times.len() {
            sol.characteristic[i]
        } else {
            (1.0 - w) * sol.characteristic[i] + w * sol.characteristic[i + 1]
        })
    };
    let mut data = Vec::with_capacity(n);
    let mut factors = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let op = gal.local(t)?;
        let matrix = gal.sigma_matrix(&op, opts.zero_q);
        let f = psd_sqrt(&matrix);
        f.require_psd(t)?;
        factors.push(f.report);
        let cutoff = 1e-14 * f.report.norm;
        let keep: Vec<usize> = (0..f.eigenvalues.len())
            .filter(|k| f.eigenvalues[*k] > cutoff)
            .collect();
        let noise = if opts.noise {
            DMatrix::from_fn(m + 1, keep.len(), |r, c| f.factor[(r, keep[c])])
        } else {
            DMatrix::zeros(m + 1, 0)
        };
        data.push(StepData {
            noise,
            op,
            shift: chi((i + 1) as f64 * dt)? - chi(t)?,
        });
    }
    let phis: Vec<DVector<f64>> = test_fns
        .iter()
        .map(|f| gal.basis.project_fn(f, &gal.grid))
        .collect();
    let (zb0, c0) = z0.unwrap_or_else(|| (0.0, DVector::zeros(m)));
    if c0.len() != m {
        return Err(LobError::InvalidParameter(format!(
            "initial state has {} modes, basis has {m}",
            c0.len()
        )));
    }
    let sq = dt.sqrt();
    let rows = run_ensemble(e.n_paths, e.seed, |_, rng| {
        let mut zb = zb0;
        let mut c = c0.clone();
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(steps.len());
        let mut next = 0;
        let mut emit = |k: usize, zb: f64, c: &DVector<f64>, out: &mut Vec<Vec<f64>>| {
            while next < steps.len() && steps[next] == k {
                let mut row = vec![zb, gal.h_coords.dot(c)];
                row.extend(phis.iter().map(|p| p.dot(c)));
                out.push(row);
                next += 1;
            }
        };
        emit(0, zb, &c, &mut out);
        let mut xi = DVector::zeros(0);
        for (i, s) in data.iter().enumerate() {
            let zy = gal.h_coords.dot(&c);
            let mut dzb = 0.0;
            if opts.drift {
                let op = &s.op;
                let dp = op.p_b * zb + op.p_y * zy;
                dzb = dt * dp;
                c.axpy(dt * dp, &op.du, 1.0);
                c.axpy(dt * zb, &op.f_b, 1.0);
                c.axpy(dt * zy, &op.f_y, 1.0);
            }
            zb += dzb;
            if s.noise.ncols() > 0 {
                if xi.len() != s.noise.ncols() {
                    xi = DVector::zeros(s.noise.ncols());
                }
                for v in xi.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = sq * z;
                }
                let w = &s.noise * &xi;
                zb += w[0];
                c += w.rows(1, m);
            }
            gal.basis.translate(c.as_mut_slice(), s.shift);
            emit(i + 1, zb, &c, &mut out);
        }
        Ok(out)
    })?;
    let col = |i: usize, c: usize| -> Vec<f64> { rows.iter().map(|r| r[i][c]).collect() };
    Ok(SpdeEnsemble {
        times: steps.iter().map(|k| *k as f64 * dt).collect(),
        names: test_fns.iter().map(|f| f.name().to_string()).collect(),
        zb: (0..steps.len()).map(|i| col(i, 0)).collect(),
        zy: (0..steps.len()).map(|i| col(i, 1)).collect(),
        zu: (0..test_fns.len())
            .map(|f| (0..steps.len()).map(|i| col(i, 2 + f)).collect())
            .collect(),
        factors,
    })
}
