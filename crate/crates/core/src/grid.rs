//! Tick grid, step densities and the discrete operators on them.
//!
//! Cell `j` of a [`TickGrid`] is the half-open interval `(x_j, x_{j+1}]` with
//! `x_j = -L + j * delta`; index 0 therefore starts at `-L`. Densities are
//! left-continuous step functions (one value per cell). Relative price 0 is
//! always a grid point, so the visible book `x <= 0` is a union of whole cells.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};

/// Relative tolerance used when snapping a coordinate onto a grid point.
const SNAP_TOL: f64 = 1e-9;

/// 5-point Gauss-Legendre nodes on [-1, 1].
const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Integral of `f` over `[a, b]` with one 5-point Gauss-Legendre panel.
pub fn gauss_legendre(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS.iter())
        .map(|(n, w)| w * f(mid + half * n))
        .sum::<f64>()
        * half
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickGrid {
    delta: f64,
    half_width: f64,
    /// Number of cells on each side of 0, i.e. `L / delta`.
    n_half: usize,
}

impl TickGrid {
    /// Builds the grid over `[-half_width, half_width]`. `half_width` must be an
    /// integer multiple of `delta` so that 0 is a grid point.
    pub fn new(delta: f64, half_width: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(LobError::InvalidGrid(format!(
                "delta must be positive, got {delta}"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(LobError::InvalidGrid(format!(
                "half_width must be positive, got {half_width}"
            )));
        }
        let ratio = half_width / delta;
        let n_half = ratio.round();
        if n_half < 1.0 || (ratio - n_half).abs() > SNAP_TOL * ratio.max(1.0) {
            return Err(LobError::InvalidGrid(format!(
                "half_width {half_width} is not an integer multiple of delta {delta}"
            )));
        }
        Ok(Self {
            delta,
            half_width,
            n_half: n_half as usize,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_cells(&self) -> usize {
        2 * self.n_half
    }

    /// Index of the cell `(-delta, 0]`, the top of the visible book.
    pub fn top_cell(&self) -> usize {
        self.n_half - 1
    }

    /// Index of the first shadow-book cell `(0, delta]`.
    pub fn first_shadow_cell(&self) -> usize {
        self.n_half
    }

    /// Left edge `x_j` of cell `j`.
    pub fn x_left(&self, j: usize) -> f64 {
        (j as f64 - self.n_half as f64) * self.delta
    }

    pub fn x_right(&self, j: usize) -> f64 {
        self.x_left(j + 1)
    }

    pub fn x_mid(&self, j: usize) -> f64 {
        (j as f64 + 0.5 - self.n_half as f64) * self.delta
    }

    /// Cell index relative to the zero tick: cell `(0, delta]` is 0, the top of
    /// the visible book is -1.
    pub fn tick_offset(&self, j: usize) -> i64 {
        j as i64 - self.n_half as i64
    }

    /// The cell `j` with `x_j < x <= x_{j+1}`.
    pub fn cell_interval(&self, x: f64) -> Result<usize> {
        let out = || LobError::OutOfRange {
            x,
            half_width: self.half_width,
        };
        if !x.is_finite() {
            return Err(out());
        }
        let r = (x + self.half_width) / self.delta;
        let nearest = r.round();
        let upper = if (r - nearest).abs() <= SNAP_TOL * r.abs().max(1.0) {
            nearest
        } else {
            r.ceil()
        };
        if upper < 1.0 || upper > self.n_cells() as f64 {
            return Err(out());
        }
        Ok(upper as usize - 1)
    }

    /// Range of cells overlapping `[a, b]`, clipped to the grid.
    pub fn cells_covering(&self, a: f64, b: f64) -> std::ops::Range<usize> {
        let lo = ((a + self.half_width) / self.delta).floor().max(0.0) as usize;
        let hi = ((b + self.half_width) / self.delta).ceil().max(0.0) as usize;
        lo.min(self.n_cells())..hi.min(self.n_cells())
    }
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A real test function on the price axis, optionally with an analytic
/// derivative and a known support interval (used to skip zero cells).
#[derive(Clone)]
pub struct TestFunction {
    name: String,
    f: RealFn,
    derivative: Option<RealFn>,
    support: Option<(f64, f64)>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("support", &self.support)
            .field("has_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl TestFunction {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            derivative: None,
            support: None,
        }
    }

    pub fn with_derivative(mut self, d: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(d));
        self
    }

    pub fn with_support(mut self, a: f64, b: f64) -> Self {
        self.support = Some((a, b));
        self
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), move |_| c).with_derivative(|_| 0.0)
    }

    /// Indicator of `(a, b]`.
    pub fn indicator(a: f64, b: f64) -> Self {
        Self::new(format!("1({a},{b}]"), move |x| {
            if x > a && x <= b {
                1.0
            } else {
                0.0
            }
        })
        .with_support(a, b)
    }

    /// `1_{(-inf, 0]}` restricted to the grid, the total-visible-volume indicator.
    pub fn left_indicator() -> Self {
        Self::new("1(-inf,0]", |x| if x <= 0.0 { 1.0 } else { 0.0 })
            .with_support(f64::NEG_INFINITY, 0.0)
    }

    /// Triweight bump `height * (1 - s^2)^3`, `s = (x - center) / radius`.
    /// Twice continuously differentiable with support `[center - radius, center + radius]`.
    pub fn bump(center: f64, radius: f64, height: f64) -> Self {
        let f = move |x: f64| {
            let s = (x - center) / radius;
            if s.abs() >= 1.0 {
                0.0
            } else {
                height * (1.0 - s * s).powi(3)
            }
        };
        let d = move |x: f64| {
            let s = (x - center) / radius;
            if s.abs() >= 1.0 {
                0.0
            } else {
                -6.0 * height * s * (1.0 - s * s).powi(2) / radius
            }
        };
        Self::new(format!("bump({center},{radius})"), f)
            .with_derivative(d)
            .with_support(center - radius, center + radius)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        self.support
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    /// Analytic derivative if supplied, else a central difference.
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.derivative {
            Some(d) => d(x),
            None => {
                let h = 1e-6 * (1.0 + x.abs());
                ((self.f)(x + h) - (self.f)(x - h)) / (2.0 * h)
            }
        }
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    /// Pointwise product.
    pub fn product(&self, other: &TestFunction) -> TestFunction {
        let (a, b) = (self.f.clone(), other.f.clone());
        let support = match (self.support, other.support) {
            (Some((a0, a1)), Some((b0, b1))) => Some((a0.max(b0), a1.min(b1))),
            (s @ Some(_), None) | (None, s @ Some(_)) => s,
            (None, None) => None,
        };
        TestFunction {
            name: format!("{}*{}", self.name, other.name),
            f: Arc::new(move |x| a(x) * b(x)),
            derivative: None,
            support,
        }
    }

    /// `x -> phi(x + shift)`.
    pub fn shifted(&self, shift: f64) -> TestFunction {
        let f = self.f.clone();
        let d = self.derivative.clone();
        TestFunction {
            name: format!("{}(.+{shift})", self.name),
            f: Arc::new(move |x| f(x + shift)),
            derivative: d.map(|d| Arc::new(move |x: f64| d(x + shift)) as RealFn),
            support: self.support.map(|(a, b)| (a - shift, b - shift)),
        }
    }

    fn cell_range(&self, grid: &TickGrid) -> std::ops::Range<usize> {
        match self.support {
            Some((a, b)) => grid.cells_covering(a, b),
            None => 0..grid.n_cells(),
        }
    }

    /// Sparse per-cell integrals of this function on `grid`. Quadrature is
    /// clipped to the declared support, so functions with a jump at a support
    /// endpoint integrate exactly when smooth inside.
    pub fn cell_weights(&self, grid: &TickGrid) -> CellWeights {
        let range = self.cell_range(grid);
        let weights = range
            .clone()
            .map(|j| {
                let (mut a, mut b) = (grid.x_left(j), grid.x_right(j));
                if let Some((lo, hi)) = self.support {
                    a = a.max(lo);
                    b = b.min(hi);
                }
                if b > a {
                    gauss_legendre(&*self.f, a, b)
                } else {
                    0.0
                }
            })
            .collect();
        CellWeights {
            start: range.start,
            weights,
        }
    }
}

/// Per-cell integrals `int_{cell j} phi` over a contiguous cell range;
/// pairing with a density is `sum_j values[j] * weights[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    pub start: usize,
    pub weights: Vec<f64>,
}

impl CellWeights {
    pub fn end(&self) -> usize {
        self.start + self.weights.len()
    }

    pub fn pair(&self, values: &[f64]) -> f64 {
        values[self.start..self.end()]
            .iter()
            .zip(&self.weights)
            .map(|(u, w)| u * w)
            .sum()
    }

    /// Pairing with the density shifted by `offset` cells, i.e. with
    /// `v[j] = values[j - offset]` (zero outside the grid).
    pub fn pair_offset(&self, values: &[f64], offset: isize) -> f64 {
        let n = values.len() as isize;
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            let src = (self.start + i) as isize - offset;
            if src >= 0 && src < n {
                acc += values[src as usize] * w;
            }
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `T_+ f = f(. + delta)`: the graph moves one tick left.
    Plus,
    /// `T_- f = f(. - delta)`: the graph moves one tick right.
    Minus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDensity {
    grid: TickGrid,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DensityJson {
    delta: f64,
    half_width: f64,
    values: Vec<f64>,
}

impl Serialize for StepDensity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DensityJson {
            delta: self.grid.delta,
            half_width: self.grid.half_width,
            values: self.values.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StepDensity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = DensityJson::deserialize(d)?;
        let grid = TickGrid::new(raw.delta, raw.half_width).map_err(serde::de::Error::custom)?;
        StepDensity::from_values(grid, raw.values).map_err(serde::de::Error::custom)
    }
}

impl StepDensity {
    pub fn zeros(grid: TickGrid) -> Self {
        Self {
            values: vec![0.0; grid.n_cells()],
            grid,
        }
    }

    pub fn from_values(grid: TickGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(LobError::InvalidGrid(format!(
                "expected {} cell values, got {}",
                grid.n_cells(),
                values.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(LobError::InvalidGrid(format!(
                "non-finite value in cell {j}"
            )));
        }
        Ok(Self { grid, values })
    }

    /// Step density holding the cell means of `f`.
    pub fn from_fn(grid: TickGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_cells())
            .map(|j| gauss_legendre(&f, grid.x_left(j), grid.x_right(j)) / grid.delta)
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &TickGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Total mass `sum_j values[j] * delta`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.delta
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.delta).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Shifts the density one tick in place and returns the mass that left the grid.
    pub fn shift_in_place(&mut self, direction: Direction) -> f64 {
        let n = self.values.len();
        let dropped = match direction {
            Direction::Minus => {
                let out = self.values[n - 1];
                self.values.copy_within(0..n - 1, 1);
                self.values[0] = 0.0;
                out
            }
            Direction::Plus => {
                let out = self.values[0];
                self.values.copy_within(1..n, 0);
                self.values[n - 1] = 0.0;
                out
            }
        };
        dropped * self.grid.delta
    }

    /// `T_+ d` or `T_- d` with zero fill, together with the dropped mass.
    pub fn translate(&self, direction: Direction) -> (StepDensity, f64) {
        let mut out = self.clone();
        let dropped = out.shift_in_place(direction);
        (out, dropped)
    }

    /// `nabla_+ d = (T_+ d - d) / delta`, `nabla_- d = (d - T_- d) / delta`.
    pub fn finite_diff(&self, side: Direction) -> StepDensity {
        let (shifted, _) = self.translate(side);
        let inv = 1.0 / self.grid.delta;
        let values = match side {
            Direction::Plus => shifted
                .values
                .iter()
                .zip(&self.values)
                .map(|(s, v)| (s - v) * inv)
                .collect(),
            Direction::Minus => shifted
                .values
                .iter()
                .zip(&self.values)
                .map(|(s, v)| (v - s) * inv)
                .collect(),
        };
        StepDensity {
            grid: self.grid,
            values,
        }
    }

    /// `<d, phi>` with per-cell Gauss-Legendre quadrature.
    pub fn inner_product(&self, phi: &TestFunction) -> f64 {
        phi.cell_weights(&self.grid).pair(&self.values)
    }

    pub fn value_at(&self, x: f64) -> Result<f64> {
        Ok(self.values[self.grid.cell_interval(x)?])
    }

    fn check_same_grid(&self, other: &StepDensity) -> Result<()> {
        if self.grid != other.grid {
            return Err(LobError::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    /// `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &StepDensity) -> Result<StepDensity> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(StepDensity {
            grid: self.grid,
            values,
        })
    }

    pub fn scaled(&self, s: f64) -> StepDensity {
        StepDensity {
            grid: self.grid,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// L2 distance to a continuous function, integrated with per-cell quadrature.
    pub fn l2_distance_to(&self, f: impl Fn(f64) -> f64) -> f64 {
        let g = &self.grid;
        (0..g.n_cells())
            .map(|j| {
                let v = self.values[j];
                gauss_legendre(&|x| (f(x) - v).powi(2), g.x_left(j), g.x_right(j))
            })
            .sum::<f64>()
            .sqrt()
    }

    /// CSV with header `x_left,value`, one row per cell.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x_left", "value"])?;
        for (j, v) in self.values.iter().enumerate() {
            wtr.write_record([format!("{}", self.grid.x_left(j)), format!("{v:e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, grid: TickGrid) -> Result<StepDensity> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut values = Vec::with_capacity(grid.n_cells());
        for rec in rdr.records() {
            let rec = rec?;
            let v: f64 = rec
                .get(1)
                .ok_or_else(|| LobError::InvalidGrid("missing value column".into()))?
                .trim()
                .parse()
                .map_err(|e| LobError::InvalidGrid(format!("bad value: {e}")))?;
            values.push(v);
        }
        StepDensity::from_values(grid, values)
    }
}

/// `[phi]_n`: the step function holding the per-cell integrals of `phi`
/// (integrals, not means).
pub fn cell_average(phi: &TestFunction, grid: &TickGrid) -> StepDensity {
    let cw = phi.cell_weights(grid);
    let mut values = vec![0.0; grid.n_cells()];
    values[cw.start..cw.end()].copy_from_slice(&cw.weights);
    StepDensity {
        grid: *grid,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(delta: f64, l: f64) -> TickGrid {
        TickGrid::new(delta, l).unwrap()
    }

    #[test]
    fn rejects_non_multiple_half_width() {
        assert!(TickGrid::new(0.3, 1.0).is_err());
        assert!(TickGrid::new(-0.1, 1.0).is_err());
        assert!(TickGrid::new(0.002, 1.5).is_ok());
    }

    #[test]
    fn minus_shift_moves_graph_right() {
        // T_- f(x) = f(x - delta): the mass in the middle cell moves up one index.
        let g = grid(1.0, 2.0);
        let mut v = vec![0.0; g.n_cells()];
        v[1] = 5.0;
        let d = StepDensity::from_values(g, v).unwrap();
        let (m, dropped) = d.translate(Direction::Minus);
        assert_eq!(m.values(), &[0.0, 0.0, 5.0, 0.0]);
        assert_eq!(dropped, 0.0);
        // pointwise: (T_- d)(x) = d(x - delta)
        for j in 1..g.n_cells() {
            let x = g.x_mid(j);
            assert_eq!(m.value_at(x).unwrap(), d.value_at(x - 1.0).unwrap());
        }
    }

    #[test]
    fn boundary_mass_is_counted() {
        let g = grid(0.5, 1.0);
        let d = StepDensity::from_values(g, vec![2.0, 0.0, 0.0, 4.0]).unwrap();
        let (_, dropped) = d.translate(Direction::Minus);
        assert_relative_eq!(dropped, 2.0);
        let (_, dropped) = d.translate(Direction::Plus);
        assert_relative_eq!(dropped, 1.0);
    }

    #[test]
    fn shift_inverse_with_zero_boundaries() {
        let g = grid(0.1, 1.0);
        let d = StepDensity::from_fn(g, |x| {
            (1.0 - x * x).max(0.0) * (x < 0.85 && x > -0.85) as i32 as f64
        });
        let (p, _) = d.translate(Direction::Plus);
        let (back, _) = p.translate(Direction::Minus);
        assert_eq!(back, d);
    }

    #[test]
    fn compact_support_never_drops_mass() {
        let delta = 0.01;
        let (m, t) = (0.5, 0.3);
        let g = grid(delta, 1.0);
        let mut d = StepDensity::from_fn(g, |x| if x.abs() <= m { 1.0 + x } else { 0.0 });
        let steps = (t / delta) as usize;
        let mut dropped = 0.0;
        for k in 0..steps {
            let dir = if k % 3 == 0 {
                Direction::Plus
            } else {
                Direction::Minus
            };
            dropped += d.shift_in_place(dir).abs();
        }
        // all shifts in one direction would also stay inside
        for _ in 0..steps {
            dropped += d.shift_in_place(Direction::Minus).abs();
        }
        assert_eq!(dropped, 0.0);
    }

    #[test]
    fn finite_difference_of_constant_vanishes_inside() {
        let g = grid(0.1, 1.0);
        let d = StepDensity::from_values(g, vec![3.0; g.n_cells()]).unwrap();
        let dp = d.finite_diff(Direction::Plus);
        // zero fill makes the last cell a boundary artefact
        assert!(dp.values()[..g.n_cells() - 1].iter().all(|v| *v == 0.0));
        let dm = d.finite_diff(Direction::Minus);
        assert!(dm.values()[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn finite_difference_of_cell_indicator() {
        let g = grid(0.1, 1.0);
        let j = 7;
        let mut v = vec![0.0; g.n_cells()];
        v[j] = 1.0 / g.delta();
        let d = StepDensity::from_values(g, v).unwrap();
        let dp = d.finite_diff(Direction::Plus);
        let inv2 = 1.0 / (g.delta() * g.delta());
        assert_relative_eq!(dp.values()[j - 1], inv2, max_relative = 1e-12);
        assert_relative_eq!(dp.values()[j], -inv2, max_relative = 1e-12);
        let nonzero = dp.values().iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn finite_difference_converges_first_order() {
        // Gaussian bump; the forward difference of cell means against phi'.
        let phi = |x: f64| (-x * x / 0.02).exp();
        let dphi = |x: f64| -x / 0.01 * (-x * x / 0.02).exp();
        let err = |delta: f64| {
            let g = grid(delta, 1.0);
            let d = StepDensity::from_fn(g, phi).finite_diff(Direction::Plus);
            d.l2_distance_to(dphi)
        };
        let (e1, e2, e3) = (err(0.01), err(0.005), err(0.0025));
        let r1 = e1 / e2;
        let r2 = e2 / e3;
        assert!(r1 > 1.8 && r1 < 2.2, "ratio {r1}");
        assert!(r2 > 1.8 && r2 < 2.2, "ratio {r2}");
    }

    #[test]
    fn inner_product_examples() {
        let g = grid(0.25, 2.0);
        let j = 5;
        let mut v = vec![0.0; g.n_cells()];
        v[j] = 1.0 / g.delta();
        let d = StepDensity::from_values(g, v).unwrap();
        assert_relative_eq!(
            d.inner_product(&TestFunction::constant(1.0)),
            1.0,
            max_relative = 1e-14
        );

        let c = StepDensity::from_values(g, vec![1.7; g.n_cells()]).unwrap();
        let x = TestFunction::new("x", |x| x);
        assert!(c.inner_product(&x).abs() < 1e-13);

        let boxd = StepDensity::from_fn(g, |x| if x > 0.0 && x <= 1.0 { 2.0 } else { 0.0 });
        assert_relative_eq!(boxd.inner_product(&x), 1.0, max_relative = 1e-13);
    }

    #[test]
    fn inner_product_with_cell_indicator_is_exact() {
        let g = grid(0.2, 1.0);
        let d = StepDensity::from_fn(g, |x| 1.0 + x.sin());
        for j in 0..g.n_cells() {
            let ind = TestFunction::indicator(g.x_left(j), g.x_right(j));
            assert_relative_eq!(
                d.inner_product(&ind),
                d.values()[j] * g.delta(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn cell_interval_is_left_open_right_closed() {
        let g = grid(0.002, 1.0);
        let j = 600;
        assert_eq!(g.cell_interval(g.x_right(j)).unwrap(), j);
        assert_eq!(g.cell_interval(g.x_left(j) + 0.001).unwrap(), j);
        let k = g.cell_interval(0.0031).unwrap();
        assert_eq!(g.tick_offset(k), 1);
        assert_relative_eq!(g.x_left(k), 0.002, max_relative = 1e-12);
        assert_eq!(g.cell_interval(0.0).unwrap(), g.top_cell());
        assert!(g.cell_interval(-1.0).is_err());
        assert!(g.cell_interval(1.0 + 1e-6).is_err());
        assert_eq!(g.cell_interval(1.0).unwrap(), g.n_cells() - 1);
    }

    #[test]
    fn cell_average_examples() {
        let g = grid(0.1, 1.0);
        let c = cell_average(&TestFunction::constant(3.0), &g);
        assert!(c.values().iter().all(|v| (v - 0.3).abs() < 1e-14));
        let x = cell_average(&TestFunction::new("x", |x| x), &g);
        let j = g.first_shadow_cell();
        assert_relative_eq!(x.values()[j], 0.1 * 0.1 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn cell_average_pairing_converges_to_square() {
        // <g, phi [phi]_n> / delta -> <g, phi^2>; [phi]_n holds cell integrals.
        let gfun = |x: f64| 1.0 + 0.5 * (3.0 * x).cos();
        let phi = TestFunction::bump(0.1, 0.6, 1.0);
        let exact = {
            let sq = phi.product(&phi);
            let fine = grid(1e-4, 1.0);
            StepDensity::from_fn(fine, gfun).inner_product(&sq)
        };
        let approx = |delta: f64| {
            let g = grid(delta, 1.0);
            let gd = StepDensity::from_fn(g, gfun);
            let avg = cell_average(&phi, &g);
            let w = phi.cell_weights(&g);
            let mut acc = 0.0;
            for (i, wj) in w.weights.iter().enumerate() {
                let j = w.start + i;
                acc += gd.values()[j] * wj * avg.values()[j];
            }
            acc / delta
        };
        let e1 = (approx(0.02) - exact).abs();
        let e2 = (approx(0.01) - exact).abs();
        assert!(e1 / exact.abs() < 0.02);
        assert!(e2 < e1);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let g = grid(0.25, 1.0);
        let d = StepDensity::from_fn(g, |x| x * x - 0.3);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_left,value\n-1,"));
        let back = StepDensity::read_csv(&buf[..], g).unwrap();
        assert_eq!(back, d);
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"half_width\":1.0"));
        let back: StepDensity = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }

    proptest! {
        #[test]
        fn operators_are_linear(a in prop::collection::vec(-10.0f64..10.0, 16),
                                b in prop::collection::vec(-10.0f64..10.0, 16),
                                s in -3.0f64..3.0) {
            let g = TickGrid::new(0.125, 1.0).unwrap();
            let da = StepDensity::from_values(g, a).unwrap();
            let db = StepDensity::from_values(g, b).unwrap();
            let comb = da.axpy(s, &db).unwrap();
            let phi = TestFunction::new("p", |x| (2.0 * x).sin() + x * x);
            let lhs = comb.inner_product(&phi);
            let rhs = da.inner_product(&phi) + s * db.inner_product(&phi);
            let scale = 1.0 + lhs.abs().max(rhs.abs());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
            for dir in [Direction::Plus, Direction::Minus] {
                let l = comb.finite_diff(dir);
                let r = da.finite_diff(dir).axpy(s, &db.finite_diff(dir)).unwrap();
                for (x, y) in l.values().iter().zip(r.values()) {
                    prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs())));
                }
            }
        }

        #[test]
        fn translate_conserves_mass_up_to_dropped(v in prop::collection::vec(-5.0f64..5.0, 16)) {
            let g = TickGrid::new(0.125, 1.0).unwrap();
            let d = StepDensity::from_values(g, v).unwrap();
            for dir in [Direction::Plus, Direction::Minus] {
                let (t, dropped) = d.translate(dir);
                prop_assert!((t.mass() + dropped - d.mass()).abs() < 1e-12);
            }
        }
    }
}
