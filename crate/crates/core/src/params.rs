//! Model primitives: event probabilities, placement moment densities, the
//! volume indicator, and the per-event sampling law derived from them.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};
use crate::grid::{StepDensity, TestFunction, TickGrid};

/// A real coefficient of the state `(b, y)`.
pub type Coef = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Analytic partial derivatives `(d/db, d/dy)` of a coefficient.
pub type CoefPartials = Arc<dyn Fn(f64, f64) -> (f64, f64) + Send + Sync>;

pub fn coef(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Coef {
    Arc::new(f)
}

/// Central finite-difference step used when no analytic partial is supplied.
pub fn fd_step(arg: f64) -> f64 {
    1e-5 * (1.0 + arg.abs())
}

fn fd_partials(f: &dyn Fn(f64, f64) -> f64, b: f64, y: f64) -> (f64, f64) {
    let hb = fd_step(b);
    let hy = fd_step(y);
    (
        (f(b + hb, y) - f(b - hb, y)) / (2.0 * hb),
        (f(b, y + hy) - f(b, y - hy)) / (2.0 * hy),
    )
}

/// Clamped event probabilities at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventProbs {
    pub a: f64,
    pub b: f64,
}

impl EventProbs {
    pub fn c(&self) -> f64 {
        (1.0 - self.a - self.b).max(0.0)
    }

    /// Mean price imbalance `p = p_B - p_A`.
    pub fn p(&self) -> f64 {
        self.b - self.a
    }

    /// Activity `p^{B+A}`.
    pub fn sum(&self) -> f64 {
        self.a + self.b
    }

    pub fn sigma0_sq(&self) -> f64 {
        let p = self.p();
        (self.sum() - p * p).max(0.0)
    }
}

#[derive(Clone)]
pub struct EventProbabilityFns {
    prob_a: Coef,
    prob_b: Coef,
    partials: Option<CoefPartials>,
    clamps: Arc<AtomicU64>,
}

impl fmt::Debug for EventProbabilityFns {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventProbabilityFns")
            .field("analytic_partials", &self.partials.is_some())
            .field("clamps", &self.clamp_count())
            .finish()
    }
}

impl EventProbabilityFns {
    pub fn new(prob_a: Coef, prob_b: Coef) -> Self {
        Self {
            prob_a,
            prob_b,
            partials: None,
            clamps: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn constant(p_a: f64, p_b: f64) -> Self {
        Self::new(coef(move |_, _| p_a), coef(move |_, _| p_b))
            .with_partials(Arc::new(|_, _| (0.0, 0.0)))
    }

    /// Supplies analytic `(p_b, p_y)` for `p = p_B - p_A`.
    pub fn with_partials(mut self, partials: CoefPartials) -> Self {
        self.partials = Some(partials);
        self
    }

    /// Raw values floored at 0 and rescaled if their sum exceeds 1.
    /// Every repair increments the clamp counter.
    pub fn eval(&self, b: f64, y: f64) -> EventProbs {
        let (mut a, mut bb) = ((self.prob_a)(b, y), (self.prob_b)(b, y));
        let mut clamped = false;
        if !(a >= 0.0) {
            a = 0.0;
            clamped = true;
        }
        if !(bb >= 0.0) {
            bb = 0.0;
            clamped = true;
        }
        let s = a + bb;
        if s > 1.0 {
            a /= s;
            bb /= s;
            clamped = true;
        }
        if clamped {
            self.clamps.fetch_add(1, Ordering::Relaxed);
        }
        EventProbs { a, b: bb }
    }

    pub fn p(&self, b: f64, y: f64) -> f64 {
        self.eval(b, y).p()
    }

    pub fn sigma0_sq(&self, b: f64, y: f64) -> f64 {
        sigma0_sq(self, b, y)
    }

    /// `(p_b, p_y)`, analytic if supplied.
    pub fn p_partials(&self, b: f64, y: f64) -> (f64, f64) {
        match &self.partials {
            Some(d) => d(b, y),
            None => fd_partials(&|b, y| self.eval(b, y).p(), b, y),
        }
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }

    pub fn reset_clamp_count(&self) {
        self.clamps.store(0, Ordering::Relaxed);
    }
}

/// `p^{B+A} - p^2` at `(b, y)`; non-negative on the clamped domain.
pub fn sigma0_sq(probs: &EventProbabilityFns, b: f64, y: f64) -> f64 {
    probs.eval(b, y).sigma0_sq()
}

/// One separable term `coef(b, y) * shape(x)` of a moment density.
#[derive(Clone)]
pub struct MomentTerm {
    pub coef: Coef,
    pub partials: Option<CoefPartials>,
    pub shape: TestFunction,
}

impl fmt::Debug for MomentTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentTerm")
            .field("shape", &self.shape)
            .finish()
    }
}

impl MomentTerm {
    pub fn new(coef: Coef, shape: TestFunction) -> Self {
        Self {
            coef,
            partials: None,
            shape,
        }
    }

    pub fn with_partials(mut self, partials: CoefPartials) -> Self {
        self.partials = Some(partials);
        self
    }

    fn coef_partials(&self, b: f64, y: f64) -> (f64, f64) {
        match &self.partials {
            Some(d) => d(b, y),
            None => fd_partials(&*self.coef, b, y),
        }
    }
}

/// First and second placement moment densities, each a finite sum of
/// state-dependent coefficients times fixed shapes:
/// `f(b,y;x) = sum_i a_i(b,y) psi_i(x)`, `g(b,y;x) = sum_i c_i(b,y) chi_i(x)`.
/// Second-moment shapes and coefficients must be non-negative.
#[derive(Debug, Clone, Default)]
pub struct PlacementMomentFns {
    pub first: Vec<MomentTerm>,
    pub second: Vec<MomentTerm>,
}

fn assemble(
    grid: &TickGrid,
    terms: &[MomentTerm],
    weight: impl Fn(&MomentTerm) -> f64,
) -> StepDensity {
    let mut out = vec![0.0; grid.n_cells()];
    for t in terms {
        let c = weight(t);
        if c == 0.0 {
            continue;
        }
        let cw = t.shape.cell_weights(grid);
        let inv = 1.0 / grid.delta();
        for (i, w) in cw.weights.iter().enumerate() {
            out[cw.start + i] += c * w * inv;
        }
    }
    StepDensity::from_values(*grid, out).expect("assembled density matches grid")
}

impl PlacementMomentFns {
    pub fn zero() -> Self {
        Self::default()
    }

    /// `f = a(b,y) psi`, `g = c(b,y) psi` with a shared non-negative shape.
    pub fn separable(first: Coef, second: Coef, shape: TestFunction) -> Self {
        Self {
            first: vec![MomentTerm::new(first, shape.clone())],
            second: vec![MomentTerm::new(second, shape)],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.first.is_empty() && self.second.is_empty()
    }

    /// `f(b, y)` as cell means on `grid`.
    pub fn f(&self, grid: &TickGrid, b: f64, y: f64) -> StepDensity {
        assemble(grid, &self.first, |t| (t.coef)(b, y))
    }

    pub fn g(&self, grid: &TickGrid, b: f64, y: f64) -> StepDensity {
        assemble(grid, &self.second, |t| (t.coef)(b, y))
    }

    /// `(f_b, f_y)` as cell means on `grid`.
    pub fn f_partials(&self, grid: &TickGrid, b: f64, y: f64) -> (StepDensity, StepDensity) {
        (
            assemble(grid, &self.first, |t| t.coef_partials(b, y).0),
            assemble(grid, &self.first, |t| t.coef_partials(b, y).1),
        )
    }

    /// Outermost support point of any shape, if all shapes declare support.
    pub fn support(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in self.first.iter().chain(&self.second) {
            let (a, b) = t.shape.support()?;
            lo = lo.min(a);
            hi = hi.max(b);
        }
        Some((lo, hi))
    }

    /// Precomputes per-shape cell profiles and sampling tables on `grid`.
    pub fn discretize(&self, grid: &TickGrid) -> Result<DiscreteMoments> {
        let profile = |t: &MomentTerm| {
            let cw = t.shape.cell_weights(grid);
            let mut v = vec![0.0; grid.n_cells()];
            for (i, w) in cw.weights.iter().enumerate() {
                v[cw.start + i] = w / grid.delta();
            }
            v
        };
        let first: Vec<Vec<f64>> = self.first.iter().map(profile).collect();
        let second: Vec<Vec<f64>> = self.second.iter().map(profile).collect();
        let mut cdfs = Vec::with_capacity(second.len());
        let mut totals = Vec::with_capacity(second.len());
        for (k, chi) in second.iter().enumerate() {
            if let Some(j) = chi.iter().position(|v| *v < 0.0) {
                return Err(LobError::InvalidParameter(format!(
                    "second-moment shape {} is negative at cell {j}",
                    self.second[k].shape.name()
                )));
            }
            let mut acc = 0.0;
            let cdf: Vec<f64> = chi
                .iter()
                .map(|v| {
                    acc += v;
                    acc
                })
                .collect();
            totals.push(acc);
            cdfs.push(cdf);
        }
        Ok(DiscreteMoments {
            grid: *grid,
            first_coefs: self.first.iter().map(|t| t.coef.clone()).collect(),
            second_coefs: self.second.iter().map(|t| t.coef.clone()).collect(),
            first,
            second,
            cdfs,
            totals,
        })
    }
}

/// Moment shapes discretized on a grid, ready for per-event sampling.
#[derive(Clone)]
pub struct DiscreteMoments {
    grid: TickGrid,
    first_coefs: Vec<Coef>,
    second_coefs: Vec<Coef>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    cdfs: Vec<Vec<f64>>,
    totals: Vec<f64>,
}

impl fmt::Debug for DiscreteMoments {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteMoments")
            .field("grid", &self.grid)
            .field("first_terms", &self.first.len())
            .field("second_terms", &self.second.len())
            .finish()
    }
}

/// Placement law at one state: which cell receives an order and the
/// two-point volume law there.
#[derive(Debug, Clone)]
pub struct PlacementLaw {
    a: Vec<f64>,
    c: Vec<f64>,
    total_g: f64,
    p_c: f64,
    delta: f64,
    bound: f64,
}

impl DiscreteMoments {
    pub fn grid(&self) -> &TickGrid {
        &self.grid
    }

    /// Cell profiles (means) of the first-moment shapes.
    pub fn first_profiles(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_profiles(&self) -> &[Vec<f64>] {
        &self.second
    }

    pub fn first_coefs(&self, b: f64, y: f64) -> Vec<f64> {
        self.first_coefs.iter().map(|f| f(b, y)).collect()
    }

    pub fn second_coefs(&self, b: f64, y: f64) -> Vec<f64> {
        self.second_coefs.iter().map(|f| f(b, y)).collect()
    }

    pub fn placement_law(
        &self,
        b: f64,
        y: f64,
        p_c: f64,
        volume_bound: f64,
    ) -> Result<PlacementLaw> {
        let a: Vec<f64> = self.first_coefs.iter().map(|f| f(b, y)).collect();
        let c: Vec<f64> = self.second_coefs.iter().map(|f| f(b, y)).collect();
        if let Some(k) = c.iter().position(|v| !(*v >= 0.0)) {
            return Err(LobError::InvalidParameter(format!(
                "second-moment coefficient {k} is {} at (b, y) = ({b}, {y})",
                c[k]
            )));
        }
        let total_g = c.iter().zip(&self.totals).map(|(c, t)| c * t).sum();
        Ok(PlacementLaw {
            a,
            c,
            total_g,
            p_c,
            delta: self.grid.delta(),
            bound: volume_bound,
        })
    }

    fn f_at(&self, law: &PlacementLaw, j: usize) -> f64 {
        law.a.iter().zip(&self.first).map(|(a, s)| a * s[j]).sum()
    }

    fn g_at(&self, law: &PlacementLaw, j: usize) -> f64 {
        law.c.iter().zip(&self.second).map(|(c, s)| c * s[j]).sum()
    }

    /// Two-point law for `omega` at cell `j`, or `None` if `j` carries no weight.
    pub fn cell_law(&self, law: &PlacementLaw, j: usize) -> Result<Option<TwoPointLaw>> {
        let g = self.g_at(law, j);
        let f = self.f_at(law, j);
        if g <= 0.0 {
            if f != 0.0 {
                return Err(LobError::MomentInfeasible {
                    cell: j,
                    second: 0.0,
                    mean_sq: f * f,
                });
            }
            return Ok(None);
        }
        if law.p_c <= 0.0 {
            return Err(LobError::PlacementBound {
                cell: j,
                reason: "placement moments are non-zero but p_C = 0".into(),
            });
        }
        // w_j = g_j / sum g, so p_C w_j mu_j = delta f_j and p_C w_j s_j = delta g_j.
        let mu = law.delta * f * law.total_g / (law.p_c * g);
        let s = law.delta * law.total_g / law.p_c;
        TwoPointLaw::from_moments(mu, s, law.bound)
            .map(Some)
            .map_err(|e| match e {
                LobError::MomentInfeasible {
                    second, mean_sq, ..
                } => LobError::MomentInfeasible {
                    cell: j,
                    second,
                    mean_sq,
                },
                LobError::PlacementBound { reason, .. } => {
                    LobError::PlacementBound { cell: j, reason }
                }
                other => other,
            })
    }

    /// Draws `(cell, omega)` for a C event. Returns `None` for the no-op
    /// placement used when both moment densities vanish.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        law: &PlacementLaw,
        rng: &mut R,
    ) -> Result<Option<(usize, f64)>> {
        if law.total_g <= 0.0 {
            if law
                .a
                .iter()
                .zip(&self.first)
                .any(|(a, s)| *a != 0.0 && s.iter().any(|v| *v != 0.0))
            {
                return Err(LobError::MomentInfeasible {
                    cell: self.first_nonzero_f(law).unwrap_or(0),
                    second: 0.0,
                    mean_sq: f64::NAN,
                });
            }
            return Ok(None);
        }
        let mut target = rng.random::<f64>() * law.total_g;
        let mut k = 0;
        for (i, (c, t)) in law.c.iter().zip(&self.totals).enumerate() {
            k = i;
            let m = c * t;
            if target < m {
                break;
            }
            target -= m;
        }
        let cdf = &self.cdfs[k];
        let u = (target / law.c[k]).min(self.totals[k]);
        let j = cdf.partition_point(|v| *v <= u).min(cdf.len() - 1);
        let j = (j..cdf.len())
            .find(|&i| self.second[k][i] > 0.0)
            .unwrap_or(j);
        let tp = self
            .cell_law(law, j)?
            .expect("sampled cell carries positive second moment");
        Ok(Some((j, tp.sample(rng.random::<f64>()))))
    }

    fn first_nonzero_f(&self, law: &PlacementLaw) -> Option<usize> {
        (0..self.grid.n_cells()).find(|&j| self.f_at(law, j) != 0.0)
    }
}

/// Law of `omega` on `{lo, hi}` with `P(hi) = p_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPointLaw {
    pub lo: f64,
    pub hi: f64,
    pub p_hi: f64,
}

impl TwoPointLaw {
    /// Matches mean `mu` and second moment `s` with `|omega| <= bound`.
    /// Uses `lo = mu - sd r`, `hi = mu + sd / r`, `P(hi) = r^2 / (1 + r^2)`,
    /// with `r = 1` unless the bound forces another ratio.
    pub fn from_moments(mu: f64, s: f64, bound: f64) -> Result<Self> {
        let var = s - mu * mu;
        let tol = 1e-12 * s.abs().max(mu * mu);
        if var < -tol {
            return Err(LobError::MomentInfeasible {
                cell: 0,
                second: s,
                mean_sq: mu * mu,
            });
        }
        let sd = var.max(0.0).sqrt();
        if sd == 0.0 {
            if mu.abs() > bound {
                return Err(LobError::PlacementBound {
                    cell: 0,
                    reason: format!("|omega| = {} exceeds bound {bound}", mu.abs()),
                });
            }
            return Ok(Self {
                lo: mu,
                hi: mu,
                p_hi: 1.0,
            });
        }
        if s > bound * bound * (1.0 + 1e-12) {
            return Err(LobError::PlacementBound {
                cell: 0,
                reason: format!("second moment {s} exceeds bound^2 = {}", bound * bound),
            });
        }
        let r_min = if bound > mu {
            sd / (bound - mu)
        } else {
            f64::INFINITY
        };
        let r_max = (bound + mu) / sd;
        let r = 1.0_f64.max(r_min).min(r_max);
        Ok(Self {
            lo: mu - sd * r,
            hi: mu + sd / r,
            p_hi: r * r / (1.0 + r * r),
        })
    }

    pub fn sample(&self, uniform: f64) -> f64 {
        if uniform < self.p_hi {
            self.hi
        } else {
            self.lo
        }
    }

    pub fn mean(&self) -> f64 {
        self.p_hi * self.hi + (1.0 - self.p_hi) * self.lo
    }

    pub fn second_moment(&self) -> f64 {
        self.p_hi * self.hi * self.hi + (1.0 - self.p_hi) * self.lo * self.lo
    }
}

/// Full per-cell event law at one state.
#[derive(Debug, Clone)]
pub struct EventDistribution {
    pub probs: EventProbs,
    pub p_c: f64,
    /// Cell weights `w_j`, summing to 1 unless all placements vanish.
    pub weights: Vec<f64>,
    pub laws: Vec<Option<TwoPointLaw>>,
}

/// Explicit event law at `(b, y)`; checks feasibility in every cell.
pub fn sampler_ingredients(
    spec: &ModelSpec,
    grid: &TickGrid,
    b: f64,
    y: f64,
) -> Result<EventDistribution> {
    let dm = spec.moments.discretize(grid)?;
    let probs = spec.probs.eval(b, y);
    let p_c = probs.c();
    let law = dm.placement_law(b, y, p_c, spec.volume_bound)?;
    let n = grid.n_cells();
    let mut weights = vec![0.0; n];
    let mut laws = vec![None; n];
    for j in 0..n {
        let tp = dm.cell_law(&law, j)?;
        if tp.is_some() {
            weights[j] = dm.g_at(&law, j) / law.total_g;
        }
        laws[j] = tp;
    }
    Ok(EventDistribution {
        probs,
        p_c,
        weights,
        laws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    Smooth,
    LeftIndicator,
}

#[derive(Debug, Clone)]
pub struct VolumeIndicator {
    pub h: TestFunction,
    pub kind: IndicatorKind,
}

impl VolumeIndicator {
    /// `h = 1_{(-inf, 0]}`, total visible volume.
    pub fn left_indicator() -> Self {
        Self {
            h: TestFunction::left_indicator(),
            kind: IndicatorKind::LeftIndicator,
        }
    }

    /// A smooth indicator; its declared support must lie in `x <= 0`.
    pub fn smooth(h: TestFunction) -> Result<Self> {
        match h.support() {
            Some((_, hi)) if hi <= 0.0 => Ok(Self {
                h,
                kind: IndicatorKind::Smooth,
            }),
            _ => Err(LobError::InvalidParameter(format!(
                "volume indicator {} must declare support in x <= 0",
                h.name()
            ))),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.h.eval(x)
    }
}

/// Everything that defines the discrete model apart from the grid and the
/// initial state.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub probs: EventProbabilityFns,
    pub moments: PlacementMomentFns,
    pub h: VolumeIndicator,
    /// Bound on placement distance and on the support of the initial book.
    pub support_bound: f64,
    /// Bound on placed volume and on the initial density.
    pub volume_bound: f64,
}

impl ModelSpec {
    pub fn new(
        probs: EventProbabilityFns,
        moments: PlacementMomentFns,
        h: VolumeIndicator,
        bound: f64,
    ) -> Self {
        Self {
            probs,
            moments,
            h,
            support_bound: bound,
            volume_bound: bound,
        }
    }

    pub fn with_volume_bound(mut self, bound: f64) -> Self {
        self.volume_bound = bound;
        self
    }
}

/// Coefficients of the simplified model's linear and quadratic regressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimplifiedCoefficients {
    pub p_c: f64,
    pub p_y: f64,
    pub f0_c: f64,
    pub f0_y: f64,
    #[serde(rename = "F_c")]
    pub big_f_c: f64,
    #[serde(rename = "F_y")]
    pub big_f_y: f64,
    #[serde(rename = "G_c")]
    pub big_g_c: f64,
    #[serde(rename = "G_y")]
    pub big_g_y: f64,
    #[serde(rename = "G_yy")]
    pub big_g_yy: f64,
}

impl SimplifiedCoefficients {
    /// Bid side estimates.
    pub const BID: Self = Self {
        p_c: 1.1670e-1,
        p_y: 8.5861e-7,
        f0_c: 7.1715e5,
        f0_y: -1.1477e1,
        big_f_c: 2.7365e6,
        big_f_y: -4.3782e1,
        big_g_c: 1.7328e14,
        big_g_y: -5.8688e9,
        big_g_yy: 5.0276e4,
    };

    /// Ask side estimates.
    pub const ASK: Self = Self {
        p_c: 1.0601e-1,
        p_y: 9.7063e-7,
        f0_c: 5.5391e5,
        f0_y: -8.4154e0,
        big_f_c: 1.9873e6,
        big_f_y: -3.0186e1,
        big_g_c: 2.3727e13,
        big_g_y: -8.4335e8,
        big_g_yy: 8.2821e3,
    };

    pub fn p_sum_raw(&self, y: f64) -> f64 {
        self.p_c + self.p_y * y
    }

    /// `p^{B+A}(y)` clamped to `[0, 1]`.
    pub fn p_sum(&self, y: f64) -> f64 {
        self.p_sum_raw(y).clamp(0.0, 1.0)
    }

    pub fn f0(&self, y: f64) -> f64 {
        self.f0_c + self.f0_y * y
    }

    pub fn big_f(&self, y: f64) -> f64 {
        self.big_f_c + self.big_f_y * y
    }

    pub fn big_f_prime(&self) -> f64 {
        self.big_f_y
    }

    pub fn big_g(&self, y: f64) -> f64 {
        self.big_g_c + self.big_g_y * y + 0.5 * self.big_g_yy * y * y
    }

    /// `G(y) - F(y)^2`, which must be non-negative for a valid covariance.
    pub fn variance_gap(&self, y: f64) -> f64 {
        let f = self.big_f(y);
        self.big_g(y) - f * f
    }

    /// Root of `F`, the stationary total volume.
    pub fn y_star(&self) -> f64 {
        -self.big_f_c / self.big_f_y
    }

    /// Volume at which the linear activity model reaches 1.
    pub fn y_prob_boundary(&self) -> f64 {
        (1.0 - self.p_c) / self.p_y
    }

    /// Points of a uniform lattice on `[lo, hi]` where the activity leaves
    /// `[0, 1]` or the variance gap is negative.
    pub fn check_range(&self, lo: f64, hi: f64, n: usize) -> Vec<CoefficientViolation> {
        let n = n.max(2);
        let mut out = Vec::new();
        for i in 0..n {
            let y = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let p = self.p_sum_raw(y);
            if !(0.0..=1.0).contains(&p) {
                out.push(CoefficientViolation {
                    y,
                    quantity: "p_sum".into(),
                    value: p,
                });
            }
            let gap = self.variance_gap(y);
            if gap < 0.0 {
                out.push(CoefficientViolation {
                    y,
                    quantity: "G-F^2".into(),
                    value: gap,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientViolation {
    pub y: f64,
    pub quantity: String,
    pub value: f64,
}

/// Finite rectangle of states `(b, y)` probed on a uniform `n x n` lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub b: (f64, f64),
    pub y: (f64, f64),
    pub n: usize,
}

impl SampleBox {
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.n.max(1);
        let at = |(lo, hi): (f64, f64), i: usize| {
            if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        (0..n)
            .flat_map(|i| (0..n).map(move |k| (i, k)))
            .map(|(i, k)| (at(self.b, i), at(self.y, k)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub id: String,
    pub passed: bool,
    pub detail: String,
    pub witness: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

/// Runtime checks of the standing assumptions. Never fails; failures are
/// reported with witnesses.
pub fn validate_assumptions(
    spec: &ModelSpec,
    init: &StepDensity,
    sample_box: &SampleBox,
) -> ValidationReport {
    let grid = *init.grid();
    let m = spec.support_bound;
    let mut checks = Vec::new();

    let outside = (0..grid.n_cells()).find(|&j| {
        init.values()[j] != 0.0 && (grid.x_right(j) > m + 1e-12 || grid.x_left(j) < -m - 1e-12)
    });
    checks.push(AssumptionCheck {
        id: "initial_support".into(),
        passed: outside.is_none(),
        detail: format!("initial density supported in [-{m}, {m}]"),
        witness: outside.map(|j| serde_json::json!({ "cell": j, "x_left": grid.x_left(j) })),
    });
    let sup = init.sup_norm();
    let negative = init.values().iter().position(|v| *v < 0.0);
    checks.push(AssumptionCheck {
        id: "initial_bounded".into(),
        passed: sup <= spec.volume_bound && negative.is_none(),
        detail: format!("sup |u0| = {sup}, bound {}", spec.volume_bound),
        witness: negative.map(|j| serde_json::json!({ "negative_cell": j })),
    });

    let support = spec.moments.support();
    let support_ok =
        spec.moments.is_zero() || matches!(support, Some((lo, hi)) if lo >= -m && hi <= m);
    checks.push(AssumptionCheck {
        id: "placement_support".into(),
        passed: support_ok,
        detail: format!("moment shapes supported in [-{m}, {m}]"),
        witness: support.map(|(lo, hi)| serde_json::json!({ "lo": lo, "hi": hi })),
    });

    let points = sample_box.points();
    let mut sup_p: f64 = 0.0;
    let mut sup_f: f64 = 0.0;
    let mut sup_g: f64 = 0.0;
    let mut prob_fail = None;
    let mut feas_fail: Option<serde_json::Value> = None;
    let clamps_before = spec.probs.clamp_count();
    let dm = spec.moments.discretize(&grid);
    for &(b, y) in &points {
        let pa = (spec.probs.prob_a)(b, y);
        let pb = (spec.probs.prob_b)(b, y);
        if prob_fail.is_none() && !(pa >= 0.0 && pb >= 0.0 && pa + pb <= 1.0) {
            prob_fail = Some(serde_json::json!({ "b": b, "y": y, "p_A": pa, "p_B": pb }));
        }
        let probs = spec.probs.eval(b, y);
        sup_p = sup_p.max(probs.p().abs());
        if !spec.moments.is_zero() {
            sup_f = sup_f.max(spec.moments.f(&grid, b, y).l2_norm());
            let g = spec.moments.g(&grid, b, y);
            sup_g = sup_g.max(g.values().iter().map(|v| v.abs()).sum::<f64>() * grid.delta());
        }
        if feas_fail.is_none() {
            let res = dm.as_ref().map_err(|e| e.to_string()).and_then(|dm| {
                let law = dm
                    .placement_law(b, y, probs.c(), spec.volume_bound)
                    .map_err(|e| e.to_string())?;
                for j in 0..grid.n_cells() {
                    dm.cell_law(&law, j).map_err(|e| e.to_string())?;
                }
                Ok(())
            });
            if let Err(e) = res {
                feas_fail = Some(serde_json::json!({ "b": b, "y": y, "error": e }));
            }
        }
    }
    // Lattice probing should not pollute the simulation telemetry.
    spec.probs.clamps.store(clamps_before, Ordering::Relaxed);

    checks.push(AssumptionCheck {
        id: "probabilities".into(),
        passed: prob_fail.is_none(),
        detail: "raw p_A, p_B >= 0 and p_A + p_B <= 1 on the sample lattice".into(),
        witness: prob_fail,
    });
    checks.push(AssumptionCheck {
        id: "imbalance_bounded".into(),
        passed: sup_p.is_finite() && sup_p <= 1.0,
        detail: format!("sup |p| = {sup_p}"),
        witness: Some(serde_json::json!(sup_p)),
    });
    checks.push(AssumptionCheck {
        id: "first_moment_bounded".into(),
        passed: sup_f.is_finite(),
        detail: format!("sup ||f||_L2 = {sup_f}"),
        witness: Some(serde_json::json!(sup_f)),
    });
    checks.push(AssumptionCheck {
        id: "second_moment_bounded".into(),
        passed: sup_g.is_finite(),
        detail: format!("sup ||g||_L1 = {sup_g}"),
        witness: Some(serde_json::json!(sup_g)),
    });
    checks.push(AssumptionCheck {
        id: "placement_feasible".into(),
        passed: feas_fail.is_none(),
        detail: "two-point volume law exists in every weighted cell".into(),
        witness: feas_fail,
    });
    ValidationReport { checks }
}
