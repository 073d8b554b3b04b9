//! Two-dimensional Ornstein-Uhlenbeck limit of `(Z^B, Z^Y)` when the price
//! has no drift and the volume indicator is the total visible volume.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};
use crate::firstorder::FirstOrderSolution;
use crate::fluctuations::{pair_stats, FluctuationStats};
use crate::microsim::run_ensemble;
use crate::params::SimplifiedCoefficients;

/// How the exponential weight in the covariance integrals is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceExponent {
    /// `exp(k * int_s^t F'(Y(r)) dr)`, the OU solution.
    #[default]
    Integral,
    /// `exp(k * F'(Y(t - s)))` exactly as displayed, without a time factor.
    Literal,
}

impl std::str::FromStr for CovarianceExponent {
    type Err = LobError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "integral" => Ok(Self::Integral),
            "literal" => Ok(Self::Literal),
            other => Err(LobError::Config(format!(
                "unknown covariance exponent '{other}'"
            ))),
        }
    }
}

/// Which second moment enters `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecondMoment {
    /// The fitted quadratic `G`.
    Fitted,
    /// `max(G, F^2 / p_C)`, the value used by the lifted microscopic model.
    #[default]
    Floored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedModel {
    pub coeffs: SimplifiedCoefficients,
    /// Mesh of the first-order path.
    pub dt: f64,
    pub y: Vec<f64>,
    /// First-order density at the top of the book.
    pub u_top: Vec<f64>,
    pub second_moment: SecondMoment,
    /// Ablation: drop the price/volume cross term.
    pub zero_q: bool,
}

impl SimplifiedModel {
    pub fn from_solution(coeffs: SimplifiedCoefficients, sol: &FirstOrderSolution) -> Self {
        Self {
            coeffs,
            dt: sol.dt,
            y: sol.y.clone(),
            u_top: sol.top.clone(),
            second_moment: SecondMoment::default(),
            zero_q: false,
        }
    }

    /// First-order path in closed form: `Y` relaxes exponentially to the root
    /// of `F` and `u(t, 0)` integrates the top-of-book placement mean.
    pub fn closed_form(
        coeffs: SimplifiedCoefficients,
        y0: f64,
        u_top0: f64,
        horizon: f64,
        dt: f64,
    ) -> Result<Self> {
        if !(dt > 0.0 && horizon >= 0.0) {
            return Err(LobError::InvalidParameter(format!(
                "need dt > 0, horizon >= 0; got {dt}, {horizon}"
            )));
        }
        let n = (horizon / dt + 1e-9).ceil() as usize;
        let lambda = coeffs.big_f_prime();
        let ys = coeffs.y_star();
        let y_at = |t: f64| {
            if lambda == 0.0 {
                y0 + coeffs.big_f_c * t
            } else {
                ys + (y0 - ys) * (lambda * t).exp()
            }
        };
        let y: Vec<f64> = (0..=n).map(|i| y_at(i as f64 * dt)).collect();
        let mut u_top = Vec::with_capacity(n + 1);
        let mut u = u_top0;
        u_top.push(u);
        for i in 0..n {
            u += 0.5 * dt * (coeffs.f0(y[i]) + coeffs.f0(y[i + 1]));
            u_top.push(u);
        }
        Ok(Self {
            coeffs,
            dt,
            y,
            u_top,
            second_moment: SecondMoment::default(),
            zero_q: false,
        })
    }

    pub fn with_second_moment(mut self, m: SecondMoment) -> Self {
        self.second_moment = m;
        self
    }

    pub fn with_zero_q(mut self, zero_q: bool) -> Self {
        self.zero_q = zero_q;
        self
    }

    pub fn horizon(&self) -> f64 {
        (self.y.len() - 1) as f64 * self.dt
    }

    fn lerp(&self, v: &[f64], t: f64) -> f64 {
        let r = (t / self.dt).clamp(0.0, (v.len() - 1) as f64);
        let i = (r.floor() as usize).min(v.len().saturating_sub(2));
        let w = r - i as f64;
        if v.len() == 1 || w == 0.0 {
            v[i]
        } else {
            (1.0 - w) * v[i] + w * v[i + 1]
        }
    }

    pub fn y_at(&self, t: f64) -> f64 {
        self.lerp(&self.y, t)
    }

    pub fn u_top_at(&self, t: f64) -> f64 {
        self.lerp(&self.u_top, t)
    }

    pub fn g(&self, y: f64) -> f64 {
        match self.second_moment {
            SecondMoment::Fitted => self.coeffs.big_g(y),
            SecondMoment::Floored => crate::presets::effective_g(&self.coeffs, y),
        }
    }

    /// `F'(Y(t))`, the only non-zero entry of the drift matrix.
    pub fn drift_rate(&self, _t: f64) -> f64 {
        self.coeffs.big_f_prime()
    }

    pub fn drift_matrix(&self, t: f64) -> [[f64; 2]; 2] {
        [[0.0, 0.0], [0.0, self.drift_rate(t)]]
    }

    pub fn p_tilde(&self, t: f64) -> f64 {
        self.coeffs.p_sum(self.y_at(t))
    }

    pub fn q_tilde(&self, t: f64) -> f64 {
        if self.zero_q {
            0.0
        } else {
            self.p_tilde(t) * self.u_top_at(t)
        }
    }

    pub fn r_tilde(&self, t: f64) -> f64 {
        let y = self.y_at(t);
        let u = self.u_top_at(t);
        let f = self.coeffs.big_f(y);
        self.coeffs.p_sum(y) * u * u + self.g(y) - f * f
    }

    pub fn sigma_matrix(&self, t: f64) -> [[f64; 2]; 2] {
        let q = self.q_tilde(t);
        [[self.p_tilde(t), q], [q, self.r_tilde(t)]]
    }

    /// Upper-triangular `sigma` with `sigma sigma^T = Sigma`.
    pub fn sigma_factor(&self, t: f64) -> Result<[[f64; 2]; 2]> {
        let [[p, q], [_, r]] = self.sigma_matrix(t);
        let scale = p.abs().max(r.abs()).max(q.abs()).max(f64::MIN_POSITIVE);
        let tol = 1e-12 * scale;
        let det = p * r - q * q;
        if p < -tol || r < -tol || det < -1e-12 * scale * scale {
            return Err(LobError::NotPsd {
                t,
                detail: format!("P = {p:e}, Q = {q:e}, R = {r:e}, PR - Q^2 = {det:e}"),
            });
        }
        if r <= 0.0 {
            return Ok([[p.max(0.0).sqrt(), 0.0], [0.0, 0.0]]);
        }
        let sr = r.sqrt();
        Ok([[(p - q * q / r).max(0.0).sqrt(), q / sr], [0.0, sr]])
    }

    /// First time on a uniform lattice of `[0, horizon]` where `Sigma` is not PSD.
    pub fn first_psd_failure(&self, n: usize) -> Option<f64> {
        let h = self.horizon();
        (0..=n.max(1))
            .map(|i| h * i as f64 / n.max(1) as f64)
            .find(|t| self.sigma_factor(*t).is_err())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariancePoint {
    pub t: f64,
    pub var_zb: f64,
    pub var_zy: f64,
    pub cov: f64,
    pub rho: f64,
}

fn trapezoid(n: usize, t: f64, f: impl Fn(f64) -> f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let h = t / n as f64;
    let mut acc = 0.5 * (f(0.0) + f(t));
    for i in 1..n {
        acc += f(i as f64 * h);
    }
    acc * h
}

/// Variances and covariance of `(Z^B_t, Z^Y_t)` started from zero.
pub fn simplified_covariance(
    model: &SimplifiedModel,
    t: f64,
    quad_steps: usize,
    exponent: CovarianceExponent,
) -> Result<CovariancePoint> {
    if !(0.0..=model.horizon() + 1e-12).contains(&t) {
        return Err(LobError::TimeOutOfRange {
            t,
            horizon: model.horizon(),
        });
    }
    let n = quad_steps.max(1);
    // drift rate is constant in y, so the integral of F' over [s, t] is exact
    let weight = |s: f64, k: f64| match exponent {
        CovarianceExponent::Integral => (k * model.drift_rate(s) * (t - s)).exp(),
        CovarianceExponent::Literal => (k * model.drift_rate(t - s)).exp(),
    };
    let var_zb = trapezoid(n, t, |s| model.p_tilde(s));
    let var_zy = trapezoid(n, t, |s| weight(s, 2.0) * model.r_tilde(s));
    let cov = trapezoid(n, t, |s| weight(s, 1.0) * model.q_tilde(s));
    if !(var_zb > 0.0 && var_zy > 0.0) {
        return Err(LobError::DegenerateVariance(format!(
            "Var(Z^B) = {var_zb}, Var(Z^Y) = {var_zy} at t = {t}"
        )));
    }
    Ok(CovariancePoint {
        t,
        var_zb,
        var_zy,
        cov,
        rho: cov / (var_zb * var_zy).sqrt(),
    })
}

/// Time-stepping scheme for the OU ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuScheme {
    #[default]
    Euler,
    /// Drift averaged over both ends of the step; the stationary variance of
    /// a constant-coefficient OU process is reproduced exactly.
    Trapezoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuEnsemble {
    pub times: Vec<f64>,
    /// `[checkpoint][path]`.
    pub zb: Vec<Vec<f64>>,
    pub zy: Vec<Vec<f64>>,
}

impl OuEnsemble {
    pub fn stats(&self) -> Vec<FluctuationStats> {
        (0..self.times.len())
            .map(|i| pair_stats(self.times[i], &self.zb[i], &self.zy[i]))
            .collect()
    }
}

/// Settings shared by the OU and spectral ensembles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Output times, rounded to the step mesh.
    pub checkpoints: Vec<f64>,
}

impl EnsembleOptions {
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt + 1e-9).round() as usize
    }

    pub(crate) fn checkpoint_steps(&self) -> Result<Vec<usize>> {
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(LobError::InvalidParameter(format!(
                "need dt > 0 and horizon > 0; got {}, {}",
                self.dt, self.horizon
            )));
        }
        let n = self.n_steps();
        self.checkpoints
            .iter()
            .map(|t| {
                let k = (t / self.dt).round() as usize;
                if k > n {
                    Err(LobError::TimeOutOfRange {
                        t: *t,
                        horizon: self.horizon,
                    })
                } else {
                    Ok(k)
                }
            })
            .collect()
    }
}

/// Euler-Maruyama (or trapezoidal) paths of `dZ = D Z dt + sigma dW`, `Z_0 = 0`.
pub fn simulate_simplified_ou(
    model: &SimplifiedModel,
    opts: &EnsembleOptions,
    scheme: OuScheme,
) -> Result<OuEnsemble> {
    let steps = opts.checkpoint_steps()?;
    let n = opts.n_steps();
    if opts.horizon > model.horizon() + 1e-9 {
        return Err(LobError::TimeOutOfRange {
            t: opts.horizon,
            horizon: model.horizon(),
        });
    }
    let dt = opts.dt;
    let coef: Vec<([[f64; 2]; 2], f64)> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            model.sigma_factor(t).map(|s| (s, model.drift_rate(t)))
        })
        .collect::<Result<_>>()?;
    let sq = dt.sqrt();
    let rows = run_ensemble(opts.n_paths, opts.seed, |_, rng| {
        let (mut zb, mut zy) = (0.0, 0.0);
        let mut out = Vec::with_capacity(steps.len());
        let mut next = 0;
        let mut emit = |k: usize, zb: f64, zy: f64, out: &mut Vec<(f64, f64)>| {
            while next < steps.len() && steps[next] == k {
                out.push((zb, zy));
                next += 1;
            }
        };
        emit(0, zb, zy, &mut out);
        for (i, (s, lambda)) in coef.iter().enumerate() {
            let w1: f64 = StandardNormal.sample(rng);
            let w2: f64 = StandardNormal.sample(rng);
            let (d1, d2) = (sq * w1, sq * w2);
            zb += s[0][0] * d1 + s[0][1] * d2;
            let noise = s[1][0] * d1 + s[1][1] * d2;
            zy = match scheme {
                OuScheme::Euler => zy + lambda * zy * dt + noise,
                OuScheme::Trapezoidal => {
                    let h = 0.5 * lambda * dt;
                    ((1.0 + h) * zy + noise) / (1.0 - h)
                }
            };
            emit(i + 1, zb, zy, &mut out);
        }
        Ok(out)
    })?;
    Ok(OuEnsemble {
        times: steps.iter().map(|k| *k as f64 * dt).collect(),
        zb: (0..steps.len())
            .map(|c| rows.iter().map(|r| r[c].0).collect())
            .collect(),
        zy: (0..steps.len())
            .map(|c| rows.iter().map(|r| r[c].1).collect())
            .collect(),
    })
}
