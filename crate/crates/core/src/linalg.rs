//! Square roots of symmetric positive semidefinite matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{LobError, Result};

/// Relative eigenvalue threshold below which a matrix is not treated as PSD.
pub const PSD_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    /// Largest absolute eigenvalue.
    pub norm: f64,
    /// Smallest eigenvalue before clipping.
    pub min_eigenvalue: f64,
    /// Sum of the magnitudes of the clipped negative eigenvalues.
    pub clipped: f64,
    /// Frobenius norm of `factor * factor^T - sigma`.
    pub residual: f64,
}

impl FactorReport {
    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue >= -PSD_REL_TOL * self.norm
    }

    pub fn relative_residual(&self) -> f64 {
        if self.norm > 0.0 {
            self.residual / self.norm
        } else {
            self.residual
        }
    }
}

#[derive(Debug, Clone)]
pub struct PsdFactor {
    /// `V diag(sqrt(max(lambda, 0)))`.
    pub factor: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub report: FactorReport,
}

impl PsdFactor {
    /// Error naming `t` if the matrix had eigenvalues below the tolerance.
    pub fn require_psd(&self, t: f64) -> Result<()> {
        if self.report.is_psd() {
            Ok(())
        } else {
            Err(LobError::NotPsd {
                t,
                detail: format!(
                    "smallest eigenvalue {:e} below -{PSD_REL_TOL:e} * {:e}",
                    self.report.min_eigenvalue, self.report.norm
                ),
            })
        }
    }
}

/// Symmetrises `sigma`, eigendecomposes it and clips negative eigenvalues.
pub fn psd_sqrt(sigma: &DMatrix<f64>) -> PsdFactor {
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let norm = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let min_eigenvalue = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let clipped = eig
        .eigenvalues
        .iter()
        .filter(|l| **l < 0.0)
        .map(|l| -l)
        .sum();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
    let residual = (&factor * factor.transpose() - &sym).norm();
    PsdFactor {
        factor,
        eigenvalues: eig.eigenvalues,
        report: FactorReport {
            norm,
            min_eigenvalue: if min_eigenvalue.is_finite() {
                min_eigenvalue
            } else {
                0.0
            },
            clipped,
            residual,
        },
    }
}
