//! Gaussian limits of the rescaled fluctuations: the simplified
//! two-dimensional OU process and the Galerkin-truncated SPDE.

pub mod simplified;
pub mod spectral;

pub use simplified::{
    simplified_covariance, simulate_simplified_ou, CovarianceExponent, CovariancePoint,
    EnsembleOptions, OuEnsemble, OuScheme, SecondMoment, SimplifiedModel,
};
pub use spectral::{
    assemble_sigma, simulate_spde, FourierBasis, Galerkin, SigmaSample, SpdeEnsemble, SpdeOptions,
};
