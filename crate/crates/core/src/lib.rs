//! Rank-based interacting diffusions driven by a common noise, and the
//! stochastic PDE that their empirical CDF approaches as the number of
//! particles grows.

#[cfg(feature = "cli")]
pub mod cli;
pub mod coefficients;
pub mod config;
pub mod diagnostics;
pub mod experiments;
pub mod expr;
pub mod measures;
pub mod particles;
pub mod quadrature;
pub mod randomness;
pub mod spde;

use thiserror::Error;

pub use coefficients::{CoefficientError, CoefficientSet, Transform};
pub use config::ConfigError;
pub use diagnostics::DiagnosticError;
pub use experiments::ExperimentError;
pub use expr::{parse_coefficient, CoefficientExpr, ParseError};
pub use measures::{empirical_cdf, w1, GridFunction, InitialDistribution, MeasureError, StepCdf};
pub use particles::{ParticleError, ParticleState, Trajectory};
pub use randomness::{BrownianPath, RandomnessError};
pub use spde::{solve, spde_step, SolverConfig, SpdeError, SpdeSolution};

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Coefficient(#[from] CoefficientError),
    #[error(transparent)]
    Randomness(#[from] RandomnessError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Particle(#[from] ParticleError),
    #[error(transparent)]
    Spde(#[from] SpdeError),
    #[error(transparent)]
    Diagnostic(#[from] DiagnosticError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}
