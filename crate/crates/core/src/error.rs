use thiserror::Error;

use crate::network::NetworkError;
use crate::ode::OdeError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invariant violated at t = {t} ps: {what}")]
    InvariantViolation { t: f64, what: String },
    #[error("no steady state reached within {t_max} ps (residual {residual:e})")]
    NoConvergence { t_max: f64, residual: f64 },
    #[error("steady-state null space has dimension {dimension}")]
    DegenerateNullSpace { dimension: usize },
    #[error("integrated and null-space steady states differ by {deviation:e} (allowed {allowed:e})")]
    SteadyStateMismatch { deviation: f64, allowed: f64 },
    #[error("two-particle amplitude vanishes after (anti)symmetrization")]
    ZeroAmplitude,
    #[error("invalid site pair ({a}, {b}) for {n_sites} sites")]
    BadSitePair { a: usize, b: usize, n_sites: usize },
    #[error("coherence requested between a site and itself ({0})")]
    SameSite(usize),
    #[error("input not normalized (norm^2 = {0})")]
    NotNormalized(f64),
    #[error("amplitude does not have the required exchange symmetry (residual {0:e})")]
    ExchangeSymmetry(f64),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{what} must be positive, got {value}")]
    NonPositiveInput { what: &'static str, value: f64 },
    #[error("trajectory {trajectory}: unitarity defect {defect:e} exceeds {allowed:e} at t = {t} ps (dt too large?)")]
    UnitarityLost { trajectory: u64, t: f64, defect: f64, allowed: f64 },
    #[error("initial amplitude not normalized (norm^2 = {0})")]
    NotNormalized(f64),
    #[error("need at least one trajectory")]
    NoTrajectories,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}
