//! Noise-averaged quantum walks on tight-binding networks with fluctuating
//! couplings.
//!
//! The master equations for one and two particles live in [`single`] and
//! [`two`]; [`oracle`] integrates the underlying stochastic Schrödinger
//! equation trajectory by trajectory as an independent reference. Everything
//! is generic over the real scalar (`f32` or `f64`); the aliases below fix
//! it to `f64`.

pub mod config;
pub mod density;
pub mod error;
pub mod linalg;
pub mod network;
pub mod observables;
pub mod ode;
pub mod oracle;
pub mod scalar;
pub mod single;
pub mod two;

pub use error::{DynamicsError, OracleError};
pub use linalg::CMatrix;
pub use network::{NetworkError, NetworkSpec, ValidatedNetwork};
pub use ode::{OdeError, SolverOptions, StepMode, TimeGrid};
pub use oracle::{OracleOptions, StochasticScheme, TrajectoryEnsemble, TwoParticleInput};
pub use scalar::{Real, C};
pub use single::DensityMatrix;
pub use two::{CanonicalKind, Statistics, TwoParticleAmplitude, TwoParticleDensity};

pub type Complex64 = C<f64>;
pub type CMatrix64 = CMatrix<f64>;
pub type Network64 = ValidatedNetwork<f64>;
pub type NetworkSpec64 = NetworkSpec<f64>;
pub type TimeGrid64 = TimeGrid<f64>;
pub type SolverOptions64 = SolverOptions<f64>;
pub type Density64 = DensityMatrix<f64>;
pub type TwoParticleDensity64 = TwoParticleDensity<f64>;
pub type OracleOptions64 = OracleOptions<f64>;
pub type Ensemble64 = TrajectoryEnsemble<f64>;
