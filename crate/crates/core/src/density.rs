//! Invariant checks shared by one- and two-particle density matrices.

use crate::error::DynamicsError;
use crate::linalg::{hermiticity_residual, min_eigenvalue, trace, CMatrix};
use crate::scalar::{Modulus, Real};

/// Checks Hermiticity, unit trace and positivity at the crate tolerances.
pub(crate) fn check_density<T: Real>(rho: &CMatrix<T>, t: f64) -> Result<(), DynamicsError> {
    if !rho.is_square() {
        return Err(DynamicsError::DimensionMismatch { expected: rho.nrows(), found: rho.ncols() });
    }
    let herm = hermiticity_residual(rho).to_f64_lossy();
    if !(herm <= T::HERMITIAN_TOL) {
        return Err(DynamicsError::InvariantViolation { t, what: format!("hermiticity residual {herm:e}") });
    }
    let tr = trace(rho);
    let dev = (tr - crate::scalar::C::new(T::one(), T::zero())).cabs().to_f64_lossy();
    if !(dev <= T::TRACE_TOL) {
        return Err(DynamicsError::InvariantViolation { t, what: format!("trace deviation {dev:e}") });
    }
    let min_eig = min_eigenvalue(rho).to_f64_lossy();
    if !(min_eig >= -T::POSITIVITY_TOL) {
        return Err(DynamicsError::InvariantViolation { t, what: format!("minimum eigenvalue {min_eig:e}") });
    }
    Ok(())
}
