//! Scalar and matrix observables of one- and two-particle states.

use nalgebra::DMatrix;

use crate::error::DynamicsError;
use crate::linalg::{hermiticity_residual, min_eigenvalue, purity, trace, CMatrix};
use crate::scalar::{Modulus, Real, C};
use crate::single::DensityMatrix;
use crate::two::TwoParticleDensity;

/// Site populations `Re rho_nn`.
pub fn populations<T: Real>(rho: &DensityMatrix<T>) -> Vec<T> {
    let m = rho.matrix();
    (0..m.nrows())
        .map(|k| {
            debug_assert!(m[(k, k)].im.abs().to_f64_lossy() <= 1e-12_f64.max(T::HERMITIAN_TOL));
            m[(k, k)].re
        })
        .collect()
}

/// Off-diagonal element `rho_nm`.
pub fn coherence<T: Real>(rho: &DensityMatrix<T>, n: usize, m: usize) -> Result<C<T>, DynamicsError> {
    if n == m {
        return Err(DynamicsError::SameSite(n));
    }
    let dim = rho.dim();
    if n >= dim || m >= dim {
        return Err(DynamicsError::BadSitePair { a: n, b: m, n_sites: dim });
    }
    Ok(rho.matrix()[(n, m)])
}

/// `Gamma_pq = Re rho_{pq,pq}`: probability of one particle at `p` and the
/// other at `q`. Raw values are kept, including tiny negative ones.
#[derive(Debug, Clone, PartialEq)]
pub struct JointProbabilityMatrix<T: Real> {
    gamma: DMatrix<T>,
}

impl<T: Real> JointProbabilityMatrix<T> {
    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.gamma
    }

    pub fn get(&self, p: usize, q: usize) -> T {
        self.gamma[(p, q)]
    }

    pub fn total(&self) -> T {
        self.gamma.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn min_diagonal(&self) -> T {
        (0..self.dim()).map(|p| self.gamma[(p, p)]).fold(T::max_value().unwrap(), |a, b| a.min(b))
    }

    pub fn max_off_diagonal(&self) -> T {
        let n = self.dim();
        let mut best = T::min_value().unwrap();
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    best = best.max(self.gamma[(p, q)]);
                }
            }
        }
        best
    }
}

pub fn joint_probability<T: Real>(rho: &TwoParticleDensity<T>) -> JointProbabilityMatrix<T> {
    joint_probability_raw(rho.n_sites(), rho.matrix())
}

/// As [`joint_probability`], for matrices not wrapped as densities (for
/// example Monte-Carlo means).
pub fn joint_probability_raw<T: Real>(n: usize, rho: &CMatrix<T>) -> JointProbabilityMatrix<T> {
    JointProbabilityMatrix { gamma: DMatrix::from_fn(n, n, |p, q| rho[(p * n + q, p * n + q)].re) }
}

/// Probability that both particles share a site, `sum_p Gamma_pp`.
pub fn bunching_ratio<T: Real>(g: &JointProbabilityMatrix<T>) -> T {
    (0..g.dim()).fold(T::zero(), |a, p| a + g.gamma[(p, p)])
}

/// `| |a| - |b| |` element-wise: compares magnitudes only.
pub fn delta_rho<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Result<DMatrix<T>, DynamicsError> {
    same_shape(a, b)?;
    Ok(DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)].cabs() - b[(i, j)].cabs()).abs()))
}

/// `|a - b|` element-wise: sensitive to phases, unlike [`delta_rho`].
pub fn complex_deviation<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Result<DMatrix<T>, DynamicsError> {
    same_shape(a, b)?;
    Ok(DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] - b[(i, j)]).cabs()))
}

fn same_shape<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> Result<(), DynamicsError> {
    if a.shape() != b.shape() {
        return Err(DynamicsError::DimensionMismatch { expected: a.nrows(), found: b.nrows() });
    }
    Ok(())
}

/// Diagnostics of an arbitrary matrix viewed as a density matrix.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DensityDiagnostics {
    pub trace_deviation: f64,
    pub hermiticity_residual: f64,
    pub min_eigenvalue: f64,
    pub purity: f64,
}

pub fn validate_density<T: Real>(rho: &CMatrix<T>) -> DensityDiagnostics {
    DensityDiagnostics {
        trace_deviation: (trace(rho) - C::new(T::one(), T::zero())).cabs().to_f64_lossy(),
        hermiticity_residual: hermiticity_residual(rho).to_f64_lossy(),
        min_eigenvalue: min_eigenvalue(rho).to_f64_lossy(),
        purity: purity(rho).to_f64_lossy(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::two::{canonical_two_particle_state, CanonicalKind};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn populations_of_simple_states() {
        assert_eq!(populations(&DensityMatrix::<f64>::site(0, 3)), vec![1.0, 0.0, 0.0]);
        for p in populations(&DensityMatrix::<f64>::maximally_mixed(4)) {
            assert_abs_diff_eq!(p, 0.25);
        }
    }

    #[test]
    fn coherence_of_plus_state() {
        let r = 0.5f64.sqrt();
        let rho = DensityMatrix::pure(&[C::new(r, 0.0), C::new(r, 0.0)]).unwrap();
        assert_abs_diff_eq!(coherence(&rho, 0, 1).unwrap().re, 0.5, epsilon = 1e-15);
        assert_eq!(coherence(&rho, 1, 1), Err(DynamicsError::SameSite(1)));
    }

    #[test]
    fn canonical_joint_probabilities_at_start() {
        let sep = joint_probability(&canonical_two_particle_state::<f64>(CanonicalKind::Separable, (0, 1), 3).unwrap());
        assert_abs_diff_eq!(sep.get(0, 1), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sep.get(1, 0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(bunching_ratio(&sep), 0.0);
        let ent = joint_probability(&canonical_two_particle_state::<f64>(CanonicalKind::Entangled, (0, 1), 3).unwrap());
        assert_abs_diff_eq!(bunching_ratio(&ent), 1.0, epsilon = 1e-15);
        let inc = joint_probability(&canonical_two_particle_state::<f64>(CanonicalKind::Incoherent, (0, 1), 3).unwrap());
        assert_abs_diff_eq!(bunching_ratio(&inc), 0.0);
        assert_abs_diff_eq!(inc.total(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn delta_rho_ignores_global_phase() {
        let psi = [C::new(0.6, 0.0), C::new(0.0, 0.8)];
        let phase = C::new(0.0, 1.0);
        let a = DensityMatrix::pure(&psi).unwrap();
        let b = CMatrix::from_fn(2, 2, |i, j| psi[i] * phase * (psi[j] * phase).conj());
        assert!(delta_rho(a.matrix(), &b).unwrap().iter().all(|&x| x < 1e-15));
        let shifted = a.matrix().map(|z| z * phase);
        assert!(delta_rho(a.matrix(), &shifted).unwrap().iter().all(|&x| x < 1e-15));
        assert!(complex_deviation(a.matrix(), &shifted).unwrap().max() > 0.1);
        assert!(delta_rho(a.matrix(), &CMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn diagnostics() {
        let d = validate_density(DensityMatrix::<f64>::maximally_mixed(4).matrix());
        assert_abs_diff_eq!(d.trace_deviation, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.min_eigenvalue, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(d.purity, 0.25, epsilon = 1e-15);
        let mut bad = DensityMatrix::<f64>::site(0, 2).into_matrix();
        bad[(0, 1)] = C::new(0.3, 0.0);
        assert_abs_diff_eq!(validate_density(&bad).hermiticity_residual, 0.3);
    }

    fn matrix(n: usize) -> impl Strategy<Value = CMatrix<f64>> {
        proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n * n)
            .prop_map(move |v| CMatrix::from_iterator(n, n, v.into_iter().map(|(a, b)| C::new(a, b))))
    }

    proptest! {
        #[test]
        fn delta_rho_is_symmetric_and_vanishes_on_equal_moduli(a in matrix(3), b in matrix(3)) {
            let ab = delta_rho(&a, &b).unwrap();
            prop_assert_eq!(&ab, &delta_rho(&b, &a).unwrap());
            prop_assert!(ab.iter().all(|&x| x >= 0.0));
            prop_assert!(delta_rho(&a, &a.map(|z| z.conj())).unwrap().iter().all(|&x| x < 1e-15));
        }
    }
}
