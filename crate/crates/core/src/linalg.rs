//! Dense complex matrix helpers and the row-major flattening convention.
//!
//! A matrix `M` of size `d x d` is flattened as `v[i * d + j] = M[(i, j)]`.
//! For two-particle objects the row index itself is a pair index `p * N + q`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::scalar::{czero, is_finite, Modulus, Real, C};

/// Dense complex matrix.
pub type CMatrix<T> = DMatrix<C<T>>;

pub fn flatten<T: Real>(m: &CMatrix<T>) -> Vec<C<T>> {
    let (r, c) = m.shape();
    let mut v = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            v.push(m[(i, j)]);
        }
    }
    v
}

pub fn unflatten<T: Real>(dim: usize, v: &[C<T>]) -> CMatrix<T> {
    assert_eq!(v.len(), dim * dim, "flattened length does not match dimension");
    CMatrix::from_fn(dim, dim, |i, j| v[i * dim + j])
}

/// Largest entry of `|M - M^†|`.
pub fn hermiticity_residual<T: Real>(m: &CMatrix<T>) -> T {
    let n = m.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).cabs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

pub fn trace<T: Real>(m: &CMatrix<T>) -> C<T> {
    (0..m.nrows()).fold(czero(), |acc, i| acc + m[(i, i)])
}

pub fn max_abs<T: Real>(m: &CMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| {
        let a = z.cabs();
        if a > acc {
            a
        } else {
            acc
        }
    })
}

pub fn max_abs_diff<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (x, y)| {
        let d = (*x - *y).cabs();
        if d > acc {
            d
        } else {
            acc
        }
    })
}

pub fn all_finite<T: Real>(m: &CMatrix<T>) -> bool {
    m.iter().all(is_finite)
}

/// Hermitian part `(M + M^†) / 2`.
pub fn hermitian_part<T: Real>(m: &CMatrix<T>) -> CMatrix<T> {
    let half = T::lit(0.5);
    (m + m.adjoint()).map(|z| z * half)
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_eigenvalue<T: Real>(m: &CMatrix<T>) -> T {
    let eig = SymmetricEigen::new(hermitian_part(m));
    eig.eigenvalues.iter().copied().fold(T::max_value().unwrap(), |a, b| if b < a { b } else { a })
}

/// `tr(M^2)` for a Hermitian `M`, i.e. the sum of `|M_ij|^2`.
pub fn purity<T: Real>(m: &CMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
}

/// Kronecker product `a ⊗ b`.
pub fn kron<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> CMatrix<T> {
    a.kronecker(b)
}

/// `max |U^† U - I|`.
pub fn unitarity_defect<T: Real>(u: &CMatrix<T>) -> T {
    let n = u.nrows();
    let g = u.adjoint() * u;
    let mut worst = T::zero();
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { T::one() } else { T::zero() };
            let d = (g[(i, j)] - C::new(target, T::zero())).cabs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

pub fn real_to_complex<T: Real>(m: &DMatrix<T>) -> CMatrix<T> {
    m.map(|x| C::new(x, T::zero()))
}
