//! Tight-binding networks whose couplings fluctuate as white noise.
//!
//! Site indices are 0-based everywhere in this crate. The 1-based convention
//! of the configuration files is handled in [`crate::config`].

use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{hermiticity_residual, CMatrix};
use crate::scalar::{Real, C};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("{matrix} is not symmetric at sites ({row}, {col})")]
    AsymmetricMatrix { matrix: &'static str, row: usize, col: usize },
    #[error("{matrix} has a nonzero diagonal entry at site {site}")]
    NonzeroDiagonal { matrix: &'static str, site: usize },
    #[error("negative noise intensity {value} on pair ({row}, {col})")]
    NegativeNoise { row: usize, col: usize, value: f64 },
    #[error("a network needs at least 2 sites, got {0}")]
    TooFewSites(usize),
    #[error("{field}: expected length {expected}, found {found}")]
    DimensionMismatch { field: String, expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("matrix is not Hermitian (residual {0:e})")]
    NotHermitian(f64),
}

/// Raw description of a network: site energies `omega`, mean couplings
/// `kappa` and coupling-noise intensities `gamma`, all in ps⁻¹.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec<T: Real> {
    pub n_sites: usize,
    pub omega: Vec<T>,
    pub kappa: DMatrix<T>,
    pub gamma: DMatrix<T>,
}

impl<T: Real> NetworkSpec<T> {
    /// Uncoupled, noiseless network with the given site energies.
    pub fn uncoupled(omega: Vec<T>) -> Self {
        let n = omega.len();
        Self { n_sites: n, omega, kappa: DMatrix::zeros(n, n), gamma: DMatrix::zeros(n, n) }
    }

    /// Builds a spec from sparse, 0-based edge lists; each edge is mirrored.
    pub fn from_edges(omega: Vec<T>, couplings: &[(usize, usize, T)], noise: &[(usize, usize, T)]) -> Self {
        let mut spec = Self::uncoupled(omega);
        for &(a, b, k) in couplings {
            spec.kappa[(a, b)] = k;
            spec.kappa[(b, a)] = k;
        }
        for &(a, b, g) in noise {
            spec.gamma[(a, b)] = g;
            spec.gamma[(b, a)] = g;
        }
        spec
    }

    /// Three-site network used throughout the examples: equal site energies
    /// of 5 ps⁻¹, couplings 2 (sites 0-1) and 1 (0-2, 1-2), uniform noise.
    pub fn reference_triangle(gamma: T) -> Self {
        let (one, two) = (T::one(), T::lit(2.0));
        Self::from_edges(vec![T::lit(5.0); 3], &[(0, 1, two), (0, 2, one), (1, 2, one)], &[]).with_uniform_noise(gamma)
    }

    /// Sets the same noise intensity on every pair of distinct sites.
    pub fn with_uniform_noise(mut self, gamma: T) -> Self {
        let n = self.n_sites;
        self.gamma = DMatrix::from_fn(n, n, |i, j| if i == j { T::zero() } else { gamma });
        self
    }

    /// Same network with every noise intensity set to zero.
    pub fn noiseless(mut self) -> Self {
        self.gamma.fill(T::zero());
        self
    }

    pub fn cast<U: Real>(&self) -> NetworkSpec<U> {
        let conv = |x: T| U::lit(x.to_f64_lossy());
        NetworkSpec {
            n_sites: self.n_sites,
            omega: self.omega.iter().map(|&x| conv(x)).collect(),
            kappa: self.kappa.map(conv),
            gamma: self.gamma.map(conv),
        }
    }

    pub fn validate(self) -> Result<ValidatedNetwork<T>, NetworkError> {
        validate_network(self)
    }
}

/// Hermitian complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix<T: Real>(CMatrix<T>);

impl<T: Real> HermitianMatrix<T> {
    pub fn try_new(m: CMatrix<T>) -> Result<Self, NetworkError> {
        let res = hermiticity_residual(&m);
        if !m.is_square() || res.to_f64_lossy() > T::HERMITIAN_TOL {
            return Err(NetworkError::NotHermitian(res.to_f64_lossy()));
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix<T> {
        self.0
    }
}

#[derive(Debug)]
struct NetworkInner<T: Real> {
    spec: NetworkSpec<T>,
    hamiltonian: HermitianMatrix<T>,
    /// `sqrt(gamma)` entrywise, used by the noise sampler.
    sqrt_gamma: DMatrix<T>,
    /// Unordered noisy pairs `(n, m)` with `n < m` and `gamma > 0`.
    noisy_pairs: Vec<(usize, usize)>,
}

/// A network whose invariants have been checked. Cheap to clone and share.
#[derive(Debug, Clone)]
pub struct ValidatedNetwork<T: Real>(Arc<NetworkInner<T>>);

impl<T: Real> ValidatedNetwork<T> {
    pub fn spec(&self) -> &NetworkSpec<T> {
        &self.0.spec
    }

    pub fn n_sites(&self) -> usize {
        self.0.spec.n_sites
    }

    pub fn omega(&self) -> &[T] {
        &self.0.spec.omega
    }

    pub fn kappa(&self) -> &DMatrix<T> {
        &self.0.spec.kappa
    }

    pub fn gamma(&self) -> &DMatrix<T> {
        &self.0.spec.gamma
    }

    pub fn sqrt_gamma(&self) -> &DMatrix<T> {
        &self.0.sqrt_gamma
    }

    pub fn hamiltonian(&self) -> &HermitianMatrix<T> {
        &self.0.hamiltonian
    }

    pub fn noisy_pairs(&self) -> &[(usize, usize)] {
        &self.0.noisy_pairs
    }

    pub fn is_noiseless(&self) -> bool {
        self.0.noisy_pairs.is_empty()
    }

    /// True if the graph of nonzero couplings or noisy pairs is connected.
    pub fn is_connected(&self) -> bool {
        let n = self.n_sites();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for b in 0..n {
                let linked = self.kappa()[(a, b)] != T::zero() || self.gamma()[(a, b)] != T::zero();
                if linked && !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

fn check_symmetric_zero_diag<T: Real>(m: &DMatrix<T>, name: &'static str) -> Result<(), NetworkError> {
    let n = m.nrows();
    for i in 0..n {
        if m[(i, i)] != T::zero() {
            return Err(NetworkError::NonzeroDiagonal { matrix: name, site: i });
        }
        for j in (i + 1)..n {
            if m[(i, j)] != m[(j, i)] {
                return Err(NetworkError::AsymmetricMatrix { matrix: name, row: i, col: j });
            }
        }
    }
    Ok(())
}

pub fn validate_network<T: Real>(spec: NetworkSpec<T>) -> Result<ValidatedNetwork<T>, NetworkError> {
    let n = spec.n_sites;
    if n < 2 {
        return Err(NetworkError::TooFewSites(n));
    }
    if spec.omega.len() != n {
        return Err(NetworkError::DimensionMismatch { field: "omega".into(), expected: n, found: spec.omega.len() });
    }
    for (field, m) in [("kappa", &spec.kappa), ("gamma", &spec.gamma)] {
        if m.nrows() != n || m.ncols() != n {
            return Err(NetworkError::DimensionMismatch { field: field.into(), expected: n, found: m.nrows() });
        }
    }
    if !spec.omega.iter().all(|x| x.is_finite()) {
        return Err(NetworkError::NonFinite("omega"));
    }
    if !spec.kappa.iter().all(|x| x.is_finite()) {
        return Err(NetworkError::NonFinite("kappa"));
    }
    if !spec.gamma.iter().all(|x| x.is_finite()) {
        return Err(NetworkError::NonFinite("gamma"));
    }
    check_symmetric_zero_diag(&spec.kappa, "kappa")?;
    check_symmetric_zero_diag(&spec.gamma, "gamma")?;
    for i in 0..n {
        for j in (i + 1)..n {
            let g = spec.gamma[(i, j)];
            if g < T::zero() {
                return Err(NetworkError::NegativeNoise { row: i, col: j, value: g.to_f64_lossy() });
            }
        }
    }

    let h = CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            C::new(spec.omega[i], T::zero())
        } else {
            C::new(spec.kappa[(i, j)], T::zero())
        }
    });
    let hamiltonian = HermitianMatrix::try_new(h)?;
    let sqrt_gamma = spec.gamma.map(|g| g.sqrt());
    let noisy_pairs = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|&(i, j)| spec.gamma[(i, j)] > T::zero())
        .collect();
    Ok(ValidatedNetwork(Arc::new(NetworkInner { spec, hamiltonian, sqrt_gamma, noisy_pairs })))
}

/// Deterministic part of the Hamiltonian: `omega` on the diagonal, `kappa` off it.
pub fn mean_hamiltonian<T: Real>(net: &ValidatedNetwork<T>) -> HermitianMatrix<T> {
    net.hamiltonian().clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> NetworkSpec<f64> {
        NetworkSpec::from_edges(vec![5.0; 3], &[(0, 1, 2.0), (0, 2, 1.0), (1, 2, 1.0)], &[]).with_uniform_noise(0.38)
    }

    #[test]
    fn triangle_is_valid_and_hamiltonian_matches() {
        let net = triangle().validate().unwrap();
        let h = mean_hamiltonian(&net);
        let expected = [[5.0, 2.0, 1.0], [2.0, 5.0, 1.0], [1.0, 1.0, 5.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(h.matrix()[(i, j)], C::new(expected[i][j], 0.0));
            }
        }
        assert_eq!(hermiticity_residual(h.matrix()), 0.0);
        assert_eq!(net.noisy_pairs(), &[(0, 1), (0, 2), (1, 2)]);
        assert!(net.is_connected());
    }

    #[test]
    fn validation_is_idempotent() {
        let a = triangle().validate().unwrap();
        let b = a.spec().clone().validate().unwrap();
        assert_eq!(a.spec(), b.spec());
    }

    #[test]
    fn asymmetric_kappa_is_rejected() {
        let mut spec = triangle();
        spec.kappa[(1, 0)] = 3.0;
        assert_eq!(
            spec.validate().unwrap_err(),
            NetworkError::AsymmetricMatrix { matrix: "kappa", row: 0, col: 1 }
        );
    }

    #[test]
    fn negative_noise_is_rejected() {
        let spec = triangle();
        let spec = NetworkSpec { gamma: spec.gamma.map(|g| if g > 0.0 { -0.1 } else { 0.0 }), ..spec };
        assert!(matches!(spec.validate(), Err(NetworkError::NegativeNoise { row: 0, col: 1, .. })));
    }

    #[test]
    fn nonzero_diagonal_and_small_networks_are_rejected() {
        let mut spec = triangle();
        spec.gamma[(2, 2)] = 0.1;
        assert_eq!(spec.validate().unwrap_err(), NetworkError::NonzeroDiagonal { matrix: "gamma", site: 2 });
        assert_eq!(NetworkSpec::<f64>::uncoupled(vec![1.0]).validate().unwrap_err(), NetworkError::TooFewSites(1));
    }

    #[test]
    fn two_site_and_uncoupled_hamiltonians() {
        let net = NetworkSpec::from_edges(vec![0.0, 0.0], &[(0, 1, 1.0)], &[]).validate().unwrap();
        let h = mean_hamiltonian(&net);
        assert_eq!(h.matrix()[(0, 1)], C::new(1.0, 0.0));
        assert_eq!(h.matrix()[(0, 0)], C::new(0.0, 0.0));

        let net = NetworkSpec::uncoupled(vec![1.0, 2.0, 3.0]).validate().unwrap();
        let h = mean_hamiltonian(&net);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { (i + 1) as f64 } else { 0.0 };
                assert_eq!(h.matrix()[(i, j)].re, want);
            }
        }
        assert!(!net.is_connected());
    }
}
