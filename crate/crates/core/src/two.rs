//! Two non-interacting particles sharing one noisy network.
//!
//! States live on pair indices `p * N + q` ("one particle at p, the other at
//! q"). Both particles see the same coupling noise, so the averaged dynamics
//! is the Lindblad equation with jump operators `A_e ⊗ I + I ⊗ A_e`. The
//! generator is written out term group by term group below; each group has
//! its own helper so it can be checked in isolation.

use nalgebra::DMatrix;

use crate::density::check_density;
use crate::error::DynamicsError;
use crate::linalg::{flatten, kron, real_to_complex, unflatten, CMatrix};
use crate::network::ValidatedNetwork;
use crate::ode::{integrate, Rhs, SolverOptions, TimeGrid};
use crate::scalar::{czero, mul_i, mul_neg_i, Modulus, Real, C};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistics {
    Boson,
    Fermion,
}

impl Statistics {
    fn sign<T: Real>(self) -> T {
        match self {
            Statistics::Boson => T::one(),
            Statistics::Fermion => -T::one(),
        }
    }
}

/// Initial amplitude profile `xi[(m, n)]`, normalized in the Frobenius sense.
#[derive(Debug, Clone, PartialEq)]
pub struct InputAmplitudeProfile<T: Real> {
    xi: CMatrix<T>,
}

impl<T: Real> InputAmplitudeProfile<T> {
    pub fn try_new(xi: CMatrix<T>) -> Result<Self, DynamicsError> {
        if !xi.is_square() {
            return Err(DynamicsError::DimensionMismatch { expected: xi.nrows(), found: xi.ncols() });
        }
        let norm2 = xi.iter().fold(T::zero(), |a, z| a + z.norm_sqr());
        if (norm2 - T::one()).abs().to_f64_lossy() > T::NORM_TOL {
            return Err(DynamicsError::NotNormalized(norm2.to_f64_lossy()));
        }
        Ok(Self { xi })
    }

    /// Single nonzero entry `xi[(a, b)] = 1`.
    pub fn single_pair(a: usize, b: usize, n_sites: usize) -> Result<Self, DynamicsError> {
        if a >= n_sites || b >= n_sites {
            return Err(DynamicsError::BadSitePair { a, b, n_sites });
        }
        let mut xi = CMatrix::zeros(n_sites, n_sites);
        xi[(a, b)] = C::new(T::one(), T::zero());
        Ok(Self { xi })
    }

    pub fn dim(&self) -> usize {
        self.xi.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.xi
    }
}

/// Normalized two-particle amplitude `psi[(p, q)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoParticleAmplitude<T: Real> {
    psi: CMatrix<T>,
    statistics: Option<Statistics>,
    raw_norm: T,
}

impl<T: Real> TwoParticleAmplitude<T> {
    /// Wraps an amplitude, checking normalization and, when `statistics` is
    /// given, exchange symmetry. `None` means distinguishable particles.
    pub fn try_new(psi: CMatrix<T>, statistics: Option<Statistics>) -> Result<Self, DynamicsError> {
        if !psi.is_square() {
            return Err(DynamicsError::DimensionMismatch { expected: psi.nrows(), found: psi.ncols() });
        }
        let norm2 = psi.iter().fold(T::zero(), |a, z| a + z.norm_sqr());
        if (norm2 - T::one()).abs().to_f64_lossy() > T::NORM_TOL {
            return Err(DynamicsError::NotNormalized(norm2.to_f64_lossy()));
        }
        if let Some(s) = statistics {
            let res = exchange_residual(&psi, s).to_f64_lossy();
            if res > T::NORM_TOL {
                return Err(DynamicsError::ExchangeSymmetry(res));
            }
        }
        Ok(Self { psi, statistics, raw_norm: T::one() })
    }

    /// `|a, b>`: particle one at `a`, particle two at `b`.
    pub fn product(a: usize, b: usize, n_sites: usize) -> Self {
        let mut psi = CMatrix::zeros(n_sites, n_sites);
        psi[(a, b)] = C::new(T::one(), T::zero());
        Self { psi, statistics: None, raw_norm: T::one() }
    }

    pub fn n_sites(&self) -> usize {
        self.psi.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.psi
    }

    pub fn statistics(&self) -> Option<Statistics> {
        self.statistics
    }

    /// Norm before renormalization, for amplitudes produced by composition.
    pub fn raw_norm(&self) -> T {
        self.raw_norm
    }

    /// Amplitude after both particles propagate with `u`: `U psi U^T`.
    pub fn propagate(&self, u: &CMatrix<T>) -> CMatrix<T> {
        u * &self.psi * u.transpose()
    }

    /// Row-major flattening over pair indices.
    pub fn to_pair_vector(&self) -> Vec<C<T>> {
        flatten(&self.psi)
    }
}

fn exchange_residual<T: Real>(psi: &CMatrix<T>, s: Statistics) -> T {
    let sign = s.sign::<T>();
    let n = psi.nrows();
    let mut worst = T::zero();
    for p in 0..n {
        for q in 0..n {
            let d = (psi[(p, q)] - psi[(q, p)] * sign).cabs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Unnormalized `sum_{m,n} xi_mn [U_pn U_qm ± U_pm U_qn] = U (xi^T ± xi) U^T`.
pub(crate) fn compose_raw<T: Real>(u: &CMatrix<T>, xi: &CMatrix<T>, statistics: Statistics) -> CMatrix<T> {
    let sign = statistics.sign::<T>();
    let sym = xi.transpose() + xi.map(|z| z * sign);
    u * sym * u.transpose()
}

/// Two-particle amplitude from a single-particle propagator `u` and an input
/// profile, renormalized to unit probability.
pub fn compose_two_particle_amplitude<T: Real>(
    u: &CMatrix<T>,
    xi: &InputAmplitudeProfile<T>,
    statistics: Statistics,
) -> Result<TwoParticleAmplitude<T>, DynamicsError> {
    if u.nrows() != xi.dim() || !u.is_square() {
        return Err(DynamicsError::DimensionMismatch { expected: xi.dim(), found: u.nrows() });
    }
    let raw = compose_raw(u, xi.matrix(), statistics);
    let norm = raw.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt();
    if norm.to_f64_lossy() <= T::NORM_TOL {
        return Err(DynamicsError::ZeroAmplitude);
    }
    let psi = raw.map(|z| z / norm);
    Ok(TwoParticleAmplitude { psi, statistics: Some(statistics), raw_norm: norm })
}

/// Two-particle density matrix of size `N² x N²`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoParticleDensity<T: Real> {
    n_sites: usize,
    rho: CMatrix<T>,
}

impl<T: Real> TwoParticleDensity<T> {
    pub fn try_new(n_sites: usize, rho: CMatrix<T>) -> Result<Self, DynamicsError> {
        Self::checked_at(n_sites, rho, 0.0)
    }

    fn checked_at(n_sites: usize, rho: CMatrix<T>, t: f64) -> Result<Self, DynamicsError> {
        let d = n_sites * n_sites;
        if rho.nrows() != d || rho.ncols() != d {
            return Err(DynamicsError::DimensionMismatch { expected: d, found: rho.nrows() });
        }
        check_density(&rho, t)?;
        Ok(Self { n_sites, rho })
    }

    pub fn pure(amp: &TwoParticleAmplitude<T>) -> Self {
        let v = amp.to_pair_vector();
        let d = v.len();
        Self { n_sites: amp.n_sites(), rho: CMatrix::from_fn(d, d, |i, j| v[i] * v[j].conj()) }
    }

    /// Equal-weight mixture of pure states.
    pub fn mixture(amps: &[TwoParticleAmplitude<T>]) -> Self {
        assert!(!amps.is_empty(), "empty mixture");
        let w = T::one() / T::from_usize(amps.len()).unwrap();
        let mut acc = Self::pure(&amps[0]).rho.map(|z| z * w);
        for a in &amps[1..] {
            acc += Self::pure(a).rho.map(|z| z * w);
        }
        Self { n_sites: amps[0].n_sites(), rho: acc }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.rho
    }

    pub fn into_matrix(self) -> CMatrix<T> {
        self.rho
    }

    /// `rho[(p*N+q, p2*N+q2)]`.
    pub fn element(&self, p: usize, q: usize, p2: usize, q2: usize) -> C<T> {
        let n = self.n_sites;
        self.rho[(p * n + q, p2 * n + q2)]
    }

    /// Reduced state of the first particle, `sum_q rho[(pq, p'q)]`.
    pub fn marginal_first(&self) -> CMatrix<T> {
        partial_trace_second(self.n_sites, &self.rho)
    }

    /// `rho[(pq, p'q')] == rho[(qp, p'q')]` residual.
    pub fn bosonic_residual(&self) -> T {
        let n = self.n_sites;
        let mut worst = T::zero();
        for p in 0..n {
            for q in 0..n {
                for c in 0..n * n {
                    let d = (self.rho[(p * n + q, c)] - self.rho[(q * n + p, c)]).cabs();
                    if d > worst {
                        worst = d;
                    }
                }
            }
        }
        worst
    }
}

pub fn partial_trace_second<T: Real>(n: usize, rho: &CMatrix<T>) -> CMatrix<T> {
    CMatrix::from_fn(n, n, |p, p2| (0..n).fold(czero(), |s, q| s + rho[(p * n + q, p2 * n + q)]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CanonicalKind {
    /// `(|a,b> + |b,a>) / sqrt 2`
    Separable,
    /// `(|a,b><a,b| + |b,a><b,a|) / 2`
    Incoherent,
    /// `(|a,a> + |b,b>) / sqrt 2`
    Entangled,
}

impl CanonicalKind {
    pub const ALL: [CanonicalKind; 3] = [CanonicalKind::Separable, CanonicalKind::Incoherent, CanonicalKind::Entangled];

    pub fn name(self) -> &'static str {
        match self {
            CanonicalKind::Separable => "separable",
            CanonicalKind::Incoherent => "incoherent",
            CanonicalKind::Entangled => "entangled",
        }
    }

    /// Pure constituents with equal weights.
    pub fn constituents<T: Real>(self, a: usize, b: usize, n: usize) -> Vec<TwoParticleAmplitude<T>> {
        let r = T::one() / T::lit(2.0).sqrt();
        let ket = |pairs: [(usize, usize); 2], statistics| {
            let mut psi = CMatrix::zeros(n, n);
            for (x, y) in pairs {
                psi[(x, y)] += C::new(r, T::zero());
            }
            TwoParticleAmplitude { psi, statistics, raw_norm: T::one() }
        };
        match self {
            CanonicalKind::Separable => vec![ket([(a, b), (b, a)], Some(Statistics::Boson))],
            CanonicalKind::Entangled => vec![ket([(a, a), (b, b)], Some(Statistics::Boson))],
            CanonicalKind::Incoherent => vec![TwoParticleAmplitude::product(a, b, n), TwoParticleAmplitude::product(b, a, n)],
        }
    }
}

/// One of the three reference inputs on sites `a < b` (0-based).
pub fn canonical_two_particle_state<T: Real>(
    kind: CanonicalKind,
    sites: (usize, usize),
    n_sites: usize,
) -> Result<TwoParticleDensity<T>, DynamicsError> {
    let (a, b) = sites;
    if !(a < b && b < n_sites) {
        return Err(DynamicsError::BadSitePair { a, b, n_sites });
    }
    Ok(TwoParticleDensity::mixture(&kind.constituents(a, b, n_sites)))
}

/// Precomputed two-particle generator acting on row-major flattened
/// `N² x N²` matrices.
#[derive(Debug, Clone)]
pub struct TwoParticleGenerator<T: Real> {
    n: usize,
    omega: Vec<T>,
    gamma: DMatrix<T>,
    half_decay: Vec<T>,
    /// Nonzero couplings per site: `(l, kappa_lp)`.
    neighbours: Vec<Vec<(usize, T)>>,
}

impl<T: Real> TwoParticleGenerator<T> {
    pub fn new(net: &ValidatedNetwork<T>) -> Self {
        let n = net.n_sites();
        let gamma = net.gamma().clone();
        let kappa = net.kappa().clone();
        let half_decay = (0..n).map(|a| (0..n).fold(T::zero(), |s, l| s + gamma[(l, a)]) * T::lit(0.5)).collect();
        let neighbours = (0..n)
            .map(|p| (0..n).filter(|&l| kappa[(l, p)] != T::zero()).map(|l| (l, kappa[(l, p)])).collect())
            .collect();
        Self { n, omega: net.omega().to_vec(), gamma, half_decay, neighbours }
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&self, rho: &[C<T>], p: usize, q: usize, p2: usize, q2: usize) -> C<T> {
        let n = self.n;
        rho[(p * n + q) * n * n + p2 * n + q2]
    }

    /// `[-i(w_p + w_q - w_p' - w_q') - 1/2 sum_l (g_lp + g_lq + g_lp' + g_lq')] rho`.
    #[inline]
    pub(crate) fn energy_and_decay(&self, rho: &[C<T>], p: usize, q: usize, p2: usize, q2: usize) -> C<T> {
        let x = self.at(rho, p, q, p2, q2);
        let de = self.omega[p] + self.omega[q] - self.omega[p2] - self.omega[q2];
        let dec = self.half_decay[p] + self.half_decay[q] + self.half_decay[p2] + self.half_decay[q2];
        mul_neg_i(x * de) - x * dec
    }

    /// `-g_pq rho[qp, p'q'] - g_p'q' rho[pq, q'p']`.
    #[inline]
    pub(crate) fn pair_decay(&self, rho: &[C<T>], p: usize, q: usize, p2: usize, q2: usize) -> C<T> {
        -(self.at(rho, q, p, p2, q2) * self.gamma[(p, q)] + self.at(rho, p, q, q2, p2) * self.gamma[(p2, q2)])
    }

    /// `-i sum_l (k_lq rho[pl, p'q'] + k_lp rho[lq, p'q'])`.
    #[inline]
    pub(crate) fn hopping_left(&self, rho: &[C<T>], p: usize, q: usize, p2: usize, q2: usize) -> C<T> {
        let mut acc = czero();
        for &(l, k) in &self.neighbours[q] {
            acc += self.at(rho, p, l, p2, q2) * k;
        }
        for &(l, k) in &self.neighbours[p] {
            acc += self.at(rho, l, q, p2, q2) * k;
        }
        mul_neg_i(acc)
    }

    /// `+i sum_l (k_lq' rho[pq, p'l] + k_lp' rho[pq, lq'])`.
    #[inline]
    pub(crate) fn hopping_right(&self, rho: &[C<T>], p: usize, q: usize, p2: usize, q2: usize) -> C<T> {
        let mut acc = czero();
        for &(l, k) in &self.neighbours[q2] {
            acc += self.at(rho, p, q, p2, l) * k;
        }
        for &(l, k) in &self.neighbours[p2] {
            acc += self.at(rho, p, q, l, q2) * k;
        }
        mul_i(acc)
    }

    /// `-sum_l (d_pq sqrt(g_lq g_lp) rho[ll, p'q'] + d_p'q' sqrt(g_lp' g_lq') rho[pq, ll])`.
    #[inline]
    pub(crate) fn double_occupancy_feed(&self, rho: &[C<T>], p: usize, q: usize, p2: usize, q2: usize) -> C<T> {
        let mut acc = czero();
        if p == q {
            for l in 0..self.n {
                acc += self.at(rho, l, l, p2, q2) * self.gamma[(l, p)];
            }
        }
        if p2 == q2 {
            for l in 0..self.n {
                acc += self.at(rho, p, q, l, l) * self.gamma[(l, p2)];
            }
        }
        -acc
    }

    /// The four Kronecker-matched `sqrt(g g)` sums (`d_qq'`, `d_qp'`, `d_pq'`, `d_pp'`).
    #[inline]
    pub(crate) fn matched_feed(&self, rho: &[C<T>], p: usize, q: usize, p2: usize, q2: usize) -> C<T> {
        let mut acc = czero();
        let g = &self.gamma;
        for l in 0..self.n {
            if q == q2 {
                acc += self.at(rho, p, l, p2, l) * g[(l, q)];
            }
            if q == p2 {
                acc += self.at(rho, p, l, l, q2) * g[(l, q)];
            }
            if p == q2 {
                acc += self.at(rho, l, q, p2, l) * g[(l, p)];
            }
            if p == p2 {
                acc += self.at(rho, l, q, l, q2) * g[(l, p)];
            }
        }
        acc
    }

    /// `g_qq' rho[pq', p'q] + g_qp' rho[pp', qq'] + g_pp' rho[p'q, pq'] + g_pq' rho[q'q, p'p]`.
    #[inline]
    pub(crate) fn exchange(&self, rho: &[C<T>], p: usize, q: usize, p2: usize, q2: usize) -> C<T> {
        let g = &self.gamma;
        self.at(rho, p, q2, p2, q) * g[(q, q2)]
            + self.at(rho, p, p2, q, q2) * g[(q, p2)]
            + self.at(rho, p2, q, p, q2) * g[(p, p2)]
            + self.at(rho, q2, q, p2, p) * g[(p, q2)]
    }

    pub fn apply(&self, rho: &[C<T>], out: &mut [C<T>]) {
        let n = self.n;
        let d = n * n;
        for p in 0..n {
            for q in 0..n {
                for p2 in 0..n {
                    for q2 in 0..n {
                        out[(p * n + q) * d + p2 * n + q2] = self.energy_and_decay(rho, p, q, p2, q2)
                            + self.pair_decay(rho, p, q, p2, q2)
                            + self.hopping_left(rho, p, q, p2, q2)
                            + self.hopping_right(rho, p, q, p2, q2)
                            + self.double_occupancy_feed(rho, p, q, p2, q2)
                            + self.matched_feed(rho, p, q, p2, q2)
                            + self.exchange(rho, p, q, p2, q2);
                    }
                }
            }
        }
    }
}

impl<T: Real> Rhs<T> for TwoParticleGenerator<T> {
    fn eval(&self, _t: T, y: &[C<T>], dy: &mut [C<T>]) {
        self.apply(y, dy)
    }
}

/// `drho/dt` for any `N² x N²` matrix.
pub fn two_rhs<T: Real>(net: &ValidatedNetwork<T>, rho: &CMatrix<T>) -> Result<CMatrix<T>, DynamicsError> {
    let d = net.n_sites() * net.n_sites();
    if rho.nrows() != d || rho.ncols() != d {
        return Err(DynamicsError::DimensionMismatch { expected: d, found: rho.nrows() });
    }
    let gen = TwoParticleGenerator::new(net);
    let y = flatten(rho);
    let mut dy = y.clone();
    gen.apply(&y, &mut dy);
    Ok(unflatten(d, &dy))
}

/// Explicit `N⁴ x N⁴` superoperator assembled in Lindblad form from
/// Kronecker products. Intended for small networks and tests.
pub fn liouvillian_matrix_two<T: Real>(net: &ValidatedNetwork<T>) -> CMatrix<T> {
    let n = net.n_sites();
    let d = n * n;
    let id_n = CMatrix::<T>::identity(n, n);
    let id_d = CMatrix::<T>::identity(d, d);
    let h = net.hamiltonian().matrix();
    let h2 = kron(h, &id_n) + kron(&id_n, h);
    let minus_i = C::new(T::zero(), -T::one());
    // Row-major vectorization: vec(A X B) = (A ⊗ B^T) vec(X).
    let mut l = (kron(&h2, &id_d) - kron(&id_d, &h2.transpose())) * minus_i;
    let half = C::new(T::lit(0.5), T::zero());
    for &(a, b) in net.noisy_pairs() {
        let g = C::new(net.gamma()[(a, b)], T::zero());
        let mut jump = DMatrix::<T>::zeros(n, n);
        jump[(a, b)] = T::one();
        jump[(b, a)] = T::one();
        let jump = real_to_complex(&jump);
        let big = kron(&jump, &id_n) + kron(&id_n, &jump);
        let sq = &big * &big;
        l += (kron(&big, &big.transpose()) - (kron(&sq, &id_d) + kron(&id_d, &sq.transpose())) * half) * g;
    }
    l
}

/// Integrates the two-particle master equation and checks every snapshot.
/// If `rho0` is bosonic-exchange symmetric, that symmetry is checked too.
pub fn evolve_two<T: Real>(
    net: &ValidatedNetwork<T>,
    rho0: &TwoParticleDensity<T>,
    grid: &TimeGrid<T>,
    opts: &SolverOptions<T>,
) -> Result<Vec<(T, TwoParticleDensity<T>)>, DynamicsError> {
    let n = net.n_sites();
    if rho0.n_sites() != n {
        return Err(DynamicsError::DimensionMismatch { expected: n, found: rho0.n_sites() });
    }
    let d = n * n;
    let symmetric = rho0.bosonic_residual().to_f64_lossy() <= T::HERMITIAN_TOL;
    let gen = TwoParticleGenerator::new(net);
    let tr0 = crate::linalg::trace(rho0.matrix());
    let states = integrate(&gen, &flatten(rho0.matrix()), grid, opts)?;
    states
        .into_iter()
        .map(|(t, y)| {
            let tf = t.to_f64_lossy();
            let rho = unflatten(d, &y);
            let drift = (crate::linalg::trace(&rho) - tr0).cabs().to_f64_lossy();
            if drift > T::TRACE_TOL {
                return Err(DynamicsError::InvariantViolation { t: tf, what: format!("trace drift {drift:e}") });
            }
            let snap = TwoParticleDensity::checked_at(n, rho, tf)?;
            if symmetric {
                let res = snap.bosonic_residual().to_f64_lossy();
                if res > T::TRACE_TOL {
                    return Err(DynamicsError::InvariantViolation {
                        t: tf,
                        what: format!("exchange symmetry residual {res:e}"),
                    });
                }
            }
            Ok((t, snap))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermiticity_residual, max_abs, max_abs_diff, purity};
    use crate::network::NetworkSpec;
    use crate::single::{evolve_single, DensityMatrix};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Term = fn(&TwoParticleGenerator<f64>, &[C<f64>], usize, usize, usize, usize) -> C<f64>;

    fn triangle(gamma: f64) -> ValidatedNetwork<f64> {
        NetworkSpec::reference_triangle(gamma).validate().unwrap()
    }

    fn random_network(n: usize, rng: &mut ChaCha8Rng) -> ValidatedNetwork<f64> {
        let omega = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let (mut edges, mut noise) = (vec![], vec![]);
        for a in 0..n {
            for b in a + 1..n {
                edges.push((a, b, rng.random_range(-2.0..2.0)));
                noise.push((a, b, rng.random_range(0.0..1.0)));
            }
        }
        NetworkSpec::from_edges(omega, &edges, &noise).validate().unwrap()
    }

    fn random_matrix(d: usize, rng: &mut ChaCha8Rng) -> CMatrix<f64> {
        CMatrix::from_fn(d, d, |_, _| C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn apply_terms(gen: &TwoParticleGenerator<f64>, rho: &CMatrix<f64>, terms: &[Term]) -> CMatrix<f64> {
        let n = gen.n_sites();
        let y = flatten(rho);
        CMatrix::from_fn(n * n, n * n, |r, c| {
            terms.iter().fold(czero(), |s, f| s + f(gen, &y, r / n, r % n, c / n, c % n))
        })
    }

    /// Jump operators `A_e ⊗ I + I ⊗ A_e` with their rates.
    fn pair_jumps(net: &ValidatedNetwork<f64>) -> Vec<(f64, CMatrix<f64>)> {
        let n = net.n_sites();
        let id = CMatrix::identity(n, n);
        net.noisy_pairs()
            .iter()
            .map(|&(a, b)| {
                let mut j = CMatrix::zeros(n, n);
                j[(a, b)] = C::new(1.0, 0.0);
                j[(b, a)] = C::new(1.0, 0.0);
                (net.gamma()[(a, b)], kron(&j, &id) + kron(&id, &j))
            })
            .collect()
    }

    #[test]
    fn generator_matches_lindblad_superoperator() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for k in 0..20 {
            let n = 2 + k % 3;
            let net = random_network(n, &mut rng);
            let rho = random_matrix(n * n, &mut rng);
            let l = liouvillian_matrix_two(&net);
            let via_l = unflatten(n * n, (&l * DVector::from_vec(flatten(&rho))).as_slice());
            assert!(max_abs_diff(&via_l, &two_rhs(&net, &rho).unwrap()) < 1e-12 * max_abs(&l));
        }
    }

    #[test]
    fn coherent_groups_are_the_commutator() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let net = random_network(2, &mut rng);
        let gen = TwoParticleGenerator::new(&net);
        let noiseless = TwoParticleGenerator::new(&NetworkSpec::clone(net.spec()).noiseless().validate().unwrap());
        let rho = random_matrix(4, &mut rng);
        let id = CMatrix::identity(2, 2);
        let h = net.hamiltonian().matrix();
        let h2 = kron(h, &id) + kron(&id, h);
        let expected = (&h2 * &rho - &rho * &h2) * C::new(0.0, -1.0);
        let got = apply_terms(&noiseless, &rho, &[TwoParticleGenerator::energy_and_decay]);
        let hop = apply_terms(&gen, &rho, &[TwoParticleGenerator::hopping_left, TwoParticleGenerator::hopping_right]);
        assert!(max_abs_diff(&(got + hop), &expected) < 1e-13);
    }

    #[test]
    fn anticommutator_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let net = random_network(2, &mut rng);
        let noise_only = NetworkSpec::from_edges(vec![0.0; 2], &[], &[]);
        let noise_only = NetworkSpec { gamma: net.gamma().clone(), ..noise_only }.validate().unwrap();
        let gen = TwoParticleGenerator::new(&noise_only);
        let rho = random_matrix(4, &mut rng);
        let mut expected = CMatrix::zeros(4, 4);
        for (g, b) in pair_jumps(&net) {
            let bb = &b * &b;
            expected -= (&bb * &rho + &rho * &bb) * C::new(0.5 * g, 0.0);
        }
        let got = apply_terms(
            &gen,
            &rho,
            &[TwoParticleGenerator::energy_and_decay, TwoParticleGenerator::pair_decay, TwoParticleGenerator::double_occupancy_feed],
        );
        assert!(max_abs_diff(&got, &expected) < 1e-13);
    }

    #[test]
    fn sandwich_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let net = random_network(2, &mut rng);
        let gen = TwoParticleGenerator::new(&net);
        let rho = random_matrix(4, &mut rng);
        let mut expected = CMatrix::zeros(4, 4);
        for (g, b) in pair_jumps(&net) {
            expected += &b * &rho * &b * C::new(g, 0.0);
        }
        let got = apply_terms(&gen, &rho, &[TwoParticleGenerator::matched_feed, TwoParticleGenerator::exchange]);
        assert!(max_abs_diff(&got, &expected) < 1e-13);
    }

    #[test]
    fn noiseless_product_states_factorize() {
        let net = triangle(0.0);
        let grid = TimeGrid::uniform(0.0, 3.0, 7).unwrap();
        let opts = SolverOptions::fixed(1e-3);
        let rho0 = TwoParticleDensity::pure(&TwoParticleAmplitude::product(0, 2, 3));
        let two = evolve_two(&net, &rho0, &grid, &opts).unwrap();
        let a = evolve_single(&net, &DensityMatrix::site(0, 3), &grid, &opts).unwrap();
        let b = evolve_single(&net, &DensityMatrix::site(2, 3), &grid, &opts).unwrap();
        for ((_, r), ((_, x), (_, y))) in two.iter().zip(a.iter().zip(&b)) {
            assert!(max_abs_diff(r.matrix(), &kron(x.matrix(), y.matrix())) < 1e-10);
        }
    }

    #[test]
    fn marginal_follows_single_particle_dynamics() {
        let net = triangle(0.38);
        let grid = TimeGrid::uniform(0.0, 5.0, 11).unwrap();
        let opts = SolverOptions::fixed(1e-3);
        for kind in CanonicalKind::ALL {
            let rho0 = canonical_two_particle_state::<f64>(kind, (0, 1), 3).unwrap();
            let one0 = DensityMatrix::try_new(rho0.marginal_first()).unwrap();
            let two = evolve_two(&net, &rho0, &grid, &opts).unwrap();
            let one = evolve_single(&net, &one0, &grid, &opts).unwrap();
            for ((_, r), (_, s)) in two.iter().zip(&one) {
                assert!(max_abs_diff(&r.marginal_first(), s.matrix()) < 1e-8, "{}", kind.name());
            }
        }
    }

    #[test]
    fn purity_is_conserved_without_noise() {
        let grid = TimeGrid::uniform(0.0, 5.0, 6).unwrap();
        let rho0 = canonical_two_particle_state::<f64>(CanonicalKind::Separable, (0, 1), 3).unwrap();
        for (_, r) in evolve_two(&triangle(0.0), &rho0, &grid, &SolverOptions::fixed(1e-3)).unwrap() {
            assert!((purity(r.matrix()) - 1.0).abs() < 1e-10);
            assert!(hermiticity_residual(r.matrix()) < 1e-13);
        }
    }

    #[test]
    fn exchange_symmetry_survives_noise() {
        let grid = TimeGrid::uniform(0.0, 2.0, 3).unwrap();
        let rho0 = canonical_two_particle_state::<f64>(CanonicalKind::Entangled, (0, 2), 3).unwrap();
        for (_, r) in evolve_two(&triangle(0.38), &rho0, &grid, &SolverOptions::fixed(1e-3)).unwrap() {
            assert!(r.bosonic_residual() < 1e-13);
        }
    }

    #[test]
    fn separable_populations_after_one_picosecond() {
        let grid = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        let rho0 = canonical_two_particle_state::<f64>(CanonicalKind::Separable, (0, 1), 3).unwrap();
        let out = evolve_two(&triangle(0.38), &rho0, &grid, &SolverOptions::fixed(1e-3)).unwrap();
        let r = &out[1].1;
        let diag: Vec<f64> = (0..3).map(|p| r.element(p, p, p, p).re).collect();
        for (got, want) in diag.iter().zip([0.1541, 0.1541, 0.1613]) {
            assert!((got - want).abs() < 5e-4, "{diag:?}");
        }
    }

    #[test]
    fn composition_with_identity_propagator() {
        let id = CMatrix::<f64>::identity(3, 3);
        let xi = InputAmplitudeProfile::single_pair(0, 2, 3).unwrap();
        let amp = compose_two_particle_amplitude(&id, &xi, Statistics::Boson).unwrap();
        assert!((amp.raw_norm() - 2f64.sqrt()).abs() < 1e-15);
        let r = 1.0 / 2f64.sqrt();
        assert!((amp.matrix()[(0, 2)].re - r).abs() < 1e-15 && (amp.matrix()[(2, 0)].re - r).abs() < 1e-15);
        let fermi = compose_two_particle_amplitude(&id, &xi, Statistics::Fermion).unwrap();
        assert!((fermi.matrix()[(0, 2)].re + fermi.matrix()[(2, 0)].re).abs() < 1e-15);
    }

    #[test]
    fn fermions_cannot_share_a_site() {
        let id = CMatrix::<f64>::identity(3, 3);
        let xi = InputAmplitudeProfile::single_pair(1, 1, 3).unwrap();
        assert_eq!(compose_two_particle_amplitude(&id, &xi, Statistics::Fermion).unwrap_err(), DynamicsError::ZeroAmplitude);
    }

    #[test]
    fn canonical_states_validate_sites() {
        for sites in [(1, 1), (2, 1), (0, 3)] {
            assert!(matches!(
                canonical_two_particle_state::<f64>(CanonicalKind::Separable, sites, 3),
                Err(DynamicsError::BadSitePair { .. })
            ));
        }
        let inc = canonical_two_particle_state::<f64>(CanonicalKind::Incoherent, (0, 1), 3).unwrap();
        assert!((purity(inc.matrix()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn amplitude_symmetry_is_checked() {
        let psi = TwoParticleAmplitude::<f64>::product(0, 1, 2).matrix().clone();
        assert!(matches!(TwoParticleAmplitude::try_new(psi.clone(), Some(Statistics::Boson)), Err(DynamicsError::ExchangeSymmetry(_))));
        assert!(TwoParticleAmplitude::try_new(psi, None).is_ok());
    }
}
