//! Noise-averaged dynamics of a single particle.
//!
//! For a density matrix `rho` on `N` sites the generator is
//!
//! ```text
//! drho_nm/dt = -i (omega_n - omega_m) rho_nm
//!              - 1/2 sum_j (gamma_nj + gamma_mj) rho_nm
//!              + i sum_j (kappa_mj rho_nj - kappa_nj rho_jm)
//!              + gamma_nm rho_mn
//!              + delta_nm sum_j gamma_nj rho_jj
//! ```
//!
//! which is the Lindblad equation with one jump operator
//! `|n><m| + |m><n|` of rate `gamma_nm` per noisy pair. Note the transposed
//! index in the `gamma_nm rho_mn` term: only that form agrees with the
//! trajectory average of the stochastic Schrödinger equation.

use crate::density::check_density;
use crate::error::DynamicsError;
use crate::linalg::{flatten, hermiticity_residual, max_abs, max_abs_diff, trace, unflatten, CMatrix};
use crate::network::ValidatedNetwork;
use crate::ode::{integrate, Rhs, SolverOptions, StepMode, TimeGrid};
use crate::scalar::{czero, mul_neg_i, Modulus, Real, C};

/// Single-particle density matrix: Hermitian, unit trace, positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix<T: Real> {
    rho: CMatrix<T>,
}

impl<T: Real> DensityMatrix<T> {
    pub fn try_new(rho: CMatrix<T>) -> Result<Self, DynamicsError> {
        check_density(&rho, 0.0)?;
        Ok(Self { rho })
    }

    pub(crate) fn new_checked_at(rho: CMatrix<T>, t: T) -> Result<Self, DynamicsError> {
        check_density(&rho, t.to_f64_lossy())?;
        Ok(Self { rho })
    }

    /// `|site><site|`.
    pub fn site(site: usize, dim: usize) -> Self {
        let mut rho = CMatrix::zeros(dim, dim);
        rho[(site, site)] = C::new(T::one(), T::zero());
        Self { rho }
    }

    /// `I / dim`.
    pub fn maximally_mixed(dim: usize) -> Self {
        let v = T::one() / T::from_usize(dim).unwrap();
        Self { rho: CMatrix::from_diagonal_element(dim, dim, C::new(v, T::zero())) }
    }

    /// `|psi><psi|` for a normalized amplitude vector.
    pub fn pure(psi: &[C<T>]) -> Result<Self, DynamicsError> {
        let n = psi.len();
        Self::try_new(CMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj()))
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.rho
    }

    pub fn into_matrix(self) -> CMatrix<T> {
        self.rho
    }
}

/// Precomputed generator acting on row-major flattened `N x N` matrices.
#[derive(Debug, Clone)]
pub struct SingleParticleGenerator<T: Real> {
    n: usize,
    h: Vec<C<T>>,
    gamma: Vec<T>,
    half_decay: Vec<T>,
}

impl<T: Real> SingleParticleGenerator<T> {
    pub fn new(net: &ValidatedNetwork<T>) -> Self {
        let n = net.n_sites();
        let h = flatten(net.hamiltonian().matrix());
        let g = net.gamma();
        let gamma = (0..n * n).map(|k| g[(k / n, k % n)]).collect();
        let half_decay = (0..n).map(|a| (0..n).fold(T::zero(), |s, j| s + g[(a, j)]) * T::lit(0.5)).collect();
        Self { n, h, gamma, half_decay }
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn apply(&self, rho: &[C<T>], out: &mut [C<T>]) {
        let n = self.n;
        let h = &self.h;
        for a in 0..n {
            for b in 0..n {
                // -i [H, rho]
                let mut comm = czero();
                for j in 0..n {
                    comm += h[a * n + j] * rho[j * n + b] - rho[a * n + j] * h[j * n + b];
                }
                let mut acc = mul_neg_i(comm);
                acc -= rho[a * n + b] * (self.half_decay[a] + self.half_decay[b]);
                if a != b {
                    acc += rho[b * n + a] * self.gamma[a * n + b];
                } else {
                    for j in 0..n {
                        acc += rho[j * n + j] * self.gamma[a * n + j];
                    }
                }
                out[a * n + b] = acc;
            }
        }
    }
}

impl<T: Real> Rhs<T> for SingleParticleGenerator<T> {
    fn eval(&self, _t: T, y: &[C<T>], dy: &mut [C<T>]) {
        self.apply(y, dy)
    }
}

/// `drho/dt` for any square matrix `rho` (the generator is linear).
pub fn single_rhs<T: Real>(net: &ValidatedNetwork<T>, rho: &CMatrix<T>) -> Result<CMatrix<T>, DynamicsError> {
    let n = net.n_sites();
    if rho.nrows() != n || rho.ncols() != n {
        return Err(DynamicsError::DimensionMismatch { expected: n, found: rho.nrows() });
    }
    let gen = SingleParticleGenerator::new(net);
    let y = flatten(rho);
    let mut dy = y.clone();
    gen.apply(&y, &mut dy);
    Ok(unflatten(n, &dy))
}

/// Explicit `N² x N²` superoperator in the row-major pair convention
/// `(n, m) -> n * N + m`.
pub fn liouvillian_matrix_single<T: Real>(net: &ValidatedNetwork<T>) -> CMatrix<T> {
    let n = net.n_sites();
    let (omega, kappa, gamma) = (net.omega(), net.kappa(), net.gamma());
    let idx = |a: usize, b: usize| a * n + b;
    let mut l = CMatrix::zeros(n * n, n * n);
    let half = T::lit(0.5);
    for a in 0..n {
        for b in 0..n {
            let row = idx(a, b);
            let decay = (0..n).fold(T::zero(), |s, j| s + gamma[(a, j)] + gamma[(b, j)]) * half;
            l[(row, row)] += C::new(-decay, -(omega[a] - omega[b]));
            for j in 0..n {
                l[(row, idx(a, j))] += C::new(T::zero(), kappa[(b, j)]);
                l[(row, idx(j, b))] += C::new(T::zero(), -kappa[(a, j)]);
            }
            l[(row, idx(b, a))] += C::new(gamma[(a, b)], T::zero());
            if a == b {
                for j in 0..n {
                    l[(row, idx(j, j))] += C::new((gamma[(a, j)] * gamma[(b, j)]).sqrt(), T::zero());
                }
            }
        }
    }
    l
}

/// Integrates the master equation and checks every snapshot.
pub fn evolve_single<T: Real>(
    net: &ValidatedNetwork<T>,
    rho0: &DensityMatrix<T>,
    grid: &TimeGrid<T>,
    opts: &SolverOptions<T>,
) -> Result<Vec<(T, DensityMatrix<T>)>, DynamicsError> {
    let n = net.n_sites();
    if rho0.dim() != n {
        return Err(DynamicsError::DimensionMismatch { expected: n, found: rho0.dim() });
    }
    let gen = SingleParticleGenerator::new(net);
    let tr0 = trace(rho0.matrix());
    let states = integrate(&gen, &flatten(rho0.matrix()), grid, opts)?;
    states
        .into_iter()
        .map(|(t, y)| {
            let rho = unflatten(n, &y);
            let drift = (trace(&rho) - tr0).cabs().to_f64_lossy();
            if drift > T::TRACE_TOL {
                return Err(DynamicsError::InvariantViolation {
                    t: t.to_f64_lossy(),
                    what: format!("trace drift {drift:e}"),
                });
            }
            DensityMatrix::new_checked_at(rho, t).map(|d| (t, d))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions<T: Real> {
    /// Stop integrating once `max |drho/dt|` falls below this.
    pub tol: T,
    /// Give up (NoConvergence) after this much simulated time, ps.
    pub t_max: T,
    /// Length of each integration chunk between residual checks, ps.
    pub chunk: T,
    pub solver: SolverOptions<T>,
}

impl<T: Real> Default for SteadyStateOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-10),
            t_max: T::lit(200.0),
            chunk: T::lit(1.0),
            solver: SolverOptions { mode: StepMode::Adaptive, rel_tol: T::lit(1e-10), abs_tol: T::lit(1e-13), ..Default::default() },
        }
    }
}

/// Result of [`steady_state_single`], carrying both routes.
#[derive(Debug, Clone)]
pub struct SteadyState<T: Real> {
    pub state: DensityMatrix<T>,
    /// State reached by long-time integration.
    pub integrated: CMatrix<T>,
    /// Time at which the residual fell below tolerance, ps.
    pub converged_at: T,
    /// `max |integrated - null-space state|`.
    pub route_deviation: T,
}

/// Unit-trace null vector of a Liouvillian, or an error if the null space
/// is degenerate.
pub fn liouvillian_null_state<T: Real>(l: &CMatrix<T>, n: usize) -> Result<CMatrix<T>, DynamicsError> {
    let svd = l.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sv = &svd.singular_values;
    let largest = sv.iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a });
    let threshold = T::lit(1e-9) * largest.max(T::one());
    let null: Vec<usize> = (0..sv.len()).filter(|&k| sv[k] <= threshold).collect();
    if null.len() > 1 {
        return Err(DynamicsError::DegenerateNullSpace { dimension: null.len() });
    }
    let k = match null.first() {
        Some(&k) => k,
        None => (0..sv.len()).fold(0, |best, k| if sv[k] < sv[best] { k } else { best }),
    };
    let v: Vec<C<T>> = v_t.row(k).iter().map(|z| z.conj()).collect();
    let rho = unflatten(n, &v);
    let tr = trace(&rho);
    let rho = rho.map(|z| z / tr);
    Ok(crate::linalg::hermitian_part(&rho))
}

/// Steady state by long-time integration, cross-checked against the null
/// space of the Liouvillian. The two must agree within `10 * tol`.
pub fn steady_state_single<T: Real>(
    net: &ValidatedNetwork<T>,
    rho0: &DensityMatrix<T>,
    opts: &SteadyStateOptions<T>,
) -> Result<SteadyState<T>, DynamicsError> {
    let n = net.n_sites();
    if rho0.dim() != n {
        return Err(DynamicsError::DimensionMismatch { expected: n, found: rho0.dim() });
    }
    let gen = SingleParticleGenerator::new(net);
    let mut y = flatten(rho0.matrix());
    let mut dy = y.clone();
    let mut t = T::zero();
    let residual = |y: &[C<T>], dy: &mut [C<T>]| {
        gen.apply(y, dy);
        dy.iter().fold(T::zero(), |a, z| a.max(z.cabs()))
    };
    let mut res = residual(&y, &mut dy);
    while res >= opts.tol {
        if t >= opts.t_max {
            return Err(DynamicsError::NoConvergence { t_max: opts.t_max.to_f64_lossy(), residual: res.to_f64_lossy() });
        }
        let grid = TimeGrid::new(t, t + opts.chunk, vec![t + opts.chunk])?;
        y = integrate(&gen, &y, &grid, &opts.solver)?.pop().expect("one sample").1;
        t += opts.chunk;
        res = residual(&y, &mut dy);
    }
    let integrated = unflatten(n, &y);
    let null = liouvillian_null_state(&liouvillian_matrix_single(net), n)?;
    let deviation = max_abs_diff(&integrated, &null);
    let allowed = opts.tol * T::lit(10.0);
    if deviation > allowed {
        return Err(DynamicsError::SteadyStateMismatch {
            deviation: deviation.to_f64_lossy(),
            allowed: allowed.to_f64_lossy(),
        });
    }
    debug_assert!(hermiticity_residual(&null) <= T::lit(1e-9) * max_abs(&null).max(T::one()));
    Ok(SteadyState { state: DensityMatrix::new_checked_at(null, t)?, integrated, converged_at: t, route_deviation: deviation })
}
