//! Monte-Carlo ground truth: averages over explicit noise realizations of
//! the stochastic Schrödinger equation, integrated in the Stratonovich sense.
//!
//! Each step of length `h` is split as `exp(-iH h/2) · N(Φ h) · exp(-iH h/2)`
//! where `H` is the mean Hamiltonian and `Φ` the piecewise-constant coupling
//! noise of that step. The deterministic halves are exact, so a noiseless
//! network reproduces `exp(-iHt)` to rounding; `N` is the noise substep of
//! the chosen [`StochasticScheme`].

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::OracleError;
use crate::linalg::{flatten, unflatten, unitarity_defect, CMatrix};
use crate::network::ValidatedNetwork;
use crate::ode::TimeGrid;
use crate::scalar::{czero, mul_neg_i, Real, C};
use crate::two::{compose_raw, InputAmplitudeProfile, Statistics, TwoParticleAmplitude};

/// `gamma = sigma² · delta_t`.
pub fn gamma_from_variance<T: Real>(sigma_sq: T, delta_t: T) -> Result<T, OracleError> {
    positive("variance", sigma_sq)?;
    positive("correlation time", delta_t)?;
    Ok(sigma_sq * delta_t)
}

/// `sigma² = gamma / delta_t`.
pub fn variance_from_gamma<T: Real>(gamma: T, delta_t: T) -> Result<T, OracleError> {
    positive("noise intensity", gamma)?;
    positive("correlation time", delta_t)?;
    Ok(gamma / delta_t)
}

fn positive<T: Real>(what: &'static str, value: T) -> Result<(), OracleError> {
    if value > T::zero() && value.is_finite() {
        Ok(())
    } else {
        Err(OracleError::NonPositiveInput { what, value: value.to_f64_lossy() })
    }
}

/// Symmetric matrix of coupling offsets for one step of length `dt`: each
/// noisy pair gets an independent Gaussian of variance `gamma / dt`.
pub fn sample_coupling_noise<T: Real, R: Rng + ?Sized>(rng: &mut R, net: &ValidatedNetwork<T>, dt: T) -> DMatrix<T> {
    let n = net.n_sites();
    let mut phi = DMatrix::zeros(n, n);
    for &(a, b) in net.noisy_pairs() {
        let z: f64 = rng.sample(StandardNormal);
        let x = T::lit(z) * (net.gamma()[(a, b)] / dt).sqrt();
        phi[(a, b)] = x;
        phi[(b, a)] = x;
    }
    phi
}

/// Noise stream of one trajectory, derived from `(base_seed, trajectory)`.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    base_seed: u64,
    trajectory: u64,
    rng: ChaCha8Rng,
}

impl NoiseRealization {
    pub fn new(base_seed: u64, trajectory: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(trajectory);
        Self { base_seed, trajectory, rng }
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn trajectory(&self) -> u64 {
        self.trajectory
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn fill_normals(&mut self, out: &mut [f64]) {
        for z in out {
            *z = self.rng.sample(StandardNormal);
        }
    }
}

/// Discretization of the noise substep. All but Euler–Maruyama converge to
/// the Stratonovich solution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StochasticScheme {
    /// Predictor–corrector with the same noise sample in both stages.
    #[default]
    Heun,
    /// Implicit midpoint (Cayley transform); exactly unitary.
    Midpoint,
    /// Exact exponential of the step's noise generator; exactly unitary.
    Exponential,
    /// Itô control: converges to the wrong equation for this noise.
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions<T: Real> {
    pub n_traj: usize,
    /// Maximum step, ps. Sample intervals are split into equal substeps.
    pub dt: T,
    pub base_seed: u64,
    pub scheme: StochasticScheme,
    /// Abort a trajectory whose `max |U†U - I|` exceeds this; `None` disables
    /// the check. Heun drifts by roughly `4 dt` per 10 ps at gamma = 0.38.
    pub unitarity_tol: Option<T>,
}

impl<T: Real> Default for OracleOptions<T> {
    fn default() -> Self {
        Self {
            n_traj: 10_000,
            dt: T::lit(1e-3),
            base_seed: 42,
            scheme: StochasticScheme::Heun,
            unitarity_tol: Some(T::lit(1e-2)),
        }
    }
}

impl<T: Real> OracleOptions<T> {
    fn check(&self) -> Result<(), OracleError> {
        positive("dt", self.dt)?;
        if self.n_traj == 0 {
            return Err(OracleError::NoTrajectories);
        }
        Ok(())
    }
}

/// Real symmetric generator term `phi_e * J_e` per noisy pair, stored as the
/// list of unit entries of `J_e`.
#[derive(Debug, Clone)]
struct NoiseChannels<T: Real> {
    entries: Vec<Vec<(usize, usize)>>,
    gamma: Vec<T>,
}

impl<T: Real> NoiseChannels<T> {
    fn single(net: &ValidatedNetwork<T>) -> Self {
        let pairs = net.noisy_pairs();
        Self {
            entries: pairs.iter().map(|&(a, b)| vec![(a, b), (b, a)]).collect(),
            gamma: pairs.iter().map(|&(a, b)| net.gamma()[(a, b)]).collect(),
        }
    }

    /// `J_e ⊗ I + I ⊗ J_e` on pair indices.
    fn pair(net: &ValidatedNetwork<T>) -> Self {
        let n = net.n_sites();
        let mut me = Self::single(net);
        for list in &mut me.entries {
            let one: Vec<(usize, usize)> = list.clone();
            list.clear();
            for &(a, b) in &one {
                for q in 0..n {
                    list.push((a * n + q, b * n + q));
                    list.push((q * n + a, q * n + b));
                }
            }
        }
        me
    }

    fn len(&self) -> usize {
        self.gamma.len()
    }
}

/// Substep layout for one sample interval.
#[derive(Debug, Clone)]
struct Interval<T: Real> {
    n_sub: usize,
    /// Row-major `exp(-i H h / 2)`.
    e_half: Vec<C<T>>,
    /// `sqrt(gamma_e / h) * h = sqrt(gamma_e h)` per channel: the generator
    /// increment per unit standard normal.
    scale: Vec<T>,
}

#[derive(Debug, Clone)]
struct Plan<T: Real> {
    d: usize,
    times: Vec<T>,
    intervals: Vec<Interval<T>>,
    channels: NoiseChannels<T>,
    scheme: StochasticScheme,
}

impl<T: Real> Plan<T> {
    fn new(
        h: &CMatrix<T>,
        channels: NoiseChannels<T>,
        grid: &TimeGrid<T>,
        dt: T,
        refine: usize,
        scheme: StochasticScheme,
    ) -> Self {
        let mut prev = grid.t_start();
        let mut intervals = Vec::with_capacity(grid.sample_times().len());
        for &t in grid.sample_times() {
            let span = t - prev;
            let coarse = if span > T::zero() { (span / dt).ceil().to_usize().unwrap_or(1).max(1) } else { 0 };
            let n_sub = coarse * refine;
            let step = if n_sub > 0 { span / T::from_usize(n_sub).unwrap() } else { T::zero() };
            let gen = h.map(|z| mul_neg_i(z) * (step * T::lit(0.5)));
            let e_half = flatten(&gen.exp());
            let scale = channels.gamma.iter().map(|&g| (g * step).sqrt()).collect();
            intervals.push(Interval { n_sub, e_half, scale });
            prev = t;
        }
        Self { d: h.nrows(), times: grid.sample_times().to_vec(), intervals, channels, scheme }
    }
}

/// Row-major complex product `out = a (d x d) * x (d x c)`.
fn cmul<T: Real>(d: usize, c: usize, a: &[C<T>], x: &[C<T>], out: &mut [C<T>]) {
    for i in 0..d {
        for k in 0..c {
            let mut s = czero();
            for j in 0..d {
                s += a[i * d + j] * x[j * c + k];
            }
            out[i * c + k] = s;
        }
    }
}

/// `out = A x` for the sparse real symmetric noise generator.
fn noise_mul<T: Real>(c: usize, chan: &NoiseChannels<T>, inc: &[T], x: &[C<T>], out: &mut [C<T>]) {
    out.iter_mut().for_each(|z| *z = czero());
    for (e, list) in chan.entries.iter().enumerate() {
        let w = inc[e];
        for &(i, j) in list {
            for k in 0..c {
                out[i * c + k] += x[j * c + k] * w;
            }
        }
    }
}

fn noise_dense<T: Real>(d: usize, chan: &NoiseChannels<T>, inc: &[T]) -> CMatrix<T> {
    let mut a = CMatrix::zeros(d, d);
    for (e, list) in chan.entries.iter().enumerate() {
        for &(i, j) in list {
            a[(i, j)] += C::new(inc[e], T::zero());
        }
    }
    a
}

/// Applies the noise substep `x <- N(A) x` for generator increment `A`.
fn noise_substep<T: Real>(
    scheme: StochasticScheme,
    d: usize,
    c: usize,
    chan: &NoiseChannels<T>,
    inc: &[T],
    x: &mut [C<T>],
    y: &mut [C<T>],
    z: &mut [C<T>],
) {
    match scheme {
        StochasticScheme::Heun | StochasticScheme::EulerMaruyama => {
            // Heun: x - i A x - A² x / 2 (predictor and corrector share A).
            noise_mul(c, chan, inc, x, y);
            let heun = scheme == StochasticScheme::Heun;
            if heun {
                noise_mul(c, chan, inc, y, z);
            }
            let half = T::lit(0.5);
            for k in 0..x.len() {
                let mut v = x[k] + mul_neg_i(y[k]);
                if heun {
                    v -= z[k] * half;
                }
                x[k] = v;
            }
        }
        StochasticScheme::Midpoint => {
            let a = noise_dense(d, chan, inc);
            let i_half = C::new(T::zero(), T::lit(0.5));
            let id = CMatrix::identity(d, d);
            let lhs = &id + &a * i_half;
            let rhs = (&id - &a * i_half) * DMatrix::from_row_slice(d, c, x);
            let sol = lhs.lu().solve(&rhs).expect("I + iA/2 is invertible for Hermitian A");
            copy_row_major(&sol, x);
        }
        StochasticScheme::Exponential => {
            let a = noise_dense(d, chan, inc).map(mul_neg_i).exp();
            let sol = a * DMatrix::from_row_slice(d, c, x);
            copy_row_major(&sol, x);
        }
    }
}

fn copy_row_major<T: Real>(m: &CMatrix<T>, out: &mut [C<T>]) {
    let c = m.ncols();
    for i in 0..m.nrows() {
        for k in 0..c {
            out[i * c + k] = m[(i, k)];
        }
    }
}

/// Scratch state of one trajectory: `d x c` row-major block.
struct Stepper<'p, T: Real> {
    plan: &'p Plan<T>,
    c: usize,
    x: Vec<C<T>>,
    y: Vec<C<T>>,
    z: Vec<C<T>>,
    inc: Vec<T>,
}

impl<'p, T: Real> Stepper<'p, T> {
    fn new(plan: &'p Plan<T>, x0: Vec<C<T>>) -> Self {
        let c = x0.len() / plan.d;
        let len = x0.len();
        Self { plan, c, x: x0, y: vec![czero(); len], z: vec![czero(); len], inc: vec![T::zero(); plan.channels.len()] }
    }

    /// One Strang step with generator increments already in `self.inc`.
    fn step(&mut self, iv: &Interval<T>) {
        let (d, c) = (self.plan.d, self.c);
        cmul(d, c, &iv.e_half, &self.x, &mut self.y);
        std::mem::swap(&mut self.x, &mut self.y);
        noise_substep(self.plan.scheme, d, c, &self.plan.channels, &self.inc, &mut self.x, &mut self.y, &mut self.z);
        cmul(d, c, &iv.e_half, &self.x, &mut self.y);
        std::mem::swap(&mut self.x, &mut self.y);
    }
}

/// Runs one trajectory, calling `visit(sample_index, state)` at each sample.
fn run<T: Real, F>(plan: &Plan<T>, x0: Vec<C<T>>, noise: &mut NoiseRealization, mut visit: F) -> Result<(), OracleError>
where
    F: FnMut(usize, &[C<T>]) -> Result<(), OracleError>,
{
    let mut st = Stepper::new(plan, x0);
    let mut z = vec![0.0; plan.channels.len()];
    for (k, iv) in plan.intervals.iter().enumerate() {
        for _ in 0..iv.n_sub {
            noise.fill_normals(&mut z);
            for e in 0..z.len() {
                st.inc[e] = T::lit(z[e]) * iv.scale[e];
            }
            st.step(iv);
        }
        visit(k, &st.x)?;
    }
    Ok(())
}

/// Coarse (`dt`) and fine (`dt/2`) runs driven by the same Brownian path:
/// each coarse increment is the sum of two fine ones.
fn run_bridged<T: Real, F>(
    coarse: &Plan<T>,
    fine: &Plan<T>,
    x0: Vec<C<T>>,
    noise: &mut NoiseRealization,
    mut visit: F,
) -> Result<(), OracleError>
where
    F: FnMut(usize, &[C<T>], &[C<T>]) -> Result<(), OracleError>,
{
    let m = coarse.channels.len();
    let mut sc = Stepper::new(coarse, x0.clone());
    let mut sf = Stepper::new(fine, x0);
    let (mut z1, mut z2) = (vec![0.0; m], vec![0.0; m]);
    for (k, (ic, ifine)) in coarse.intervals.iter().zip(&fine.intervals).enumerate() {
        for _ in 0..ic.n_sub {
            noise.fill_normals(&mut z1);
            noise.fill_normals(&mut z2);
            for e in 0..m {
                sf.inc[e] = T::lit(z1[e]) * ifine.scale[e];
            }
            sf.step(ifine);
            for e in 0..m {
                sf.inc[e] = T::lit(z2[e]) * ifine.scale[e];
            }
            sf.step(ifine);
            for e in 0..m {
                // sqrt(g h) (z1 + z2) / sqrt 2 has the coarse variance g h.
                sc.inc[e] = T::lit((z1[e] + z2[e]) * std::f64::consts::FRAC_1_SQRT_2) * ic.scale[e];
            }
            sc.step(ic);
        }
        visit(k, &sc.x, &sf.x)?;
    }
    Ok(())
}

fn identity_flat<T: Real>(n: usize) -> Vec<C<T>> {
    flatten(&CMatrix::identity(n, n))
}

fn check_unitary<T: Real>(
    u: &CMatrix<T>,
    tol: Option<T>,
    trajectory: u64,
    t: T,
) -> Result<(), OracleError> {
    if let Some(tol) = tol {
        let defect = unitarity_defect(u);
        if !(defect <= tol) {
            return Err(OracleError::UnitarityLost {
                trajectory,
                t: t.to_f64_lossy(),
                defect: defect.to_f64_lossy(),
                allowed: tol.to_f64_lossy(),
            });
        }
    }
    Ok(())
}

/// Single-particle propagator `U(t)` along one noise realization, sampled
/// on `grid`. `U(t_start) = I`.
pub fn propagate_unitary_trajectory<T: Real>(
    net: &ValidatedNetwork<T>,
    noise: &mut NoiseRealization,
    grid: &TimeGrid<T>,
    opts: &OracleOptions<T>,
) -> Result<Vec<(T, CMatrix<T>)>, OracleError> {
    opts.check()?;
    let n = net.n_sites();
    let plan = Plan::new(net.hamiltonian().matrix(), NoiseChannels::single(net), grid, opts.dt, 1, opts.scheme);
    let mut out = Vec::with_capacity(plan.times.len());
    let trajectory = noise.trajectory();
    run(&plan, identity_flat(n), noise, |k, x| {
        let u = unflatten(n, x);
        check_unitary(&u, opts.unitarity_tol, trajectory, plan.times[k])?;
        out.push((plan.times[k], u));
        Ok(())
    })?;
    Ok(out)
}

/// Integrates the two-particle amplitude equation directly on the `N²`
/// pair space, with the noise acting as `Φ ⊗ I + I ⊗ Φ`. Used to cross-check
/// the propagate-and-compose route.
pub fn propagate_pair_amplitude_direct<T: Real>(
    net: &ValidatedNetwork<T>,
    psi0: &TwoParticleAmplitude<T>,
    noise: &mut NoiseRealization,
    grid: &TimeGrid<T>,
    opts: &OracleOptions<T>,
) -> Result<Vec<(T, CMatrix<T>)>, OracleError> {
    opts.check()?;
    let n = net.n_sites();
    let id = CMatrix::identity(n, n);
    let h = net.hamiltonian().matrix();
    let h2 = h.kronecker(&id) + id.kronecker(h);
    let plan = Plan::new(&h2, NoiseChannels::pair(net), grid, opts.dt, 1, opts.scheme);
    let mut out = Vec::with_capacity(plan.times.len());
    run(&plan, psi0.to_pair_vector(), noise, |k, x| {
        out.push((plan.times[k], unflatten(n, x)));
        Ok(())
    })?;
    Ok(out)
}

/// Mean and standard error of a matrix-valued sample at each grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble<T: Real> {
    n_traj: usize,
    base_seed: u64,
    times: Vec<T>,
    mean: Vec<CMatrix<T>>,
    /// Sums of squared deviations, real and imaginary parts separately.
    m2: Vec<CMatrix<T>>,
}

impl<T: Real> TrajectoryEnsemble<T> {
    pub fn n_traj(&self) -> usize {
        self.n_traj
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn mean(&self) -> &[CMatrix<T>] {
        &self.mean
    }

    pub fn m2(&self) -> &[CMatrix<T>] {
        &self.m2
    }

    /// The ensemble restricted to samples `from..`.
    pub fn tail(&self, from: usize) -> Self {
        Self {
            n_traj: self.n_traj,
            base_seed: self.base_seed,
            times: self.times[from..].to_vec(),
            mean: self.mean[from..].to_vec(),
            m2: self.m2[from..].to_vec(),
        }
    }

    /// Standard error of the mean at sample `k`; real and imaginary parts
    /// carry the errors of the corresponding components.
    pub fn standard_error(&self, k: usize) -> CMatrix<T> {
        if self.n_traj < 2 {
            return self.m2[k].map(|_| czero());
        }
        let nn = T::from_usize(self.n_traj).unwrap();
        let denom = nn * (nn - T::one());
        self.m2[k].map(|z| C::new((z.re / denom).sqrt(), (z.im / denom).sqrt()))
    }
}

/// Welford accumulator over `slots` flat complex samples.
#[derive(Debug, Clone)]
struct Accumulator<T: Real> {
    n: usize,
    mean: Vec<Vec<C<T>>>,
    m2: Vec<Vec<C<T>>>,
}

impl<T: Real> Accumulator<T> {
    fn new(slots: usize, len: usize) -> Self {
        Self { n: 0, mean: vec![vec![czero(); len]; slots], m2: vec![vec![czero(); len]; slots] }
    }

    fn push(&mut self, slot: usize, x: &[C<T>]) {
        let nn = T::from_usize(self.n + 1).unwrap();
        for ((m, s), &v) in self.mean[slot].iter_mut().zip(self.m2[slot].iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / nn;
            let d2 = v - *m;
            *s += C::new(d.re * d2.re, d.im * d2.im);
        }
    }

    fn finish_sample(&mut self) {
        self.n += 1;
    }

    /// Chan et al. pairwise merge.
    fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (T::from_usize(self.n).unwrap(), T::from_usize(other.n).unwrap());
        let n = na + nb;
        for s in 0..self.mean.len() {
            for k in 0..self.mean[s].len() {
                let d = other.mean[s][k] - self.mean[s][k];
                self.mean[s][k] += d * (nb / n);
                let w = na * nb / n;
                self.m2[s][k] += other.m2[s][k] + C::new(d.re * d.re * w, d.im * d.im * w);
            }
        }
        self.n += other.n;
    }
}

/// Trajectories per reduction batch. Batches are reduced in index order, so
/// results do not depend on how many threads ran them.
const BATCH: usize = 64;

/// Runs `n_traj` trajectories through `sample(k, acc)`, which pushes every
/// slot of trajectory `k`, and reduces deterministically.
fn reduce<T: Real, F>(n_traj: usize, slots: usize, len: usize, sample: F) -> Result<Accumulator<T>, OracleError>
where
    F: Fn(u64, &mut Accumulator<T>) -> Result<(), OracleError> + Sync,
{
    let batches: Vec<Result<Accumulator<T>, OracleError>> = (0..n_traj.div_ceil(BATCH))
        .into_par_iter()
        .map(|b| {
            let mut acc = Accumulator::new(slots, len);
            for k in b * BATCH..((b + 1) * BATCH).min(n_traj) {
                sample(k as u64, &mut acc)?;
                acc.finish_sample();
            }
            Ok(acc)
        })
        .collect();
    let mut total = Accumulator::new(slots, len);
    for b in batches {
        total.merge(&b?);
    }
    Ok(total)
}

fn ensemble<T: Real>(acc: Accumulator<T>, range: std::ops::Range<usize>, dim: usize, times: &[T], base_seed: u64) -> TrajectoryEnsemble<T> {
    TrajectoryEnsemble {
        n_traj: acc.n,
        base_seed,
        times: times.to_vec(),
        mean: acc.mean[range.clone()].iter().map(|v| unflatten(dim, v)).collect(),
        m2: acc.m2[range].iter().map(|v| unflatten(dim, v)).collect(),
    }
}

fn outer<T: Real>(psi: &[C<T>], out: &mut [C<T>]) {
    let d = psi.len();
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = psi[i] * psi[j].conj();
        }
    }
}

fn check_psi0<T: Real>(psi0: &[C<T>], n: usize) -> Result<(), OracleError> {
    if psi0.len() != n {
        return Err(crate::error::DynamicsError::DimensionMismatch { expected: n, found: psi0.len() }.into());
    }
    let norm2 = psi0.iter().fold(T::zero(), |a, z| a + z.norm_sqr());
    if (norm2 - T::one()).abs().to_f64_lossy() > T::NORM_TOL {
        return Err(OracleError::NotNormalized(norm2.to_f64_lossy()));
    }
    Ok(())
}

/// Ensemble of `psi psi†` with `psi(t) = U(t) psi0`.
pub fn mc_single_density<T: Real>(
    net: &ValidatedNetwork<T>,
    psi0: &[C<T>],
    grid: &TimeGrid<T>,
    opts: &OracleOptions<T>,
) -> Result<TrajectoryEnsemble<T>, OracleError> {
    opts.check()?;
    let n = net.n_sites();
    check_psi0(psi0, n)?;
    let plan = Plan::new(net.hamiltonian().matrix(), NoiseChannels::single(net), grid, opts.dt, 1, opts.scheme);
    let slots = plan.times.len();
    let acc = reduce(opts.n_traj, slots, n * n, |k, acc| {
        let mut noise = NoiseRealization::new(opts.base_seed, k);
        let mut psi = vec![czero(); n];
        let mut rho = vec![czero(); n * n];
        run(&plan, identity_flat(n), &mut noise, |s, u| {
            check_unitary(&unflatten(n, u), opts.unitarity_tol, k, plan.times[s])?;
            for (i, p) in psi.iter_mut().enumerate() {
                *p = (0..n).fold(czero(), |a, j| a + u[i * n + j] * psi0[j]);
            }
            outer(&psi, &mut rho);
            acc.push(s, &rho);
            Ok(())
        })
    })?;
    Ok(ensemble(acc, 0..slots, n, &plan.times, opts.base_seed))
}

/// Single-particle ensembles at `dt` and `dt / 2` on shared Brownian paths,
/// for step-size convergence checks.
pub fn mc_single_density_bridged<T: Real>(
    net: &ValidatedNetwork<T>,
    psi0: &[C<T>],
    grid: &TimeGrid<T>,
    opts: &OracleOptions<T>,
) -> Result<(TrajectoryEnsemble<T>, TrajectoryEnsemble<T>), OracleError> {
    opts.check()?;
    let n = net.n_sites();
    check_psi0(psi0, n)?;
    let h = net.hamiltonian().matrix();
    let coarse = Plan::new(h, NoiseChannels::single(net), grid, opts.dt, 1, opts.scheme);
    let fine = Plan::new(h, NoiseChannels::single(net), grid, opts.dt, 2, opts.scheme);
    let slots = coarse.times.len();
    let acc = reduce(opts.n_traj, 2 * slots, n * n, |k, acc| {
        let mut noise = NoiseRealization::new(opts.base_seed, k);
        let mut psi = vec![czero(); n];
        let mut rho = vec![czero(); n * n];
        run_bridged(&coarse, &fine, identity_flat(n), &mut noise, |s, uc, uf| {
            for (slot, u) in [(s, uc), (slots + s, uf)] {
                check_unitary(&unflatten(n, u), opts.unitarity_tol, k, coarse.times[s])?;
                for (i, p) in psi.iter_mut().enumerate() {
                    *p = (0..n).fold(czero(), |a, j| a + u[i * n + j] * psi0[j]);
                }
                outer(&psi, &mut rho);
                acc.push(slot, &rho);
            }
            Ok(())
        })
    })?;
    let times = coarse.times.clone();
    Ok((ensemble(acc.clone(), 0..slots, n, &times, opts.base_seed), ensemble(acc, slots..2 * slots, n, &times, opts.base_seed)))
}

/// Two-particle input for [`mc_two_density`].
#[derive(Debug, Clone, PartialEq)]
pub enum TwoParticleInput<T: Real> {
    /// Profile `xi`, (anti)symmetrized according to the statistics.
    Profile { xi: InputAmplitudeProfile<T>, statistics: Statistics },
    /// Explicit normalized amplitude.
    Amplitude(TwoParticleAmplitude<T>),
    /// Equal-weight mixture of pure amplitudes sharing each noise realization.
    Mixture(Vec<TwoParticleAmplitude<T>>),
}

impl<T: Real> TwoParticleInput<T> {
    pub fn canonical(kind: crate::two::CanonicalKind, sites: (usize, usize), n_sites: usize) -> Result<Self, OracleError> {
        let (a, b) = sites;
        if !(a < b && b < n_sites) {
            return Err(crate::error::DynamicsError::BadSitePair { a, b, n_sites }.into());
        }
        let mut parts = kind.constituents(a, b, n_sites);
        Ok(if parts.len() == 1 { Self::Amplitude(parts.remove(0)) } else { Self::Mixture(parts) })
    }

    fn n_sites(&self) -> usize {
        match self {
            Self::Profile { xi, .. } => xi.dim(),
            Self::Amplitude(a) => a.n_sites(),
            Self::Mixture(v) => v.first().map_or(0, |a| a.n_sites()),
        }
    }
}

/// Ensemble of pair-space densities: both particles ride the same noise.
///
/// Amplitudes are `U psi0 U^T` (or the composition formula for a profile,
/// scaled by its initial norm). They are not renormalized per trajectory, so
/// the ensemble carries the scheme's norm drift instead of hiding it.
pub fn mc_two_density<T: Real>(
    net: &ValidatedNetwork<T>,
    input: &TwoParticleInput<T>,
    grid: &TimeGrid<T>,
    opts: &OracleOptions<T>,
) -> Result<TrajectoryEnsemble<T>, OracleError> {
    opts.check()?;
    let n = net.n_sites();
    if input.n_sites() != n {
        return Err(crate::error::DynamicsError::DimensionMismatch { expected: n, found: input.n_sites() }.into());
    }
    let id = CMatrix::identity(n, n);
    let (starts, profile): (Vec<CMatrix<T>>, Option<(CMatrix<T>, Statistics, T)>) = match input {
        TwoParticleInput::Profile { xi, statistics } => {
            let raw = compose_raw(&id, xi.matrix(), *statistics);
            let norm = raw.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt();
            if norm.to_f64_lossy() <= T::NORM_TOL {
                return Err(crate::error::DynamicsError::ZeroAmplitude.into());
            }
            (vec![], Some((xi.matrix().clone(), *statistics, norm)))
        }
        TwoParticleInput::Amplitude(a) => (vec![a.matrix().clone()], None),
        TwoParticleInput::Mixture(v) if v.is_empty() => return Err(OracleError::NoTrajectories),
        TwoParticleInput::Mixture(v) => (v.iter().map(|a| a.matrix().clone()).collect(), None),
    };
    let plan = Plan::new(net.hamiltonian().matrix(), NoiseChannels::single(net), grid, opts.dt, 1, opts.scheme);
    let slots = plan.times.len();
    let d = n * n;
    let weight = T::one() / T::from_usize(starts.len().max(1)).unwrap();
    let acc = reduce(opts.n_traj, slots, d * d, |k, acc| {
        let mut noise = NoiseRealization::new(opts.base_seed, k);
        let mut rho = vec![czero(); d * d];
        let mut part = vec![czero(); d * d];
        run(&plan, identity_flat(n), &mut noise, |s, u| {
            let u = unflatten(n, u);
            check_unitary(&u, opts.unitarity_tol, k, plan.times[s])?;
            if let Some((xi, stats, norm)) = &profile {
                let psi = compose_raw(&u, xi, *stats).map(|z| z / *norm);
                outer(&flatten(&psi), &mut rho);
            } else {
                rho.iter_mut().for_each(|z| *z = czero());
                let ut = u.transpose();
                for psi0 in &starts {
                    outer(&flatten(&(&u * psi0 * &ut)), &mut part);
                    rho.iter_mut().zip(&part).for_each(|(r, p)| *r += *p * weight);
                }
            }
            acc.push(s, &rho);
            Ok(())
        })
    })?;
    Ok(ensemble(acc, 0..slots, d, &plan.times, opts.base_seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::scalar::Modulus;
    use crate::network::NetworkSpec;
    use crate::ode::SolverOptions;
    use crate::single::{evolve_single, DensityMatrix};
    use crate::two::{canonical_two_particle_state, evolve_two, CanonicalKind, TwoParticleDensity};
    use approx::assert_relative_eq;

    fn triangle(gamma: f64) -> ValidatedNetwork<f64> {
        NetworkSpec::reference_triangle(gamma).validate().unwrap()
    }

    fn site0() -> Vec<C<f64>> {
        vec![C::new(1.0, 0.0), czero(), czero()]
    }

    fn small(n_traj: usize) -> OracleOptions<f64> {
        OracleOptions { n_traj, ..Default::default() }
    }

    #[test]
    fn calibration_arithmetic() {
        assert_relative_eq!(gamma_from_variance(4.0, 0.1).unwrap(), 0.4, max_relative = 1e-15);
        assert_relative_eq!(variance_from_gamma(0.38, 0.001).unwrap(), 380.0, max_relative = 1e-12);
        assert!(matches!(gamma_from_variance(0.0, 0.1), Err(OracleError::NonPositiveInput { .. })));
        assert!(matches!(variance_from_gamma(0.38, -1.0), Err(OracleError::NonPositiveInput { .. })));
    }

    #[test]
    fn noise_statistics() {
        let net = triangle(0.38);
        let mut noise = NoiseRealization::new(7, 0);
        let draws = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..draws {
            let phi = sample_coupling_noise(noise.rng(), &net, 1e-3);
            assert_eq!(phi[(0, 1)], phi[(1, 0)]);
            assert_eq!(phi[(2, 2)], 0.0);
            sum += phi[(0, 1)];
            sq += phi[(0, 1)] * phi[(0, 1)];
        }
        let mean = sum / draws as f64;
        let var = sq / draws as f64 - mean * mean;
        assert!(mean.abs() <= 4.0 * (380.0 / draws as f64).sqrt(), "mean {mean}");
        assert!((var / 380.0 - 1.0).abs() < 0.05, "variance {var}");
        let quiet = sample_coupling_noise(noise.rng(), &triangle(0.0), 1e-3);
        assert!(quiet.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn noiseless_propagator_is_the_matrix_exponential() {
        let net = triangle(0.0);
        let grid = TimeGrid::new(0.0, 10.0, vec![0.0, 1.0, 4.5, 10.0]).unwrap();
        let out = propagate_unitary_trajectory(&net, &mut NoiseRealization::new(1, 0), &grid, &small(1)).unwrap();
        assert!(max_abs_diff(&out[0].1, &CMatrix::identity(3, 3)) == 0.0);
        for (t, u) in &out {
            let exact = net.hamiltonian().matrix().map(|z| mul_neg_i(z) * *t).exp();
            assert!(max_abs_diff(u, &exact) < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn unitarity_budgets_per_scheme() {
        let net = triangle(0.38);
        let grid = TimeGrid::uniform(0.0, 10.0, 3).unwrap();
        let defect = |scheme| {
            let opts = OracleOptions { scheme, unitarity_tol: None, ..small(1) };
            let out = propagate_unitary_trajectory(&net, &mut NoiseRealization::new(3, 5), &grid, &opts).unwrap();
            unitarity_defect(&out.last().unwrap().1)
        };
        assert!(defect(StochasticScheme::Heun) < 1e-2);
        assert!(defect(StochasticScheme::Midpoint) < 1e-10);
        assert!(defect(StochasticScheme::Exponential) < 1e-10);
        let strict = OracleOptions { unitarity_tol: Some(1e-9), ..small(1) };
        let err = propagate_unitary_trajectory(&net, &mut NoiseRealization::new(3, 5), &grid, &strict).unwrap_err();
        assert!(matches!(err, OracleError::UnitarityLost { trajectory: 5, .. }));
    }

    #[test]
    fn single_noiseless_trajectory_is_exact() {
        let net = triangle(0.0);
        let grid = TimeGrid::uniform(0.0, 3.0, 4).unwrap();
        let ens = mc_single_density(&net, &site0(), &grid, &small(1)).unwrap();
        let master = evolve_single(&net, &DensityMatrix::site(0, 3), &grid, &SolverOptions::fixed(1e-3)).unwrap();
        for (k, (_, rho)) in master.iter().enumerate() {
            assert!(max_abs_diff(&ens.mean()[k], rho.matrix()) < 1e-8);
            assert!(ens.standard_error(k).iter().all(|z| z.re == 0.0 && z.im == 0.0));
        }
    }

    #[test]
    fn composition_matches_direct_pair_integration() {
        let net = triangle(0.38);
        let grid = TimeGrid::uniform(0.0, 2.0, 5).unwrap();
        let psi0 = CanonicalKind::Separable.constituents::<f64>(0, 1, 3).remove(0);
        // Exact exponentials factorize across the two particles.
        let exact = OracleOptions { scheme: StochasticScheme::Exponential, ..small(1) };
        let u = propagate_unitary_trajectory(&net, &mut NoiseRealization::new(9, 4), &grid, &exact).unwrap();
        let direct = propagate_pair_amplitude_direct(&net, &psi0, &mut NoiseRealization::new(9, 4), &grid, &exact).unwrap();
        for ((_, u), (_, psi)) in u.iter().zip(&direct) {
            assert!(max_abs_diff(&psi0.propagate(u), psi) < 1e-8);
        }
        // Heun differs between the two routes only at third order per step.
        let heun = small(1);
        let u = propagate_unitary_trajectory(&net, &mut NoiseRealization::new(9, 4), &grid, &heun).unwrap();
        let direct = propagate_pair_amplitude_direct(&net, &psi0, &mut NoiseRealization::new(9, 4), &grid, &heun).unwrap();
        for ((_, u), (_, psi)) in u.iter().zip(&direct) {
            assert!(max_abs_diff(&psi0.propagate(u), psi) < 2e-3);
        }
    }

    #[test]
    fn noiseless_two_particle_ensemble_is_exact() {
        let net = triangle(0.0);
        let grid = TimeGrid::uniform(0.0, 2.0, 3).unwrap();
        let input = TwoParticleInput::canonical(CanonicalKind::Separable, (0, 1), 3).unwrap();
        let ens = mc_two_density(&net, &input, &grid, &small(1)).unwrap();
        let rho0 = canonical_two_particle_state(CanonicalKind::Separable, (0, 1), 3).unwrap();
        let master = evolve_two(&net, &rho0, &grid, &SolverOptions::fixed(1e-3)).unwrap();
        for (k, (_, rho)) in master.iter().enumerate() {
            assert!(max_abs_diff(&ens.mean()[k], rho.matrix()) < 1e-8);
        }
    }

    #[test]
    fn profile_input_matches_explicit_amplitude() {
        let net = triangle(0.38);
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let profile = TwoParticleInput::Profile { xi: InputAmplitudeProfile::single_pair(0, 1, 3).unwrap(), statistics: Statistics::Boson };
        let explicit = TwoParticleInput::canonical(CanonicalKind::Separable, (0, 1), 3).unwrap();
        let a = mc_two_density(&net, &profile, &grid, &small(50)).unwrap();
        let b = mc_two_density(&net, &explicit, &grid, &small(50)).unwrap();
        for k in 0..3 {
            assert!(max_abs_diff(&a.mean()[k], &b.mean()[k]) < 1e-12);
        }
    }

    #[test]
    fn fermions_never_share_a_site() {
        let net = triangle(0.38);
        let grid = TimeGrid::uniform(0.0, 3.0, 7).unwrap();
        let input = TwoParticleInput::Profile { xi: InputAmplitudeProfile::single_pair(0, 1, 3).unwrap(), statistics: Statistics::Fermion };
        let ens = mc_two_density(&net, &input, &grid, &small(200)).unwrap();
        for m in ens.mean() {
            for p in 0..3 {
                assert!(m[(p * 3 + p, p * 3 + p)].cabs() < 1e-14);
            }
        }
    }

    #[test]
    fn fermionic_ensemble_matches_master_equation() {
        let net = triangle(0.38);
        let grid = TimeGrid::uniform(0.0, 1.5, 4).unwrap();
        let h = 0.5f64.sqrt();
        let psi = CMatrix::from_fn(3, 3, |i, j| match (i, j) {
            (0, 1) => C::new(h, 0.0),
            (1, 0) => C::new(-h, 0.0),
            _ => czero(),
        });
        let amp = TwoParticleAmplitude::try_new(psi, Some(Statistics::Fermion)).unwrap();
        let opts = OracleOptions { scheme: StochasticScheme::Exponential, ..small(2000) };
        let ens = mc_two_density(&net, &TwoParticleInput::Amplitude(amp.clone()), &grid, &opts).unwrap();
        let master = evolve_two(&net, &TwoParticleDensity::pure(&amp), &grid, &SolverOptions::fixed(1e-3)).unwrap();
        let mut worst = 0.0f64;
        for (k, (_, rho)) in master.iter().enumerate().skip(1) {
            let se = ens.standard_error(k);
            for (i, (m, o)) in rho.matrix().iter().zip(ens.mean()[k].iter()).enumerate() {
                let d = o - m;
                for (dv, s) in [(d.re, se[i].re), (d.im, se[i].im)] {
                    if dv.abs() > 1e-12 {
                        worst = worst.max(dv.abs() / s);
                    }
                }
            }
        }
        assert!(worst < 4.5, "max z {worst}");
    }

    #[test]
    fn standard_error_scales_with_sqrt_n() {
        let net = triangle(0.38);
        let grid = TimeGrid::uniform(0.0, 4.0, 5).unwrap();
        let mean_se = |n| {
            let ens = mc_single_density(&net, &site0(), &grid, &small(n)).unwrap();
            let total: f64 = (1..5).map(|k| (0..3).map(|p| ens.standard_error(k)[(p, p)].re).sum::<f64>()).sum();
            total
        };
        let ratio = mean_se(1000) / mean_se(2000);
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn ensemble_is_independent_of_thread_count() {
        let net = triangle(0.38);
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| mc_single_density(&net, &site0(), &grid, &small(300)).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one, run(1));
        assert_eq!(one.base_seed(), 42);
    }

    #[test]
    fn halving_dt_stays_within_statistical_error() {
        let net = triangle(0.38);
        let grid = TimeGrid::uniform(0.0, 4.0, 9).unwrap();
        let (coarse, fine) = mc_single_density_bridged(&net, &site0(), &grid, &small(2000)).unwrap();
        for k in 1..9 {
            let (sc, sf) = (coarse.standard_error(k), fine.standard_error(k));
            for p in 0..3 {
                let combined = (sc[(p, p)].re.powi(2) + sf[(p, p)].re.powi(2)).sqrt();
                let shift = (coarse.mean()[k][(p, p)].re - fine.mean()[k][(p, p)].re).abs();
                assert!(shift < combined, "t = {}, site {p}: {shift} vs {combined}", coarse.times()[k]);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = triangle(0.38);
        let grid = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        let unnormalized = vec![C::new(1.0, 0.0), C::new(1.0, 0.0), czero()];
        assert!(matches!(mc_single_density(&net, &unnormalized, &grid, &small(2)), Err(OracleError::NotNormalized(_))));
        assert_eq!(mc_single_density(&net, &site0(), &grid, &small(0)).unwrap_err(), OracleError::NoTrajectories);
        let same = TwoParticleInput::Profile { xi: InputAmplitudeProfile::single_pair(2, 2, 3).unwrap(), statistics: Statistics::Fermion };
        assert!(matches!(mc_two_density(&net, &same, &grid, &small(2)), Err(OracleError::Dynamics(_))));
    }
}
