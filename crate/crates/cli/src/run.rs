//! Dispatch from an [`ExperimentConfig`] to the simulation engine.

use std::time::{Duration, Instant};

use serde::Serialize;

use qwalk_core::oracle::{mc_single_density, mc_two_density, TwoParticleInput};
use qwalk_core::single::{evolve_single, steady_state_single, SteadyState, SteadyStateOptions};
use qwalk_core::two::{canonical_two_particle_state, evolve_two, InputAmplitudeProfile, TwoParticleDensity};
use qwalk_core::{
    CMatrix64, DensityMatrix, DynamicsError, Ensemble64, Network64, OracleError, TimeGrid64, C,
};

use crate::config::{ConfigError, ExperimentConfig, InitialState, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Dynamics { context: String, source: DynamicsError },
    #[error("{context}: {source}")]
    Oracle { context: String, source: OracleError },
}

/// Prepared form of one initial state.
#[derive(Debug, Clone)]
pub enum PreparedInput {
    Single { psi: Vec<C<f64>>, rho: DensityMatrix<f64> },
    Two { rho: TwoParticleDensity<f64>, oracle: TwoParticleInput<f64> },
}

impl PreparedInput {
    pub fn n_particles(&self) -> usize {
        match self {
            Self::Single { .. } => 1,
            Self::Two { .. } => 2,
        }
    }
}

/// Wall-clock time of one phase, median over repeats.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseTiming {
    pub label: String,
    pub phase: &'static str,
    pub median_s: f64,
    pub runs_s: Vec<f64>,
}

/// Master-vs-oracle agreement for one case.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    /// Largest `|mean - master|` over all compared elements and times.
    pub max_abs_deviation: f64,
    /// Largest `|mean - master| / SE` over real and imaginary parts.
    pub max_z: f64,
    pub worst_time_ps: f64,
    /// 0-based `(row, column)` of the worst element.
    pub worst_element: (usize, usize),
    pub n_compared: usize,
    pub n_beyond_3se: usize,
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub label: String,
    pub input: PreparedInput,
    pub master: Option<Vec<(f64, CMatrix64)>>,
    pub oracle: Option<Ensemble64>,
    pub steady_state: Option<SteadyState<f64>>,
    pub comparison: Option<Comparison>,
}

/// Everything a run produced, before anything is written to disk.
#[derive(Debug, Clone)]
pub struct RunData {
    pub config: ExperimentConfig,
    pub network: Network64,
    pub grid: TimeGrid64,
    pub cases: Vec<CaseResult>,
    pub timings: Vec<PhaseTiming>,
    pub logical_cores: usize,
}

pub(crate) fn prepare(state: &InitialState, n: usize) -> Result<PreparedInput, RunError> {
    let ctx = |e: DynamicsError| RunError::Dynamics { context: format!("initial state {}", state.label()), source: e };
    let octx = |e: OracleError| RunError::Oracle { context: format!("initial state {}", state.label()), source: e };
    Ok(match state {
        InitialState::Site { site, .. } => {
            let mut psi = vec![C::new(0.0, 0.0); n];
            psi[site - 1] = C::new(1.0, 0.0);
            PreparedInput::Single { psi, rho: DensityMatrix::site(site - 1, n) }
        }
        InitialState::Amplitudes { amplitudes, .. } => {
            let psi: Vec<C<f64>> = amplitudes.iter().map(|&[re, im]| C::new(re, im)).collect();
            let rho = DensityMatrix::pure(&psi).map_err(ctx)?;
            PreparedInput::Single { psi, rho }
        }
        InitialState::Canonical { state, sites: [a, b], .. } => {
            let sites = (a - 1, b - 1);
            PreparedInput::Two {
                rho: canonical_two_particle_state(*state, sites, n).map_err(ctx)?,
                oracle: TwoParticleInput::canonical(*state, sites, n).map_err(octx)?,
            }
        }
        InitialState::Profile { xi, statistics, .. } => {
            let mut m = CMatrix64::zeros(n, n);
            for &(p, q, re, im) in xi {
                m[(p - 1, q - 1)] += C::new(re, im);
            }
            let norm = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let profile = InputAmplitudeProfile::try_new(m.map(|z| z / norm)).map_err(ctx)?;
            let id = CMatrix64::identity(n, n);
            let amp = qwalk_core::two::compose_two_particle_amplitude(&id, &profile, *statistics).map_err(ctx)?;
            PreparedInput::Two {
                rho: TwoParticleDensity::pure(&amp),
                oracle: TwoParticleInput::Profile { xi: profile, statistics: *statistics },
            }
        }
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Runs `f` `repeats` times, returning the last result and the timing.
fn timed<R, E>(label: &str, phase: &'static str, repeats: usize, mut f: impl FnMut() -> Result<R, E>) -> Result<(R, PhaseTiming), E> {
    let mut runs = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        let r = f()?;
        runs.push(Duration::as_secs_f64(&t0.elapsed()));
        last = Some(r);
    }
    let runs_s = runs.clone();
    Ok((last.expect("at least one run"), PhaseTiming { label: label.into(), phase, median_s: median(runs), runs_s }))
}

/// Deviations at or below this are treated as exact agreement.
pub const ROUNDING_FLOOR: f64 = 1e-12;

/// Compares an ensemble with master-equation states sampled on the same grid.
/// Only the upper triangle (including the diagonal) is compared, since both
/// sides are Hermitian.
pub fn compare(master: &[(f64, CMatrix64)], oracle: &Ensemble64) -> Comparison {
    let mut cmp = Comparison {
        max_abs_deviation: 0.0,
        max_z: 0.0,
        worst_time_ps: 0.0,
        worst_element: (0, 0),
        n_compared: 0,
        n_beyond_3se: 0,
    };
    for (k, (t, m)) in master.iter().enumerate() {
        let mean = &oracle.mean()[k];
        let se = oracle.standard_error(k);
        let d = m.nrows();
        for i in 0..d {
            for j in i..d {
                let diff = mean[(i, j)] - m[(i, j)];
                cmp.max_abs_deviation = cmp.max_abs_deviation.max(diff.norm());
                let parts: &[(f64, f64)] =
                    if i == j { &[(diff.re, se[(i, j)].re)] } else { &[(diff.re, se[(i, j)].re), (diff.im, se[(i, j)].im)] };
                for &(dv, s) in parts {
                    // Components fixed by symmetry (e.g. imaginary parts of
                    // exchange coherences) differ only by rounding on both
                    // sides and carry no statistical information.
                    let z = if dv.abs() <= ROUNDING_FLOOR {
                        0.0
                    } else if s > 0.0 {
                        dv.abs() / s
                    } else {
                        f64::INFINITY
                    };
                    cmp.n_compared += 1;
                    if z > 3.0 {
                        cmp.n_beyond_3se += 1;
                    }
                    if z > cmp.max_z {
                        cmp.max_z = z;
                        cmp.worst_time_ps = *t;
                        cmp.worst_element = (i, j);
                    }
                }
            }
        }
    }
    cmp
}

/// Runs the configured scenario for every initial state.
pub fn simulate(cfg: &ExperimentConfig) -> Result<RunData, RunError> {
    cfg.validate()?;
    let spec = cfg.network.to_spec().map_err(|e| ConfigError::field("network", e.to_string()))?;
    let net = spec.validate().map_err(|e| ConfigError::field("network", e.to_string()))?;
    let n = net.n_sites();
    let grid = cfg.grid.to_grid()?;
    let solver = cfg.solver.options();
    let oracle_opts = cfg.oracle.options();
    let mut cases = Vec::new();
    let mut timings = Vec::new();
    for state in cfg.initial_state.to_vec() {
        let label = state.label();
        let input = prepare(&state, n)?;
        let dctx = |phase: &str| {
            let label = label.clone();
            let phase = phase.to_string();
            move |e: DynamicsError| RunError::Dynamics { context: format!("{phase} run for {label}"), source: e }
        };
        let octx = |e: OracleError| RunError::Oracle { context: format!("oracle run for {label}"), source: e };
        let mut case = CaseResult { label: label.clone(), input: input.clone(), master: None, oracle: None, steady_state: None, comparison: None };
        if cfg.scenario == Scenario::SteadyState {
            let PreparedInput::Single { rho, .. } = &input else { unreachable!("validated") };
            let opts = SteadyStateOptions { solver, ..Default::default() };
            let (ss, timing) = timed(&label, "steady-state", cfg.timing.master_repeats, || steady_state_single(&net, rho, &opts)).map_err(dctx("steady-state"))?;
            case.steady_state = Some(ss);
            timings.push(timing);
        }
        if cfg.scenario.runs_master() {
            let (series, timing) = match &input {
                PreparedInput::Single { rho, .. } => timed(&label, "master", cfg.timing.master_repeats, || {
                    evolve_single(&net, rho, &grid, &solver).map(|v| v.into_iter().map(|(t, r)| (t, r.into_matrix())).collect::<Vec<_>>())
                }),
                PreparedInput::Two { rho, .. } => timed(&label, "master", cfg.timing.master_repeats, || {
                    evolve_two(&net, rho, &grid, &solver).map(|v| v.into_iter().map(|(t, r)| (t, r.into_matrix())).collect::<Vec<_>>())
                }),
            }
            .map_err(dctx("master"))?;
            case.master = Some(series);
            timings.push(timing);
        }
        if cfg.scenario.runs_oracle() {
            let (ens, timing) = match &input {
                PreparedInput::Single { psi, .. } => {
                    timed(&label, "oracle", cfg.timing.oracle_repeats, || mc_single_density(&net, psi, &grid, &oracle_opts))
                }
                PreparedInput::Two { oracle, .. } => {
                    timed(&label, "oracle", cfg.timing.oracle_repeats, || mc_two_density(&net, oracle, &grid, &oracle_opts))
                }
            }
            .map_err(octx)?;
            case.oracle = Some(ens);
            timings.push(timing);
        }
        if let (Some(m), Some(o)) = (&case.master, &case.oracle) {
            case.comparison = Some(compare(m, o));
        }
        cases.push(case);
    }
    Ok(RunData {
        config: cfg.clone(),
        network: net,
        grid,
        cases,
        timings,
        logical_cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
    })
}
