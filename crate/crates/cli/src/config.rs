//! Experiment description files.
//!
//! Site indices are 1-based throughout, as in the network section. Unknown
//! keys are rejected so that typos surface as errors with a field path.

use serde::{Deserialize, Serialize};

use qwalk_core::config::NetworkConfig;
use qwalk_core::{CanonicalKind, OracleOptions, SolverOptions, StepMode, StochasticScheme, Statistics, TimeGrid};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
}

impl ConfigError {
    pub(crate) fn field(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Field { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Single,
    Two,
    OracleSingle,
    OracleTwo,
    Compare,
    SteadyState,
}

impl Scenario {
    pub fn runs_master(self) -> bool {
        matches!(self, Self::Single | Self::Two | Self::Compare)
    }

    pub fn runs_oracle(self) -> bool {
        matches!(self, Self::OracleSingle | Self::OracleTwo | Self::Compare)
    }
}

/// One initial state. `label` names its output files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// One particle localized on `site`.
    Site {
        site: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// One particle with explicit amplitudes `[[re, im], ...]`.
    Amplitudes {
        amplitudes: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// Two-particle reference input on `sites = [a, b]`, `a < b`.
    Canonical {
        state: CanonicalKind,
        sites: [usize; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// Two particles from a sparse profile `[[m, n, re, im], ...]`,
    /// (anti)symmetrized according to `statistics`.
    Profile {
        xi: Vec<(usize, usize, f64, f64)>,
        statistics: Statistics,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

impl InitialState {
    pub fn is_two_particle(&self) -> bool {
        matches!(self, Self::Canonical { .. } | Self::Profile { .. })
    }

    pub fn label(&self) -> String {
        let explicit = match self {
            Self::Site { label, .. } | Self::Amplitudes { label, .. } | Self::Canonical { label, .. } | Self::Profile { label, .. } => label,
        };
        if let Some(l) = explicit {
            return l.clone();
        }
        match self {
            Self::Site { site, .. } => format!("site{site}"),
            Self::Amplitudes { .. } => "amplitudes".into(),
            Self::Canonical { state, .. } => state.name().into(),
            Self::Profile { statistics: Statistics::Boson, .. } => "boson-profile".into(),
            Self::Profile { statistics: Statistics::Fermion, .. } => "fermion-profile".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            Self::One(x) => vec![x.clone()],
            Self::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum GridConfig {
    /// `points` equally spaced samples including both ends.
    Uniform { t_start: f64, t_end: f64, points: usize },
    /// Explicit sample times, integrated from `t_start` (default 0).
    Samples {
        #[serde(default)]
        t_start: f64,
        times: Vec<f64>,
    },
}

impl GridConfig {
    pub fn to_grid(&self) -> Result<TimeGrid<f64>, ConfigError> {
        let res = match self {
            Self::Uniform { t_start, t_end, points } => TimeGrid::uniform(*t_start, *t_end, *points),
            Self::Samples { t_start, times } => {
                let end = times.last().copied().unwrap_or(*t_start);
                TimeGrid::new(*t_start, end, times.clone())
            }
        };
        res.map_err(|e| ConfigError::field("grid", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub mode: ModeConfig,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeConfig {
    #[default]
    Fixed,
    Adaptive,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_rel_tol() -> f64 {
    1e-8
}
fn default_abs_tol() -> f64 {
    1e-10
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { dt: default_dt(), mode: ModeConfig::Fixed, rel_tol: default_rel_tol(), abs_tol: default_abs_tol() }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions<f64> {
        let mode = match self.mode {
            ModeConfig::Fixed => StepMode::Fixed,
            ModeConfig::Adaptive => StepMode::Adaptive,
        };
        SolverOptions { dt: self.dt, mode, rel_tol: self.rel_tol, abs_tol: self.abs_tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    #[serde(default)]
    pub scheme: StochasticScheme,
    /// `null` disables the unitarity check.
    #[serde(default = "default_unitarity_tol")]
    pub unitarity_tol: Option<f64>,
}

fn default_n_traj() -> usize {
    10_000
}
fn default_seed() -> u64 {
    42
}
fn default_unitarity_tol() -> Option<f64> {
    Some(1e-2)
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_traj: default_n_traj(),
            dt: default_dt(),
            base_seed: default_seed(),
            scheme: StochasticScheme::Heun,
            unitarity_tol: default_unitarity_tol(),
        }
    }
}

impl OracleConfig {
    pub fn options(&self) -> OracleOptions<f64> {
        OracleOptions {
            n_traj: self.n_traj,
            dt: self.dt,
            base_seed: self.base_seed,
            scheme: self.scheme,
            unitarity_tol: self.unitarity_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Populations,
    Coherences,
    JointProbability,
    BunchingRatio,
    ExchangeCoherence,
    Density,
    DeltaRho,
    Diagnostics,
}

impl Observable {
    pub const ALL: [Observable; 8] = [
        Self::Populations,
        Self::Coherences,
        Self::JointProbability,
        Self::BunchingRatio,
        Self::ExchangeCoherence,
        Self::Density,
        Self::DeltaRho,
        Self::Diagnostics,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default = "all_observables")]
    pub observables: Vec<Observable>,
    /// Times (ps) at which full matrices are written; must be grid times.
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

fn all_observables() -> Vec<Observable> {
    Observable::ALL.to_vec()
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self { observables: all_observables(), snapshots: vec![] }
    }
}

impl OutputsConfig {
    pub fn wants(&self, o: Observable) -> bool {
        self.observables.contains(&o)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    /// Timed repetitions of the master-equation phase; the median is reported.
    #[serde(default = "three")]
    pub master_repeats: usize,
    /// Timed repetitions of the oracle phase.
    #[serde(default = "three")]
    pub oracle_repeats: usize,
}

fn three() -> usize {
    3
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { master_repeats: 3, oracle_repeats: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Free-form notes carried into the summary.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub network: NetworkConfig,
    pub scenario: Scenario,
    pub initial_state: OneOrMany<InitialState>,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default)]
    pub timing: TimingConfig,
}

/// Parses an experiment file, reporting the path of the offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() || path == "." {
            ConfigError::Syntax { line: inner.line(), column: inner.column(), message: inner.to_string() }
        } else {
            ConfigError::field(path, inner.to_string())
        }
    })
}

impl ExperimentConfig {
    /// Cross-field checks that serde cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let spec = self.network.to_spec().map_err(|e| ConfigError::field("network", e.to_string()))?;
        let n = spec.n_sites;
        let grid = self.grid.to_grid()?;
        let states = self.initial_state.to_vec();
        if states.is_empty() {
            return Err(ConfigError::field("initial_state", "at least one initial state is required"));
        }
        let site_ok = |s: usize| (1..=n).contains(&s);
        for (i, st) in states.iter().enumerate() {
            let path = |f: &str| format!("initial_state[{i}].{f}");
            match st {
                InitialState::Site { site, .. } if !site_ok(*site) => {
                    return Err(ConfigError::field(path("site"), format!("site {site} outside 1..={n}")));
                }
                InitialState::Amplitudes { amplitudes, .. } => {
                    if amplitudes.len() != n {
                        return Err(ConfigError::field(path("amplitudes"), format!("expected {n} entries, found {}", amplitudes.len())));
                    }
                    let norm2: f64 = amplitudes.iter().map(|[a, b]| a * a + b * b).sum();
                    if (norm2 - 1.0).abs() > 1e-9 {
                        return Err(ConfigError::field(path("amplitudes"), format!("not normalized (norm² = {norm2})")));
                    }
                }
                InitialState::Canonical { sites: [a, b], .. } if !(site_ok(*a) && site_ok(*b) && a < b) => {
                    return Err(ConfigError::field(path("sites"), format!("need 1 <= a < b <= {n}, got [{a}, {b}]")));
                }
                InitialState::Profile { xi, .. } => {
                    if let Some(k) = xi.iter().position(|&(m, q, _, _)| !site_ok(m) || !site_ok(q)) {
                        return Err(ConfigError::field(format!("initial_state[{i}].xi[{k}]"), format!("site outside 1..={n}")));
                    }
                }
                _ => {}
            }
            let two = st.is_two_particle();
            let wrong = match self.scenario {
                Scenario::Single | Scenario::OracleSingle | Scenario::SteadyState => two,
                Scenario::Two | Scenario::OracleTwo => !two,
                Scenario::Compare => false,
            };
            if wrong {
                return Err(ConfigError::field(
                    format!("initial_state[{i}]"),
                    format!("{} input does not fit scenario {:?}", if two { "two-particle" } else { "single-particle" }, self.scenario),
                ));
            }
        }
        let labels: Vec<String> = states.iter().map(InitialState::label).collect();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(ConfigError::field(format!("initial_state[{i}].label"), format!("duplicate label {l:?}")));
            }
            if l.is_empty() || !l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(ConfigError::field(format!("initial_state[{i}].label"), "labels must be non-empty [A-Za-z0-9_-]"));
            }
        }
        for (k, &t) in self.outputs.snapshots.iter().enumerate() {
            if !grid.sample_times().iter().any(|&s| (s - t).abs() <= 1e-9) {
                return Err(ConfigError::field(format!("outputs.snapshots[{k}]"), format!("{t} ps is not a grid sample time")));
            }
        }
        if !(self.solver.dt > 0.0) {
            return Err(ConfigError::field("solver.dt", "must be positive"));
        }
        if self.scenario.runs_oracle() {
            if self.oracle.n_traj == 0 {
                return Err(ConfigError::field("oracle.n_traj", "must be at least 1"));
            }
            if !(self.oracle.dt > 0.0) {
                return Err(ConfigError::field("oracle.dt", "must be positive"));
            }
        }
        if self.timing.master_repeats == 0 || self.timing.oracle_repeats == 0 {
            return Err(ConfigError::field("timing", "repeat counts must be at least 1"));
        }
        Ok(())
    }
}
