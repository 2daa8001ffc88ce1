//! Data files written by a run.
//!
//! Series are CSV with a `time_ps` column first and complex values split
//! into `_re`/`_im` columns. Matrices are JSON documents that state their
//! own flattening convention. Timings go to `timings.json` only, so every
//! other file is identical across reruns of the same config.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use qwalk_core::observables::{bunching_ratio, delta_rho, joint_probability_raw, validate_density};
use qwalk_core::CMatrix64;

use crate::config::{Observable, OutputsConfig, Scenario};
use crate::run::{CaseResult, Comparison, PhaseTiming, RunData};

const SINGLE_CONVENTION: &str = "row-major: entry k is element (k / dim, k % dim); site indices 0-based";
const PAIR_CONVENTION: &str =
    "row-major: entry k is element (k / dim, k % dim); row and column are pair indices p*N+q with 0-based sites p, q";

#[derive(Serialize)]
struct MatrixDoc<'a> {
    kind: &'a str,
    label: &'a str,
    source: &'a str,
    time_ps: f64,
    n_sites: usize,
    particles: usize,
    dim: usize,
    convention: &'a str,
    re: Vec<f64>,
    im: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    se_re: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    se_im: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct RealMatrixDoc<'a> {
    kind: &'a str,
    label: &'a str,
    time_ps: f64,
    n_sites: usize,
    particles: usize,
    dim: usize,
    convention: &'a str,
    definition: &'a str,
    values: Vec<f64>,
    max: f64,
}

#[derive(Serialize)]
struct SteadyDoc<'a> {
    label: &'a str,
    converged_at_ps: f64,
    route_deviation: f64,
    populations: Vec<f64>,
    convention: &'a str,
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Serialize)]
struct CaseSummary<'a> {
    label: &'a str,
    particles: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<&'a Comparison>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    delta_rho_max: Vec<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_time_ps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_populations: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_bunching_ratio: Option<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    name: &'a str,
    scenario: Scenario,
    notes: &'a [String],
    n_sites: usize,
    base_seed: Option<u64>,
    n_traj: Option<usize>,
    cases: Vec<CaseSummary<'a>>,
}

#[derive(Serialize)]
struct TimingDoc<'a> {
    name: &'a str,
    logical_cores: usize,
    rayon_threads: usize,
    method: &'a str,
    phases: &'a [PhaseTiming],
    oracle_over_master: Vec<(String, f64)>,
}

fn split(m: &CMatrix64) -> (Vec<f64>, Vec<f64>) {
    let d = m.nrows();
    let mut re = Vec::with_capacity(d * d);
    let mut im = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            re.push(m[(i, j)].re);
            im.push(m[(i, j)].im);
        }
    }
    (re, im)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

fn time_tag(t: f64) -> String {
    format!("t{t:.3}")
}

/// Column names and values of one sample.
fn single_row(rho: &CMatrix64, outputs: &OutputsConfig, names: &mut Vec<String>, vals: &mut Vec<f64>) {
    let n = rho.nrows();
    if outputs.wants(Observable::Populations) {
        for p in 0..n {
            names.push(format!("pop_{}", p + 1));
            vals.push(rho[(p, p)].re);
        }
    }
    if outputs.wants(Observable::Coherences) {
        for a in 0..n {
            for b in a + 1..n {
                names.push(format!("coh_{}_{}_re", a + 1, b + 1));
                vals.push(rho[(a, b)].re);
                names.push(format!("coh_{}_{}_im", a + 1, b + 1));
                vals.push(rho[(a, b)].im);
            }
        }
    }
}

fn two_row(n: usize, rho: &CMatrix64, outputs: &OutputsConfig, names: &mut Vec<String>, vals: &mut Vec<f64>) {
    let g = joint_probability_raw(n, rho);
    if outputs.wants(Observable::BunchingRatio) {
        names.push("bunching_ratio".into());
        vals.push(bunching_ratio(&g));
    }
    if outputs.wants(Observable::JointProbability) {
        for p in 0..n {
            for q in 0..n {
                names.push(format!("joint_{}_{}", p + 1, q + 1));
                vals.push(g.get(p, q));
            }
        }
    }
    if outputs.wants(Observable::ExchangeCoherence) {
        for p in 0..n {
            for q in p + 1..n {
                names.push(format!("exchange_{}_{}_abs", p + 1, q + 1));
                vals.push(rho[(p * n + q, q * n + p)].norm());
            }
        }
    }
}

fn diagnostics_row(rho: &CMatrix64, names: &mut Vec<String>, vals: &mut Vec<f64>) {
    let d = validate_density(rho);
    names.extend(["trace_deviation", "hermiticity_residual", "min_eigenvalue", "purity"].map(String::from));
    vals.extend([d.trace_deviation, d.hermiticity_residual, d.min_eigenvalue, d.purity]);
}

fn row(particles: usize, n: usize, rho: &CMatrix64, outputs: &OutputsConfig) -> (Vec<String>, Vec<f64>) {
    let (mut names, mut vals) = (vec![], vec![]);
    if particles == 1 {
        single_row(rho, outputs, &mut names, &mut vals);
    } else {
        two_row(n, rho, outputs, &mut names, &mut vals);
    }
    (names, vals)
}

/// Shortest round-trip form, in exponent notation for very small or large
/// magnitudes.
fn num(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e15) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[(f64, Vec<f64>)]) -> io::Result<()> {
    let mut s = String::from("time_ps");
    for h in header {
        s.push(',');
        s.push_str(h);
    }
    s.push('\n');
    for (t, vals) in rows {
        s.push_str(&num(*t));
        for v in vals {
            s.push(',');
            s.push_str(&num(*v));
        }
        s.push('\n');
    }
    fs::write(path, s)
}

fn master_series(case: &CaseResult, n: usize, outputs: &OutputsConfig) -> (Vec<String>, Vec<(f64, Vec<f64>)>) {
    let particles = case.input.n_particles();
    let mut header = vec![];
    let mut rows = vec![];
    for (t, rho) in case.master.as_deref().unwrap_or_default() {
        let (mut names, mut vals) = row(particles, n, rho, outputs);
        if outputs.wants(Observable::Diagnostics) {
            diagnostics_row(rho, &mut names, &mut vals);
        }
        header = names;
        rows.push((*t, vals));
    }
    (header, rows)
}

/// Oracle series: every value column is followed by its standard error,
/// computed by pushing the per-element errors through the same columns.
fn oracle_series(case: &CaseResult, n: usize, outputs: &OutputsConfig) -> (Vec<String>, Vec<(f64, Vec<f64>)>) {
    let particles = case.input.n_particles();
    let ens = case.oracle.as_ref().expect("oracle data");
    let mut header = vec![];
    let mut rows = vec![];
    let outputs = OutputsConfig {
        observables: outputs
            .observables
            .iter()
            .copied()
            .filter(|o| matches!(o, Observable::Populations | Observable::Coherences | Observable::JointProbability))
            .collect(),
        snapshots: vec![],
    };
    for (k, &t) in ens.times().iter().enumerate() {
        let (names, vals) = row(particles, n, &ens.mean()[k], &outputs);
        let se = ens.standard_error(k);
        // Each column is a real or imaginary part of one element, so its
        // error is the matching component of `se`.
        let (_, se_re) = row(particles, n, &se.map(|z| qwalk_core::C::new(z.re, z.re)), &outputs);
        let (_, se_im) = row(particles, n, &se.map(|z| qwalk_core::C::new(z.im, z.im)), &outputs);
        let mut h = vec![];
        let mut v = vec![];
        for (i, name) in names.iter().enumerate() {
            h.push(name.clone());
            v.push(vals[i]);
            h.push(format!("{name}_se"));
            v.push(if name.ends_with("_im") { se_im[i] } else { se_re[i] });
        }
        header = h;
        rows.push((t, v));
    }
    (header, rows)
}

fn snapshot_index(times: &[f64], t: f64) -> Option<usize> {
    times.iter().position(|&s| (s - t).abs() <= 1e-9)
}

/// Writes all data files of `data` into `dir`, returning their paths.
pub fn write_outputs(data: &RunData, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let cfg = &data.config;
    let n = data.network.n_sites();
    let outputs = &cfg.outputs;
    let mut files = vec![];
    let mut summaries = vec![];
    for case in &data.cases {
        let particles = case.input.n_particles();
        let convention = if particles == 1 { SINGLE_CONVENTION } else { PAIR_CONVENTION };
        let label = case.label.as_str();
        let mut summary = CaseSummary {
            label,
            particles,
            comparison: case.comparison.as_ref(),
            delta_rho_max: vec![],
            final_time_ps: None,
            final_populations: None,
            final_bunching_ratio: None,
        };
        if let Some(master) = &case.master {
            let (header, rows) = master_series(case, n, outputs);
            let path = dir.join(format!("{label}_master_series.csv"));
            write_csv(&path, &header, &rows)?;
            files.push(path);
            if let Some((t, rho)) = master.last() {
                summary.final_time_ps = Some(*t);
                if particles == 1 {
                    summary.final_populations = Some((0..n).map(|p| rho[(p, p)].re).collect());
                } else {
                    summary.final_bunching_ratio = Some(bunching_ratio(&joint_probability_raw(n, rho)));
                }
            }
        }
        if case.oracle.is_some() {
            let (header, rows) = oracle_series(case, n, outputs);
            let path = dir.join(format!("{label}_oracle_series.csv"));
            write_csv(&path, &header, &rows)?;
            files.push(path);
        }
        let times = data.grid.sample_times();
        for &t in &outputs.snapshots {
            let Some(k) = snapshot_index(times, t) else { continue };
            let t = times[k];
            let mut doc = |source: &str, m: &CMatrix64, se: Option<CMatrix64>| -> io::Result<()> {
                let (re, im) = split(m);
                let (se_re, se_im) = match se {
                    Some(s) => {
                        let (a, b) = split(&s);
                        (Some(a), Some(b))
                    }
                    None => (None, None),
                };
                let path = dir.join(format!("{label}_{source}_density_{}.json", time_tag(t)));
                let d = MatrixDoc { kind: "density", label, source, time_ps: t, n_sites: n, particles, dim: m.nrows(), convention, re, im, se_re, se_im };
                write_json(&path, &d)?;
                files.push(path);
                Ok(())
            };
            if outputs.wants(Observable::Density) {
                if let Some(master) = &case.master {
                    doc("master", &master[k].1, None)?;
                }
                if let Some(ens) = &case.oracle {
                    doc("oracle", &ens.mean()[k], Some(ens.standard_error(k)))?;
                }
            }
            if let (true, Some(master), Some(ens)) = (outputs.wants(Observable::DeltaRho), &case.master, &case.oracle) {
                let dr = delta_rho(&master[k].1, &ens.mean()[k]).expect("same shape");
                let max = dr.iter().copied().fold(0.0, f64::max);
                summary.delta_rho_max.push((t, max));
                let d = dr.nrows();
                let values = (0..d * d).map(|i| dr[(i / d, i % d)]).collect();
                let path = dir.join(format!("{label}_delta_rho_{}.json", time_tag(t)));
                let doc = RealMatrixDoc {
                    kind: "delta_rho",
                    label,
                    time_ps: t,
                    n_sites: n,
                    particles,
                    dim: d,
                    convention,
                    definition: "| |master| - |oracle mean| | element-wise",
                    values,
                    max,
                };
                write_json(&path, &doc)?;
                files.push(path);
            }
        }
        if let Some(ss) = &case.steady_state {
            let (re, im) = split(ss.state.matrix());
            let doc = SteadyDoc {
                label,
                converged_at_ps: ss.converged_at,
                route_deviation: ss.route_deviation,
                populations: (0..n).map(|p| ss.state.matrix()[(p, p)].re).collect(),
                convention: SINGLE_CONVENTION,
                re,
                im,
            };
            let path = dir.join(format!("{label}_steady_state.json"));
            write_json(&path, &doc)?;
            files.push(path);
        }
        summaries.push(summary);
    }
    let oracle = cfg.scenario.runs_oracle();
    let summary = Summary {
        name: &cfg.name,
        scenario: cfg.scenario,
        notes: &cfg.notes,
        n_sites: n,
        base_seed: oracle.then_some(cfg.oracle.base_seed),
        n_traj: oracle.then_some(cfg.oracle.n_traj),
        cases: summaries,
    };
    let path = dir.join("summary.json");
    write_json(&path, &summary)?;
    files.push(path);

    let ratios = data
        .cases
        .iter()
        .filter_map(|c| {
            let find = |phase: &str| data.timings.iter().find(|p| p.label == c.label && p.phase == phase).map(|p| p.median_s);
            Some((c.label.clone(), find("oracle")? / find("master")?))
        })
        .collect();
    let timing = TimingDoc {
        name: &cfg.name,
        logical_cores: data.logical_cores,
        rayon_threads: rayon::current_num_threads(),
        method: "wall clock around the integration phase only, excluding I/O; median over repeats",
        phases: &data.timings,
        oracle_over_master: ratios,
    };
    let path = dir.join("timings.json");
    write_json(&path, &timing)?;
    files.push(path);
    Ok(files)
}
