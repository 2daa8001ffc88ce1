use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use qwalk_cli::{parse_config, preset, run_experiment, ExperimentConfig, OUT_DIR_ENV, PRESET_NAMES};

/// Noise-averaged quantum walks: master equations and Monte-Carlo oracle.
#[derive(Parser)]
#[command(name = "qwalk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a bundled experiment (fig2, fig3, appendixB).
    Preset {
        name: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check an experiment file without running it.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Output directory [default: $QWALK_OUT_DIR, else ./qwalk-out/<name>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Oracle base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the oracle (default: all logical cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Oracle time step, ps.
    #[arg(long)]
    dt: Option<f64>,
    /// Number of oracle trajectories.
    #[arg(long = "n-traj")]
    n_traj: Option<usize>,
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("parsing {}", path.display()))
}

fn execute(mut cfg: ExperimentConfig, args: RunArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        cfg.oracle.base_seed = seed;
    }
    if let Some(dt) = args.dt {
        cfg.oracle.dt = dt;
    }
    if let Some(n) = args.n_traj {
        cfg.oracle.n_traj = n;
    }
    if let Some(threads) = args.threads {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring worker threads")?;
    }
    let out = args
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("qwalk-out").join(&cfg.name));
    let report = run_experiment(&cfg, &out).with_context(|| format!("experiment {}", cfg.name))?;
    for case in &report.data.cases {
        if let Some(c) = &case.comparison {
            println!(
                "{}: max |oracle - master| = {:.3e}, max z = {:.2} ({} of {} beyond 3 SE)",
                case.label, c.max_abs_deviation, c.max_z, c.n_beyond_3se, c.n_compared
            );
        }
    }
    for t in &report.data.timings {
        println!("{} {}: {:.4} s", t.label, t.phase, t.median_s);
    }
    println!("wrote {} files to {}", report.files.len(), report.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, run } => load(&config).and_then(|cfg| execute(cfg, run)),
        Command::Preset { name, run } => preset(&name)
            .with_context(|| format!("available presets: {}", PRESET_NAMES.join(", ")))
            .and_then(|cfg| execute(cfg, run)),
        Command::Validate { config } => load(&config).and_then(|cfg| {
            cfg.validate()?;
            println!("{}: ok ({:?}, {} initial state(s))", config.display(), cfg.scenario, cfg.initial_state.to_vec().len());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
