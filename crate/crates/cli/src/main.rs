//! `mpcard`: schedules multiport converter transfers over a mission
//! profile and reports electrical cardinality.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod linearize;
mod plot;
mod run;
mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mpcard_core::mission::{electrical_cardinality, read_mission_csv, EC_RELATIVE_TOLERANCE};
use mpcard_core::study::{load_config, RunConfig, Study};
use mpcard_core::CardinalityLimit;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "mpcard", version, about = "Cardinality-constrained power routing for multiport converters")]
struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Schedule the mission profile for every cardinality limit.
    Run(RunArgs),
    /// Check the linearization and the solvers against reference engines.
    Verify(VerifyArgs),
    /// Dump the linearized grid as CSV.
    Linearize(StudyArgs),
    /// Recompute electrical cardinality from a mission CSV.
    Ec(EcArgs),
}

/// Options shared by the commands that load a study. Flags override the
/// matching configuration fields; flag paths are relative to the working
/// directory.
#[derive(Args, Debug, Clone)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Network JSON, or `builtin:ieee33` / `builtin:two_feeder_5bus`.
    #[arg(long)]
    network: Option<String>,
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Comma-separated limits, e.g. `1,2,unconstrained`; empty runs nothing.
    #[arg(long, value_name = "LIST")]
    cardinality: Option<String>,
    #[arg(long = "s-total", value_name = "KVA")]
    s_total: Option<f64>,
    #[arg(long = "loss-coeff")]
    loss_coeff: Option<f64>,
    #[arg(long)]
    vmin: Option<f64>,
    #[arg(long)]
    vmax: Option<f64>,
    /// Seed of the synthetic profiles.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "mip-rel-gap")]
    mip_rel_gap: Option<f64>,
    #[arg(long = "mip-abs-gap")]
    mip_abs_gap: Option<f64>,
    #[arg(long = "node-limit")]
    node_limit: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Write every timestep program as JSON.
    #[arg(long = "dump-ir")]
    dump_ir: bool,
    /// Write per-iteration conic solver statistics.
    #[arg(long = "solver-trace")]
    solver_trace: bool,
    /// Write the branch-and-bound node log.
    #[arg(long = "mip-trace")]
    mip_trace: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Check a dumped linearization instead of a freshly computed one.
    #[arg(long, value_name = "DIR")]
    linearization: Option<PathBuf>,
    /// Random injections for the voltage-change check.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Timesteps sampled for the solver cross-checks.
    #[arg(long, default_value_t = 4)]
    timesteps: usize,
}

#[derive(Args, Debug)]
struct EcArgs {
    /// Mission CSV written by `run`.
    input: PathBuf,
    #[arg(long = "s-total", value_name = "KVA")]
    s_total: f64,
}

/// A loaded study plus the resolved output directory.
struct Loaded {
    config: RunConfig,
    study: Study,
    out: PathBuf,
}

fn absolute(p: &Path) -> Result<String> {
    let p = if p.is_absolute() { p.to_path_buf() } else { std::env::current_dir()?.join(p) };
    Ok(p.to_string_lossy().into_owned())
}

fn parse_cardinality(list: &str) -> mpcard_core::Result<Vec<CardinalityLimit>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

impl StudyArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(n) = &self.network {
            cfg.network = if n.starts_with("builtin:") { n.clone() } else { absolute(Path::new(n))? };
        }
        if let Some(p) = &self.profiles {
            cfg.profiles = Some(absolute(p)?);
        }
        if let Some(list) = &self.cardinality {
            cfg.cardinality = parse_cardinality(list)?;
        }
        if let Some(s) = self.s_total {
            cfg.converter.s_total_kva = s;
        }
        if let Some(k) = self.loss_coeff {
            cfg.converter.loss_coeff = k;
        }
        if let Some(v) = self.vmin {
            cfg.v_min = v;
        }
        if let Some(v) = self.vmax {
            cfg.v_max = v;
        }
        if let Some(s) = self.seed {
            cfg.synthetic.seed = s;
        }
        if let Some(g) = self.mip_rel_gap {
            cfg.mip.rel_gap = g;
        }
        if let Some(g) = self.mip_abs_gap {
            cfg.mip.abs_gap = g;
        }
        if let Some(n) = self.node_limit {
            cfg.mip.node_limit = n;
        }
        Ok(())
    }

    fn load(&self, default_out: &str) -> Result<Loaded> {
        let (mut config, dir) = load_config(&self.config)?;
        self.apply(&mut config)?;
        let study = Study::prepare(&config, &dir)?;
        let out = match (&self.out, &config.output_dir) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => dir.join(o),
            (None, None) => PathBuf::from(default_out),
        };
        Ok(Loaded { config, study, out })
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .context("building the worker pool")
    }
}

#[derive(Serialize)]
struct EcReport {
    eps_kva: f64,
    mec: usize,
    ec: Vec<usize>,
    /// Rows whose recorded EC differs from the recomputed one.
    mismatched_rows: Vec<usize>,
}

fn ec(args: &EcArgs) -> Result<()> {
    if !(args.s_total > 0.0) {
        return Err(mpcard_core::Error::Validation("--s-total must be positive".into()).into());
    }
    let file = std::fs::File::open(&args.input)
        .map_err(|e| mpcard_core::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", args.input.display()))))?;
    let csv = read_mission_csv(file)?;
    let eps = EC_RELATIVE_TOLERANCE * args.s_total;
    let ec = csv.s_mp.iter().map(|row| electrical_cardinality(row, eps)).collect::<mpcard_core::Result<Vec<_>>>()?;
    let report = EcReport {
        eps_kva: eps,
        mec: ec.iter().copied().max().unwrap_or(0),
        mismatched_rows: (0..ec.len()).filter(|&t| ec[t] != csv.ec[t]).collect(),
        ec,
    };
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match std::io::stdout().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

/// Input problems exit with 2; failed checks with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<mpcard_core::Error>() {
        Some(mpcard_core::Error::NonConvergence { .. }) => 1,
        _ => 2,
    }
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Run(a) => {
            let loaded = a.study.load("out")?;
            let opts = run::Options {
                dump_ir: a.dump_ir,
                solver_trace: a.solver_trace,
                mip_trace: a.mip_trace,
            };
            a.study.pool()?.install(|| run::execute(&loaded, &opts))?;
            Ok(true)
        }
        Command::Verify(a) => {
            let loaded = a.study.load("verify")?;
            let opts = verify::Options {
                linearization: a.linearization.clone(),
                samples: a.samples,
                timesteps: a.timesteps,
                out: a.study.out.clone(),
            };
            a.study.pool()?.install(|| verify::execute(&loaded, &opts))
        }
        Command::Linearize(a) => {
            let loaded = a.load("linearization")?;
            linearize::write_dir(&loaded.study.grid, &loaded.study.converter.pcc_buses, &loaded.out)?;
            eprintln!("linearization written to {}", loaded.out.display());
            Ok(true)
        }
        Command::Ec(a) => {
            ec(a)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
