use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use qcycle::config::RunConfig;
use qcycle::dynamics::Snapshot;
use qcycle::io::{emit_plots, error_row, manifest_row, run_point, write_bundle, write_manifest_file, RunOutcome};
use qcycle::model::validate_assumptions;
use qcycle::resonances::{resonance_table, Convention};

/// Exit status when a run finished but did not reach the periodic regime.
const EXIT_NOT_CONVERGED: u8 = 2;
/// Exit status when a run violated a numerical invariant.
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "qcycle", version, about = "Driven two-level system between free-fermion reservoirs")]
struct Cli {
    /// Worker threads for sweeps and the propagation kernels (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Accepted for scripts; every computation is deterministic and uses no random numbers.
    #[arg(long, global = true)]
    seedless: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a config, resolve every sweep point and check the model assumptions.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a single point and write its artifact bundle.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of cycles.
        #[arg(long)]
        cycles: Option<usize>,
        /// Continue from a snapshot written by an earlier run of the same model.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run every point of the sweep axes and write a manifest.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// Tabulate the second-order Floquet resonances.
    Resonances {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "c-liouvillean")]
        convention: ConventionArg,
        #[arg(long, default_value_t = -2, allow_hyphen_values = true)]
        k_min: i32,
        #[arg(long, default_value_t = 2, allow_hyphen_values = true)]
        k_max: i32,
    },
    /// Write plot-ready CSV files from a run directory or a sweep manifest.
    Plots {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ConventionArg {
    CLiouvillean,
    Standard,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Validate { config } => validate(&config),
        Command::Run { config, out, cycles, resume } => run(&config, &out, cycles, resume.as_deref()),
        Command::Sweep { config, out, cycles } => sweep(&config, &out, cycles),
        Command::Resonances { config, out, convention, k_min, k_max } => {
            resonances(&config, out.as_deref(), convention, k_min, k_max)
        }
        Command::Plots { input, out } => {
            for p in emit_plots(&input, &out)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}

fn load(path: &Path, cycles: Option<usize>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(n) = cycles {
        cfg = cfg.with_cycles(n);
    }
    Ok(cfg)
}

fn validate(path: &Path) -> Result<u8> {
    let cfg = load(path, None)?;
    let mut failed = false;
    for (k, c) in cfg.expand()?.iter().enumerate() {
        let model = c.model().with_context(|| format!("point {k}"))?;
        let report = validate_assumptions(&model);
        println!("point {k}: hash {} g {:.6e}", c.content_hash(), model.coupling);
        println!("{}", serde_json::to_string_pretty(&report)?);
        if !report.all_passed() {
            failed = true;
        } else {
            c.resolve(k).with_context(|| format!("point {k}"))?;
        }
    }
    if failed {
        bail!("model assumptions violated");
    }
    Ok(0)
}

fn status(outcome: &RunOutcome) -> u8 {
    if !outcome.report.invariants.passed() {
        EXIT_INVARIANT
    } else if !outcome.report.converged() {
        EXIT_NOT_CONVERGED
    } else {
        0
    }
}

fn summary(outcome: &RunOutcome) -> String {
    let r = &outcome.report;
    let mut s = format!("point {} {}: ", r.point, &r.config_hash[..12]);
    match r.convergence.n_star() {
        Some(n) => s += &format!("converged at n*={n}"),
        None => s += "not converged",
    }
    if let Some(e) = r.entropy {
        s += &format!(", ΔEnt+ = {:.6e} ± {:.1e} (noise {:.1e})", e.mean, e.spread, e.noise_floor);
    }
    if let Some(e) = &r.engine {
        s += &format!(", {}", e.regime.as_str());
        if let Some(eta) = e.eta {
            s += &format!(" η = {eta:.4} (Carnot {:.4})", e.eta_carnot);
        }
    }
    if !r.invariants.passed() {
        s += ", INVARIANT FAILURE";
    }
    s
}

fn run(path: &Path, out: &Path, cycles: Option<usize>, resume: Option<&Path>) -> Result<u8> {
    let cfg = load(path, cycles)?;
    if !cfg.sweep.is_empty() {
        bail!("config has sweep axes; use `qcycle sweep`");
    }
    let point = cfg.resolve(0)?;
    let snapshot = resume.map(Snapshot::load).transpose().context("reading snapshot")?;
    let outcome = run_point(&point, snapshot.as_ref())?;
    write_bundle(out, &outcome)?;
    println!("{}", summary(&outcome));
    Ok(status(&outcome))
}

fn sweep(path: &Path, out: &Path, cycles: Option<usize>) -> Result<u8> {
    let cfg = load(path, cycles)?;
    let points = cfg.points()?;
    std::fs::create_dir_all(out)?;
    let results: Vec<_> = points
        .into_par_iter()
        .enumerate()
        .map(|(k, (c, p))| {
            let outcome = p.and_then(|p| {
                let o = run_point(&p, None)?;
                write_bundle(&out.join(format!("point-{k:04}")), &o)?;
                Ok(o)
            });
            (k, c, outcome)
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut code = 0;
    for (k, c, outcome) in &results {
        match outcome {
            Ok(o) => {
                println!("{}", summary(o));
                code = code.max(status(o));
                rows.push(manifest_row(o));
            }
            Err(e) => {
                println!("point {k}: error: {e}");
                code = code.max(EXIT_NOT_CONVERGED);
                rows.push(error_row(*k, c, e));
            }
        }
    }
    write_manifest_file(&out.join("manifest.csv"), &rows)?;
    println!("{}", out.join("manifest.csv").display());
    Ok(code)
}

fn resonances(path: &Path, out: Option<&Path>, convention: ConventionArg, k_min: i32, k_max: i32) -> Result<u8> {
    let cfg = load(path, None)?;
    let convention = match convention {
        ConventionArg::CLiouvillean => Convention::CLiouvillean,
        ConventionArg::Standard => Convention::Standard,
    };
    let configs = cfg.expand()?;
    let single = configs.len() == 1;
    for (k, c) in configs.iter().enumerate() {
        let model = c.model()?;
        let table = resonance_table(&model, model.coupling, convention, k_min, k_max)?;
        match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let stem = if single { "resonances".to_string() } else { format!("resonances-{k:04}") };
                table.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
                std::fs::write(dir.join(format!("{stem}.json")), table.to_json()?)?;
            }
            None => table.write_csv(std::io::stdout().lock())?,
        }
    }
    Ok(0)
}
