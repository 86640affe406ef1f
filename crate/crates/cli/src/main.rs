use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sel_core::harness::run::{initial_data, save_grid_snapshot};
use sel_core::harness::{
    run_ensemble, run_single, run_verify, EnsembleOutcome, EnsembleSpec, Experiment, RunConfig, SolverChoice, Suite,
    VerifyOptions,
};
use sel_core::{KernelSource, KernelTable, Measure};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "sel",
    version,
    about = "Stochastic Euler vortex simulations on the flat torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One member, written directly into the output directory.
    Simulate(RunArgs),
    /// Seeded ensemble with per-member outputs and reduced summaries.
    Ensemble {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 16)]
        members: usize,
    },
    /// Property checks: noise structure, kernel identities, nonlinear
    /// oracle and the a priori bounds on a canned run.
    Verify {
        /// Suites to run; all of them when omitted.
        suites: Vec<Suite>,
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sel-verify")]
        out: PathBuf,
    },
    /// Build a kernel table and write it, or inspect a saved one.
    KernelTable {
        #[command(subcommand)]
        action: TableAction,
    },
    /// Write the initial datum a config describes, without stepping.
    InitPreview {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        solver: Option<SolverChoice>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults to `both` when `spectral.enabled`, else `particle`.
    #[arg(long)]
    solver: Option<SolverChoice>,
    /// Defaults to `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TableAction {
    Emit {
        /// Take `kernel.resolution` and `kernel.cutoff` from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        cutoff: Option<usize>,
        #[arg(long, default_value = "kernel.sekt")]
        out: PathBuf,
    },
    Load {
        path: PathBuf,
    },
}

/// Bad input from the user, reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    if !path.is_file() {
        return Err(Usage(format!("config file not found: {}", path.display())).into());
    }
    RunConfig::load(path).map_err(|e| Usage(format!("{}: {e}", path.display())).into())
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("SEL_THREADS") else {
        return Ok(());
    };
    let threads: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return Err(Usage(format!("SEL_THREADS must be a positive integer, got `{raw}`")).into()),
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn print_outcome(outcome: &EnsembleOutcome, out: &Path) -> bool {
    for r in &outcome.reports {
        let verdict = if r.pass() { "pass" } else { "FAIL" };
        match r.first_failure() {
            Some(row) => println!(
                "{verdict} {} (first failure at t = {}, margin {:.3e})",
                r.check, row.time, row.margin
            ),
            None => println!("{verdict} {}", r.check),
        }
    }
    for s in &outcome.skipped {
        println!("skip {s}");
    }
    for (m, e) in &outcome.failures {
        println!("FAIL member {m}: {e}");
    }
    println!("report: {}", out.join("report.csv").display());
    outcome.pass()
}

fn default_solver(cfg: &RunConfig) -> SolverChoice {
    if cfg.spectral.enabled {
        SolverChoice::Both
    } else {
        SolverChoice::Particle
    }
}

fn experiment(run: &RunArgs) -> anyhow::Result<(Experiment, PathBuf)> {
    let mut cfg = load_config(run.config.as_deref())?;
    if let Some(seed) = run.seed {
        cfg.sim.seed = seed;
    }
    let out = run.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let solver = run.solver.unwrap_or_else(|| default_solver(&cfg));
    Ok((Experiment::new(cfg, solver)?, out))
}

fn simulate(run: &RunArgs) -> anyhow::Result<bool> {
    let (exp, out) = experiment(run)?;
    let outcome = run_single(&exp, exp.config().sim.seed, Some(&out))?;
    Ok(print_outcome(&outcome, &out))
}

fn ensemble(run: &RunArgs, members: usize) -> anyhow::Result<bool> {
    if members == 0 {
        return Err(Usage("--members must be at least 1".into()).into());
    }
    let (exp, out) = experiment(run)?;
    let spec = EnsembleSpec {
        members,
        base_seed: exp.config().sim.seed,
        solver: exp.solver(),
    };
    let outcome = run_ensemble(&exp, &spec, Some(&out))?;
    Ok(print_outcome(&outcome, &out))
}

fn verify(suites: &[Suite], quick: bool, seed: u64, out: &Path) -> anyhow::Result<bool> {
    let suites = if suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        suites.to_vec()
    };
    let outcome = run_verify(&suites, VerifyOptions { quick, seed }, out)?;
    for row in &outcome.rows {
        println!(
            "{} {}/{} {} = {:.3e} (tolerance {:.1e})",
            if row.pass { "pass" } else { "FAIL" },
            row.suite,
            row.case,
            row.metric,
            row.value,
            row.tolerance
        );
    }
    println!("report: {}", outcome.report.display());
    Ok(outcome.pass())
}

fn kernel_table(action: &TableAction) -> anyhow::Result<bool> {
    match action {
        TableAction::Emit {
            config,
            resolution,
            cutoff,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let table = KernelTable::build(
                resolution.unwrap_or(cfg.kernel.resolution),
                cutoff.unwrap_or(cfg.kernel.cutoff),
            )?;
            table.save(out)?;
            println!(
                "wrote {} ({}² nodes, cutoff {})",
                out.display(),
                table.resolution(),
                table.cutoff().unwrap_or(0)
            );
        }
        TableAction::Load { path } => {
            if !path.is_file() {
                return Err(Usage(format!("kernel table not found: {}", path.display())).into());
            }
            let table = KernelTable::load(path).with_context(|| format!("reading {}", path.display()))?;
            let peak = table.values().iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
            println!(
                "{}",
                json!({
                    "resolution": table.resolution(),
                    "cutoff": table.cutoff(),
                    "spacing": table.spacing(),
                    "max_abs": peak,
                })
            );
        }
    }
    Ok(true)
}

fn init_preview(config: Option<&Path>, solver: Option<SolverChoice>, out: Option<&Path>) -> anyhow::Result<bool> {
    let cfg = load_config(config)?;
    let solver = solver.unwrap_or_else(|| default_solver(&cfg));
    let out = out.map_or_else(|| Path::new(&cfg.output.dir).join("init"), Path::to_path_buf);
    let out = out.as_path();
    let init = initial_data(&cfg, solver)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mu = &init.particles;
    if solver.particles() {
        mu.save_jsonl(out.join("init.jsonl"), json!({ "t": 0.0, "step": 0 }))?;
    }
    let mut summary = json!({
        "kind": cfg.init.kind,
        "atoms": mu.len(),
        "mass": mu.mass(),
    });
    if let Some(field) = &init.grid {
        save_grid_snapshot(out, "init_grid", field, 0.0, 0)?;
        summary["grid"] = json!({
            "resolution": field.resolution(),
            "mass": field.mass(),
            "min": field.min(),
            "max": field.max(),
        });
    }
    println!("{summary}");
    Ok(true)
}

fn dispatch(cli: &Cli) -> anyhow::Result<bool> {
    configure_threads()?;
    match &cli.command {
        Command::Simulate(run) => simulate(run),
        Command::Ensemble { run, members } => ensemble(run, *members),
        Command::Verify {
            suites,
            quick,
            seed,
            out,
        } => verify(suites, *quick, *seed, out),
        Command::KernelTable { action } => kernel_table(action),
        Command::InitPreview { config, solver, out } => init_preview(config.as_deref(), *solver, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
