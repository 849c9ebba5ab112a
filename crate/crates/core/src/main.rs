//! `objsoup`: run multi-objective training recipes on synthetic problems and
//! report traces, conflict matrices, and run comparisons.
//!
//! Exit codes: 0 success, 1 config/usage error, 2 numerical failure,
//! 3 I/O failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use objsoup::config::ResolvedConfig;
use objsoup::conflict::DetectionMode;
use objsoup::error::{Error, Result};
use objsoup::harness;

#[derive(Parser)]
#[command(name = "objsoup", version, about = "Multi-objective training recipes on synthetic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a training run from a JSON config.
    Run(RunArgs),
    /// Emit gradient-conflict cosine matrices as CSV (and JSON).
    Conflicts(ConflictsArgs),
    /// Compare completed runs over the same problem into a CSV.
    Compare(CompareArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for trace.jsonl, summary.json, config.resolved.json.
    #[arg(long)]
    out: PathBuf,
    /// Seed override (falls back to config seed, then $OBJSOUP_SEED).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ConflictsArgs {
    /// Completed run directory holding accumulated gradients.
    #[arg(long, conflicts_with = "config")]
    run: Option<PathBuf>,
    /// Config to run a fresh warmup accumulation with.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path (a .json mirror is written next to it).
    #[arg(long)]
    out: PathBuf,
    /// Also emit per-layer cosine rows.
    #[arg(long)]
    per_layer: bool,
    /// Seed override for --config accumulation.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Stationarity tolerance for the iterations-to-tolerance column.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Two or more completed run directories.
    #[arg(required = true)]
    run_dirs: Vec<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Problem name (bi_quadratic, quadratic_soup3, toy_net, toy_net_linear,
    /// conflict_planted, head_quadratics).
    #[arg(long)]
    problem: String,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Seed for the evaluation point.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test hook: corrupt one analytic coordinate by this amount.
    #[arg(long, hide = true)]
    corrupt: Option<f64>,
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<ResolvedConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ResolvedConfig::parse_resolved(&text, seed)
}

fn run(args: RunArgs) -> Result<()> {
    let config = load_config(&args.config, args.seed)?;
    let summary = harness::execute_run(&config, &args.out)?;
    println!(
        "run complete: {} iterations, stationarity {:.3e}{}",
        summary.iterations,
        summary.stationarity,
        summary
            .pareto_distance
            .map(|d| format!(", pareto distance {d:.3e}"))
            .unwrap_or_default()
    );
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn conflicts(args: ConflictsArgs) -> Result<()> {
    let source = match (&args.run, &args.config) {
        (Some(dir), None) => harness::ConflictSource::RunDir(dir.clone()),
        (None, Some(path)) => harness::ConflictSource::Config(load_config(path, args.seed)?),
        _ => {
            return Err(Error::Config(
                "conflicts needs exactly one of --run or --config".into(),
            ))
        }
    };
    let report = harness::conflict_report(source, DetectionMode::NegativePairs)?;
    harness::write_conflict_outputs(&report, &args.out, args.per_layer)?;
    println!(
        "conflicting layers: [{}] over {} epochs -> {}",
        report.conflicting_layer_names().join(", "),
        report.epochs_observed,
        args.out.display()
    );
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    harness::compare_runs(&args.run_dirs, &args.out, args.tol)?;
    println!("compared {} runs -> {}", args.run_dirs.len(), args.out.display());
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    let report = harness::gradcheck(&args.problem, args.seed, args.h, args.corrupt)?;
    for objective in &report.objectives {
        println!(
            "objective {}: max rel error {:.3e}",
            objective.objective, objective.max_rel_error
        );
    }
    if !report.pass {
        let worst = report
            .objectives
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .expect("nonempty");
        return Err(Error::Numerical(format!(
            "gradient check failed for {}: rel error {:.3e} (worst at {} coordinate {})",
            worst.objective, worst.max_rel_error, worst.worst_block, worst.worst_coordinate
        )));
    }
    println!("gradient check passed (tolerance {:.0e})", harness::GRADCHECK_TOL);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems share the config-error exit code; --help and
            // --version exit cleanly.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Conflicts(args) => conflicts(args),
        Command::Compare(args) => compare(args),
        Command::Gradcheck(args) => gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.exit_code() as u8)
        }
    }
}
