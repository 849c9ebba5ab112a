//! Experiment execution and report generation behind the CLI.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{registry_problem, ResolvedConfig};
use crate::conflict::{detect_conflicting_layers, ConflictReport, DetectionMode, GradientAccumulator};
use crate::error::{Error, Result};
use crate::problems::{analytic_full_gradient, finite_diff_gradient, BatchSelection, Problem};
use crate::recipes::Trainer;
use crate::trace::RunTrace;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const ACCUMULATOR_FILE: &str = "conflict_accumulator.json";
pub const CONFLICT_REPORT_FILE: &str = "conflict_report.json";

/// Final metrics of a run; a pure function of its trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_losses: BTreeMap<String, f64>,
    pub stationarity: f64,
    pub pareto_distance: Option<f64>,
    pub feasibility_gap: Option<f64>,
    pub iterations: usize,
    pub wallclock_ms: f64,
    pub penalty_terminal: BTreeMap<String, f64>,
    pub conflicting_layers: Vec<String>,
}

/// Recompute the summary from a trace alone.
pub fn summary_from_trace(trace: &RunTrace) -> Result<RunSummary> {
    let last = trace.last_record()?;
    let final_record = trace
        .final_record
        .as_ref()
        .ok_or_else(|| Error::MissingData("trace has no terminal record".into()))?;
    Ok(RunSummary {
        final_losses: last.losses.clone(),
        stationarity: last.stationarity,
        pareto_distance: final_record.pareto_distance,
        feasibility_gap: last.feasibility_gap,
        iterations: last.iter,
        wallclock_ms: final_record.wallclock_ms,
        penalty_terminal: last.eta.clone(),
        conflicting_layers: last.conflict_layers.clone(),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Execute a resolved config into `out_dir`: `config.resolved.json`,
/// `trace.jsonl`, `summary.json`, and the warmup gradient accumulator.
///
/// Validation happens before anything is written. A numerical failure still
/// writes the partial trace with a diagnostic record, then surfaces the
/// error.
pub fn execute_run(config: &ResolvedConfig, out_dir: &Path) -> Result<RunSummary> {
    let problem = config.build_problem()?;
    let (recipe, options, budget) = config.build_training(problem.spec())?;

    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join(RESOLVED_CONFIG_FILE), &config.to_value()?)?;

    let mut trainer = Trainer::new(problem.as_ref(), recipe, options, budget, config.seed)?;
    let run_result = trainer.run();
    let failure = run_result.err();
    let output = trainer.finish()?;

    if config.wants_format("trace_jsonl") || failure.is_some() {
        let mut file = fs::File::create(out_dir.join(TRACE_FILE))?;
        output.trace.write_jsonl(&mut file)?;
        if let Some(error) = &failure {
            let diagnostic = json!({
                "aborted": "numerical_failure",
                "iter": output.state.iteration,
                "epoch": output.state.epoch,
                "detail": error.to_string(),
            });
            serde_json::to_writer(&mut file, &diagnostic)?;
            file.write_all(b"\n")?;
        }
    }
    if output.accumulator.has_data() {
        write_json(
            &out_dir.join(ACCUMULATOR_FILE),
            &serde_json::to_value(&output.accumulator)?,
        )?;
    }
    if let Some(report) = &output.conflict_report {
        write_json(&out_dir.join(CONFLICT_REPORT_FILE), &report.to_json())?;
    }
    if let Some(error) = failure {
        return Err(error);
    }

    let summary = summary_from_trace(&output.trace)?;
    if config.wants_format("summary_json") {
        write_json(&out_dir.join(SUMMARY_FILE), &serde_json::to_value(&summary)?)?;
    }
    Ok(summary)
}

/// Conflict analysis input: a finished run directory or a config to run a
/// fresh warmup accumulation with.
pub enum ConflictSource {
    RunDir(PathBuf),
    Config(ResolvedConfig),
}

pub fn conflict_report(source: ConflictSource, mode: DetectionMode) -> Result<ConflictReport> {
    let accumulator: GradientAccumulator = match source {
        ConflictSource::RunDir(dir) => {
            let path = dir.join(ACCUMULATOR_FILE);
            if !path.exists() {
                return Err(Error::MissingData(format!(
                    "{} not found; the run has no accumulated gradients",
                    path.display()
                )));
            }
            serde_json::from_str(&fs::read_to_string(path)?)?
        }
        ConflictSource::Config(config) => {
            let problem = config.build_problem()?;
            let (recipe, options, budget) = config.build_training(problem.spec())?;
            // Fresh accumulation over exactly the warmup window.
            let accumulation_budget = crate::recipes::Budget {
                epochs: options.warmup_epochs.min(budget.epochs.max(1)),
                iters_per_epoch: budget.iters_per_epoch,
            };
            let mut trainer = Trainer::new(
                problem.as_ref(),
                recipe,
                crate::recipes::TrainOptions { efficient_mode: false, ..options },
                accumulation_budget,
                config.seed,
            )?;
            trainer.run()?;
            trainer.finish()?.accumulator
        }
    };
    if !accumulator.has_data() {
        return Err(Error::MissingData(
            "gradient accumulator is empty; run a recipe that evaluates every objective".into(),
        ));
    }
    detect_conflicting_layers(&accumulator, mode)
}

pub fn write_conflict_outputs(
    report: &ConflictReport,
    out_csv: &Path,
    per_layer: bool,
) -> Result<()> {
    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(out_csv)?;
    report.write_csv(&mut file, per_layer)?;
    write_json(&out_csv.with_extension("json"), &report.to_json())?;
    Ok(())
}

struct LoadedRun {
    dir: PathBuf,
    fingerprint: String,
    seed: u64,
    summary: RunSummary,
    recipe: String,
    order: String,
    iters_to_tol: Option<usize>,
}

fn load_run(dir: &Path, tol: f64) -> Result<LoadedRun> {
    let config_text = fs::read_to_string(dir.join(RESOLVED_CONFIG_FILE)).map_err(|_| {
        Error::MissingData(format!("{} has no {RESOLVED_CONFIG_FILE}", dir.display()))
    })?;
    let config = ResolvedConfig::parse_resolved(&config_text, None)?;
    let trace_file = fs::File::open(dir.join(TRACE_FILE))
        .map_err(|_| Error::MissingData(format!("{} has no {TRACE_FILE}", dir.display())))?;
    let trace = RunTrace::read_jsonl(std::io::BufReader::new(trace_file))?;
    let summary = summary_from_trace(&trace)?;
    let last = trace.last_record()?;
    let iters_to_tol = trace
        .records
        .iter()
        .find(|r| r.stationarity <= tol)
        .map(|r| r.iter);
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        fingerprint: config.problem.fingerprint()?,
        seed: config.seed,
        summary,
        recipe: last.recipe.clone(),
        order: last.order.clone(),
        iters_to_tol,
    })
}

fn csv_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Compare completed runs over the same problem fingerprint into one CSV:
/// a row per run plus per-recipe mean columns.
pub fn compare_runs(run_dirs: &[PathBuf], out_csv: &Path, tol: f64) -> Result<()> {
    if run_dirs.len() < 2 {
        return Err(Error::Config("compare needs at least two run directories".into()));
    }
    let runs: Vec<LoadedRun> = run_dirs
        .iter()
        .map(|d| load_run(d, tol))
        .collect::<Result<_>>()?;
    let fingerprint = &runs[0].fingerprint;
    for run in &runs[1..] {
        if &run.fingerprint != fingerprint {
            return Err(Error::Config(format!(
                "problem fingerprint mismatch: {} vs {}",
                runs[0].dir.display(),
                run.dir.display()
            )));
        }
    }
    let loss_keys: Vec<String> = runs[0].summary.final_losses.keys().cloned().collect();

    let max_loss = |run: &LoadedRun| -> f64 {
        run.summary
            .final_losses
            .values()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut recipe_stats: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    for run in &runs {
        let entry = recipe_stats.entry(run.recipe.clone()).or_insert((0.0, 0.0, 0));
        entry.0 += run.summary.stationarity;
        entry.1 += max_loss(run);
        entry.2 += 1;
    }

    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(out_csv)?;
    let loss_cols: Vec<String> = loss_keys.iter().map(|k| format!("loss_{k}")).collect();
    writeln!(
        file,
        "run,recipe,order,seed,{},stationarity,pareto_distance,feasibility_gap,iters_to_tol,recipe_mean_stationarity,recipe_mean_max_loss",
        loss_cols.join(",")
    )?;
    for run in &runs {
        let losses: Vec<String> = loss_keys
            .iter()
            .map(|k| {
                run.summary
                    .final_losses
                    .get(k)
                    .map(|v| v.to_string())
                    .unwrap_or_default()
            })
            .collect();
        let (sum_s, sum_m, count) = recipe_stats[&run.recipe];
        writeln!(
            file,
            "{},{},{},{},{},{},{},{},{},{},{}",
            run.dir.display(),
            run.recipe,
            run.order,
            run.seed,
            losses.join(","),
            run.summary.stationarity,
            csv_opt(run.summary.pareto_distance),
            csv_opt(run.summary.feasibility_gap),
            run.iters_to_tol.map(|i| i.to_string()).unwrap_or_default(),
            sum_s / count as f64,
            sum_m / count as f64,
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckObjective {
    pub objective: String,
    pub max_rel_error: f64,
    pub worst_block: String,
    pub worst_coordinate: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub problem: String,
    pub h: f64,
    pub objectives: Vec<GradcheckObjective>,
    pub pass: bool,
}

pub const GRADCHECK_TOL: f64 = 1e-4;

/// Compare analytic gradients against central differences at the seeded
/// initial point. `corrupt` is a test hook that perturbs one analytic
/// coordinate to force a failure.
pub fn gradcheck(name: &str, seed: u64, h: f64, corrupt: Option<f64>) -> Result<GradcheckReport> {
    let section = registry_problem(name)?;
    let problem = section.build(seed)?;
    gradcheck_problem(problem.as_ref(), name, seed, h, corrupt)
}

pub fn gradcheck_problem(
    problem: &dyn Problem,
    name: &str,
    seed: u64,
    h: f64,
    corrupt: Option<f64>,
) -> Result<GradcheckReport> {
    let params = problem.initial_params(seed);
    let full = BatchSelection::full(problem);
    let eval = problem.evaluate(&params, &full)?;
    let numeric = finite_diff_gradient(problem, &params, h)?;

    let mut objectives = Vec::new();
    for (idx, (id, fd)) in numeric.iter().enumerate() {
        let mut analytic = analytic_full_gradient(&params, &eval, id)?;
        if idx == 0 {
            if let Some(magnitude) = corrupt {
                let block = *analytic.block_ids().next().expect("nonempty");
                let dim = analytic.block(&block).unwrap().len();
                let mut delta = vec![0.0; dim];
                delta[0] = magnitude;
                analytic.update_block(&block, 1.0, &delta)?;
            }
        }
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        let mut worst = (0.0f64, block_name(&analytic), 0usize);
        for (block, values) in analytic.blocks() {
            let nv = fd.block(block).expect("same structure");
            for (coord, (a, n)) in values.iter().zip(nv).enumerate() {
                let d = (a - n).abs();
                diff2 += d * d;
                norm2 += a * a;
                if d > worst.0 {
                    worst = (d, block.to_string(), coord);
                }
            }
        }
        let rel = diff2.sqrt() / norm2.sqrt().max(1e-12);
        objectives.push(GradcheckObjective {
            objective: id.to_string(),
            max_rel_error: rel,
            worst_block: worst.1,
            worst_coordinate: worst.2,
        });
    }
    let pass = objectives.iter().all(|o| o.max_rel_error < GRADCHECK_TOL);
    Ok(GradcheckReport { problem: name.to_string(), h, objectives, pass })
}

fn block_name(pv: &crate::param_space::ParamVector) -> String {
    pv.block_ids()
        .next()
        .map(|b| b.to_string())
        .unwrap_or_default()
}
