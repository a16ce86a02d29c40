//! Subcommand bodies.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use varplan_core::diagnostics::UnionPlan;
use varplan_core::network::{parse_case, validate, write_case, Case, CaseError};
use varplan_core::ph::{PhConfig, PhError, StopReason};
use varplan_core::planning::{PlanningError, SavingsReport};
use varplan_core::report::CsvSink;
use varplan_core::study::{run_study, PlanView, StudyError, StudyOutcome};
use varplan_core::subproblem::SubproblemSolution;
use varplan_core::fixtures;

use crate::manifest::{Study, StudyArgs};
use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

pub fn load_case(path: &Path) -> Result<Case, CliError> {
    parse_case(path).map_err(|e| match e {
        CaseError::Io(_) => CliError::Case(format!("{}: {e}", path.display())),
        _ => CliError::Case(e.to_string()),
    })
}

fn study_error(e: StudyError) -> CliError {
    match e {
        StudyError::Case(m) => CliError::Case(m),
        StudyError::Ph(PhError::Config(m)) => CliError::Config(m),
        StudyError::Ph(PhError::Case(m)) => CliError::Case(m),
        StudyError::Ph(PhError::Subproblem(e)) => CliError::Opf(e.to_string()),
        StudyError::Planning(e @ (PlanningError::Infeasible { .. } | PlanningError::Subproblem(_))) => {
            CliError::Opf(e.to_string())
        }
        StudyError::Planning(e) => CliError::Case(e.to_string()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct SolutionFile<'a> {
    stop: &'a StopReason,
    best_iteration: Option<usize>,
    candidate_buses: &'a [usize],
    plan: Option<&'a UnionPlan>,
    last_iteration: Option<usize>,
    scenarios: &'a [SubproblemSolution],
}

#[derive(Serialize)]
struct PlanFile<'a> {
    iteration0: Option<&'a PlanView>,
    #[serde(rename = "final")]
    final_plan: Option<&'a PlanView>,
    savings: Option<&'a SavingsReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub stop: String,
    pub stop_detail: StopReason,
    pub iterations: Option<usize>,
    pub best_iteration: Option<usize>,
    pub best_cost: Option<f64>,
    pub total_mvar: Option<f64>,
    pub discrete_cost: Option<f64>,
    pub savings: Option<f64>,
    pub saturated: bool,
    pub seconds: f64,
    pub candidate_buses: Vec<usize>,
    pub config: PhConfig,
}

/// Runs one study and writes its artifacts; failures of the hedging loop
/// still leave every artifact on disk.
pub fn execute(study: &Study) -> Result<Summary, CliError> {
    let case = load_case(&study.case)?;
    fs::create_dir_all(&study.out).map_err(|e| io_err(&study.out, e))?;
    let csv_path = study.out.join("iterations.csv");
    let file = File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    let mut sink = CsvSink::new(BufWriter::new(file)).map_err(|e| io_err(&csv_path, e))?;
    if !study.timing {
        sink = sink.without_time();
    }
    let mut write_error = None;
    let started = Instant::now();
    let outcome = run_study(&case, &study.candidates, &study.config, &mut |rec| {
        if write_error.is_none() {
            write_error = sink.write(rec).err();
        }
    })
    .map_err(study_error)?;
    let seconds = started.elapsed().as_secs_f64();
    if let Some(e) = write_error {
        return Err(io_err(&csv_path, e));
    }
    sink.into_inner().flush().map_err(|e| io_err(&csv_path, e))?;
    let summary = summarize(&outcome, &study.config, seconds);
    write_artifacts(&study.out, &outcome, &summary)?;
    Ok(summary)
}

fn summarize(o: &StudyOutcome, config: &PhConfig, seconds: f64) -> Summary {
    Summary {
        stop: o.stop().label().into(),
        stop_detail: o.stop().clone(),
        iterations: o.run.last_iteration(),
        best_iteration: o.best.as_ref().map(|b| b.iteration),
        best_cost: o.best.as_ref().map(|b| b.continuous.cost),
        total_mvar: o.best.as_ref().map(|b| b.continuous.total_mvar()),
        discrete_cost: o.best.as_ref().map(|b| b.discrete.total_cost),
        savings: o.savings.as_ref().map(|s| s.savings),
        saturated: o.run.records.iter().any(|r| r.saturated),
        seconds,
        candidate_buses: o.candidate_buses.clone(),
        config: config.clone(),
    }
}

fn write_artifacts(out: &Path, o: &StudyOutcome, summary: &Summary) -> Result<(), CliError> {
    let solution = SolutionFile {
        stop: o.stop(),
        best_iteration: o.best.as_ref().map(|b| b.iteration),
        candidate_buses: &o.candidate_buses,
        plan: o.best.as_ref().map(|b| &b.continuous),
        last_iteration: o.run.last_iteration(),
        scenarios: &o.run.solutions,
    };
    write_json(&out.join("solution.json"), &solution)?;
    let plan = PlanFile { iteration0: o.baseline.as_ref(), final_plan: o.best.as_ref(), savings: o.savings.as_ref() };
    write_json(&out.join("plan.json"), &plan)?;
    write_json(&out.join("summary.json"), summary)
}

/// Exit status for a finished run.
pub fn finish(summary: &Summary) -> Result<(), CliError> {
    match &summary.stop_detail {
        StopReason::OpfNonConvergence { scenario, iteration } => {
            Err(CliError::Opf(format!("scenario {scenario} did not converge at iteration {iteration}")))
        }
        StopReason::Timeout if summary.best_cost.is_none() => {
            Err(CliError::Timeout("iteration limit reached without a feasible plan".into()))
        }
        _ => Ok(()),
    }
}

pub fn run(args: &StudyArgs) -> Result<(), CliError> {
    let study = args.resolve()?;
    let summary = execute(&study)?;
    println!(
        "stop={} iterations={} best_cost={} total_mvar={} out={}",
        summary.stop,
        summary.iterations.map_or("-".into(), |i| i.to_string()),
        summary.best_cost.map_or("-".into(), |c| format!("{c:.3}")),
        summary.total_mvar.map_or("-".into(), |c| format!("{c:.3}")),
        study.out.display()
    );
    finish(&summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    /// Both weight steps.
    Step,
    /// Penalty multiplier.
    K,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub stop: String,
    pub iterations: Option<usize>,
    pub total_mvar: Option<f64>,
    pub best_cost: Option<f64>,
    pub seconds: Option<f64>,
    pub saturated: bool,
    pub error: String,
}

pub fn sweep(args: &StudyArgs, axis: Axis, values: &[f64]) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let base = args.resolve()?;
    let mut rows = Vec::new();
    for &value in values {
        let mut study = base.clone();
        let label = match axis {
            Axis::Step => {
                study.config.step_r = value;
                study.config.step_c = value;
                format!("step-{value}")
            }
            Axis::K => {
                study.config.penalty_k = value;
                format!("k-{value}")
            }
        };
        study.out = base.out.join(label);
        let row = match study.config.validate().map_err(|e| CliError::Config(e.to_string())).and_then(|_| execute(&study)) {
            Ok(s) => SweepRow {
                value,
                stop: s.stop.clone(),
                iterations: s.iterations,
                total_mvar: s.total_mvar,
                best_cost: s.best_cost,
                seconds: Some(s.seconds),
                saturated: s.saturated,
                error: String::new(),
            },
            Err(e) => SweepRow {
                value,
                stop: "error".into(),
                iterations: None,
                total_mvar: None,
                best_cost: None,
                seconds: None,
                saturated: false,
                error: e.to_string(),
            },
        };
        log::info!("{axis:?} = {value}: {}", row.stop);
        rows.push(row);
    }
    fs::create_dir_all(&base.out).map_err(|e| io_err(&base.out, e))?;
    let path = base.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    println!("{:>10} {:>12} {:>6} {:>12} {:>12} {:>9} {:>5}", "value", "stop", "iters", "total_mvar", "best_cost", "seconds", "sat");
    let cell = |v: Option<f64>, p: usize| v.map_or("-".into(), |x| format!("{x:.p$}"));
    for r in &rows {
        println!(
            "{:>10} {:>12} {:>6} {:>12} {:>12} {:>9} {:>5}",
            r.value,
            r.stop,
            r.iterations.map_or("-".into(), |i| i.to_string()),
            cell(r.total_mvar, 3),
            cell(r.best_cost, 2),
            cell(r.seconds, 3),
            if r.saturated { "yes" } else { "no" }
        );
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FixtureName {
    TwoBus,
    ThreeBus,
    Ieee24,
}

pub fn gen_fixture(name: FixtureName, seed: Option<u64>, scenarios: Option<usize>, out: &PathBuf) -> Result<(), CliError> {
    let case = match name {
        FixtureName::TwoBus => fixtures::two_bus(),
        FixtureName::ThreeBus => fixtures::three_bus(),
        FixtureName::Ieee24 => fixtures::ieee24_with_seed(
            seed.unwrap_or(fixtures::IEEE24_SEED),
            scenarios.unwrap_or(fixtures::IEEE24_SCENARIOS),
        ),
    };
    if name != FixtureName::Ieee24 && (seed.is_some() || scenarios.is_some()) {
        return Err(CliError::Config("--seed and --scenarios apply to ieee24 only".into()));
    }
    if scenarios == Some(0) {
        return Err(CliError::Config("--scenarios must be at least 1".into()));
    }
    write_case(&case, out).map_err(|e| io_err(out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn validate_case(path: &Path) -> Result<(), CliError> {
    let case = load_case(path)?;
    let findings = validate(&case.network, &case.scenarios);
    for f in &findings {
        println!("{f}");
    }
    println!(
        "buses={} branches={} candidates={} scenarios={} findings={}",
        case.network.buses.len(),
        case.network.branches.len(),
        case.network.candidates.len(),
        case.scenarios.len(),
        findings.len()
    );
    match findings.iter().find(|f| f.is_fatal()) {
        Some(f) => Err(CliError::Case(f.to_string())),
        None => Ok(()),
    }
}
