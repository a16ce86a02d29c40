//! End-to-end planning study: candidate selection, the hedging run and
//! discretization of the iteration-0 and final plans.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{compute_upper_bound, IterationRecord, UnionPlan};
use crate::network::{validate, Case, Network};
use crate::ph::{run_with, AcSolver, PhConfig, PhError, PhRunResult, ScenarioSolver, StopReason};
use crate::planning::{
    discretize, plan_cost_report, requirements, select_candidates, DiscretePlan, PlanningError,
    Requirement, SavingsReport, CANDIDATE_EPS,
};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// Every candidate in the case.
    #[default]
    Full,
    /// Candidates that invest in some iteration-0 plain solve.
    Reduced,
    /// The case's candidates at these buses.
    Buses(Vec<usize>),
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid case: {0}")]
    Case(String),
    #[error(transparent)]
    Ph(#[from] PhError),
    #[error(transparent)]
    Planning(#[from] PlanningError),
}

/// Continuous plan with its per-bus requirements and discrete equipment.
#[derive(Debug, Clone, Serialize)]
pub struct PlanView {
    pub iteration: usize,
    pub continuous: UnionPlan,
    pub requirements: Vec<Requirement>,
    pub discrete: DiscretePlan,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyOutcome {
    /// Buses that were candidates in the run.
    pub candidate_buses: Vec<usize>,
    pub run: PhRunResult,
    pub baseline: Option<PlanView>,
    pub best: Option<PlanView>,
    pub savings: Option<SavingsReport>,
}

impl StudyOutcome {
    pub fn stop(&self) -> &StopReason {
        &self.run.stop
    }
}

/// Applies the candidate mode to the case network.
pub fn study_network(case: &Case, mode: &CandidateMode, config: &PhConfig) -> Result<Network, StudyError> {
    let candidates = match mode {
        CandidateMode::Full => case.network.candidates.clone(),
        CandidateMode::Reduced => {
            select_candidates(&case.network, &case.scenarios, &config.subproblem, CANDIDATE_EPS)?
        }
        CandidateMode::Buses(buses) => {
            let mut out = Vec::new();
            for &b in buses {
                match case.network.candidates.iter().find(|c| c.bus == b) {
                    Some(c) => out.push(c.clone()),
                    None => return Err(StudyError::Case(format!("bus {b} is not a var candidate"))),
                }
            }
            out
        }
    };
    if candidates.is_empty() {
        return Err(StudyError::Case("no candidate bus left to plan".into()));
    }
    Ok(case.network.with_candidates(candidates))
}

fn view(network: &Network, case: &Case, iteration: usize, plan: UnionPlan) -> Result<PlanView, StudyError> {
    let requirements = requirements(network, &plan.q_inv_r, &plan.q_inv_c, CANDIDATE_EPS);
    let discrete = discretize(&requirements, &case.catalog)?;
    Ok(PlanView { iteration, continuous: plan, requirements, discrete })
}

/// Runs a study with the AC subproblem solver.
pub fn run_study(
    case: &Case,
    mode: &CandidateMode,
    config: &PhConfig,
    sink: &mut dyn FnMut(&IterationRecord),
) -> Result<StudyOutcome, StudyError> {
    run_study_with(case, mode, config, &AcSolver, sink)
}

pub fn run_study_with(
    case: &Case,
    mode: &CandidateMode,
    config: &PhConfig,
    solver: &dyn ScenarioSolver,
    sink: &mut dyn FnMut(&IterationRecord),
) -> Result<StudyOutcome, StudyError> {
    if let Some(f) = validate(&case.network, &case.scenarios).into_iter().find(|f| f.is_fatal()) {
        return Err(StudyError::Case(f.to_string()));
    }
    config.validate()?;
    let network = study_network(case, mode, config)?;
    let run = run_with(&network, &case.scenarios, config, solver, sink)?;
    let baseline = if run.iteration0.is_empty() {
        None
    } else {
        Some(view(&network, case, 0, compute_upper_bound(&network, &run.iteration0))?)
    };
    let best = match &run.best {
        Some(b) => Some(view(&network, case, b.iteration, b.plan.clone())?),
        None => None,
    };
    let savings = match (&baseline, &best) {
        (Some(a), Some(b)) => Some(plan_cost_report(&a.discrete, &b.discrete)),
        _ => None,
    };
    Ok(StudyOutcome {
        candidate_buses: network.candidates.iter().map(|c| c.bus).collect(),
        run,
        baseline,
        best,
        savings,
    })
}
