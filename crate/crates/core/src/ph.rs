//! Progressive hedging over the scenario subproblems.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{
    aggregate_lower_bound, compute_napsd, compute_upper_bound, lower_bound_spec, relative_gap,
    stable_sum, verify_plan, weighted_average, IterationRecord, NapsdNormalization,
    ScenarioInvestment, UnionPlan,
};
use crate::network::{Network, Scenario, VarCandidate};
use crate::subproblem::{
    solve_scenario, ObjectiveMode, PhTerms, SubproblemError, SubproblemOptions, SubproblemSolution,
    SubproblemSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhConfig {
    /// Penalty multiplier K in ρ = K·I.
    pub penalty_k: f64,
    /// Weight step for reactors.
    pub step_r: f64,
    /// Weight step for capacitors.
    pub step_c: f64,
    pub max_iterations: usize,
    pub gap_tolerance: f64,
    pub napsd_report: bool,
    pub napsd_normalization: NapsdNormalization,
    /// Concurrent scenario solves.
    pub jobs: usize,
    /// Re-solve every scenario with the union plan fixed after each iteration.
    pub verify_upper_bound: bool,
    #[serde(skip)]
    pub subproblem: SubproblemOptions,
}

impl Default for PhConfig {
    fn default() -> Self {
        PhConfig {
            penalty_k: 1.0,
            step_r: 0.01,
            step_c: 0.01,
            max_iterations: 100,
            gap_tolerance: 0.01,
            napsd_report: true,
            napsd_normalization: NapsdNormalization::Scenarios,
            jobs: 1,
            verify_upper_bound: false,
            subproblem: SubproblemOptions::default(),
        }
    }
}

impl PhConfig {
    pub fn validate(&self) -> Result<(), PhError> {
        let bad = |m: &str| Err(PhError::Config(m.into()));
        if !(self.penalty_k >= 0.0 && self.penalty_k.is_finite()) {
            return bad("penalty K must be a finite value >= 0");
        }
        if !(self.step_r >= 0.0 && self.step_r.is_finite() && self.step_c >= 0.0 && self.step_c.is_finite()) {
            return bad("step sizes must be finite values >= 0");
        }
        if !(self.gap_tolerance > 0.0 && self.gap_tolerance < 1.0) {
            return bad("gap tolerance must lie in (0, 1)");
        }
        if self.max_iterations < 1 {
            return bad("max iterations must be at least 1");
        }
        if self.jobs < 1 {
            return bad("jobs must be at least 1");
        }
        Ok(())
    }

    /// The lower bound is only informative once weights can move.
    pub fn lower_bound_enabled(&self, scenarios: usize) -> bool {
        self.step_r > 0.0 || self.step_c > 0.0 || scenarios == 1
    }
}

#[derive(Debug, Error)]
pub enum PhError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid case: {0}")]
    Case(String),
    #[error(transparent)]
    Subproblem(#[from] SubproblemError),
}

/// ρ^R = K·I^R and ρ^C = K·I^C per candidate.
pub fn compute_rho(candidates: &[VarCandidate], penalty_k: f64) -> (Vec<f64>, Vec<f64>) {
    (
        candidates.iter().map(|c| penalty_k * c.cost_reactor).collect(),
        candidates.iter().map(|c| penalty_k * c.cost_capacitor).collect(),
    )
}

/// Probability-weighted investment averages `(Q^R,AVE, Q^C,AVE)`.
pub fn update_averages(solutions: &[SubproblemSolution], probabilities: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let r: Vec<&[f64]> = solutions.iter().map(|s| s.q_inv_r.as_slice()).collect();
    let c: Vec<&[f64]> = solutions.iter().map(|s| s.q_inv_c.as_slice()).collect();
    (weighted_average(&r, probabilities), weighted_average(&c, probabilities))
}

/// `w[s][k] += step·ρ[k]·(q[s][k] − avg[k])` for one equipment kind.
pub fn update_weights(w: &mut [Vec<f64>], investments: &[&[f64]], avg: &[f64], rho: &[f64], step: f64) {
    for (ws, q) in w.iter_mut().zip(investments) {
        for k in 0..ws.len() {
            ws[k] += step * rho[k] * (q[k] - avg[k]);
        }
    }
}

/// Largest scaled `|Σ_s Pr·w|` over candidates.
pub fn weight_sum_residual(w: &[Vec<f64>], probabilities: &[f64]) -> f64 {
    let nc = w.first().map_or(0, |v| v.len());
    (0..nc)
        .map(|k| {
            let sum = stable_sum(w.iter().zip(probabilities).map(|(ws, p)| p * ws[k]));
            let mag: f64 = w.iter().map(|ws| ws[k].abs()).sum();
            sum.abs() / mag.max(1.0)
        })
        .fold(0.0, f64::max)
}

/// Coordinator memory between iterations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhState {
    pub iteration: usize,
    /// `w_r[s][k]`.
    pub w_r: Vec<Vec<f64>>,
    pub w_c: Vec<Vec<f64>>,
    pub avg_r: Vec<f64>,
    pub avg_c: Vec<f64>,
    pub rho_r: Vec<f64>,
    pub rho_c: Vec<f64>,
    pub best: Option<BestPlan>,
}

impl PhState {
    pub fn new(scenarios: usize, candidates: &[VarCandidate], penalty_k: f64) -> Self {
        let nc = candidates.len();
        let (rho_r, rho_c) = compute_rho(candidates, penalty_k);
        PhState {
            iteration: 0,
            w_r: vec![vec![0.0; nc]; scenarios],
            w_c: vec![vec![0.0; nc]; scenarios],
            avg_r: vec![0.0; nc],
            avg_c: vec![0.0; nc],
            rho_r,
            rho_c,
            best: None,
        }
    }

    pub fn terms(&self, s: usize) -> PhTerms {
        PhTerms {
            w_r: self.w_r[s].clone(),
            w_c: self.w_c[s].clone(),
            avg_r: self.avg_r.clone(),
            avg_c: self.avg_c.clone(),
            rho_r: self.rho_r.clone(),
            rho_c: self.rho_c.clone(),
        }
    }
}

/// Cheapest union plan seen so far.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestPlan {
    pub iteration: usize,
    pub plan: UnionPlan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Gap,
    Timeout,
    OpfNonConvergence { scenario: String, iteration: usize },
}

impl StopReason {
    pub fn label(&self) -> &'static str {
        match self {
            StopReason::Gap => "gap",
            StopReason::Timeout => "timeout",
            StopReason::OpfNonConvergence { .. } => "opf_failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolvePurpose {
    Hedging,
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveContext {
    pub iteration: usize,
    pub purpose: SolvePurpose,
}

/// How the coordinator obtains one scenario solution.
pub trait ScenarioSolver: Sync {
    fn solve(
        &self,
        ctx: SolveContext,
        network: &Network,
        scenario: &Scenario,
        spec: &SubproblemSpec,
        warm: Option<&SubproblemSolution>,
        opts: &SubproblemOptions,
    ) -> Result<SubproblemSolution, SubproblemError>;
}

/// The AC subproblem solved by the interior-point method.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcSolver;

impl ScenarioSolver for AcSolver {
    fn solve(
        &self,
        _ctx: SolveContext,
        network: &Network,
        scenario: &Scenario,
        spec: &SubproblemSpec,
        warm: Option<&SubproblemSolution>,
        opts: &SubproblemOptions,
    ) -> Result<SubproblemSolution, SubproblemError> {
        solve_scenario(network, scenario, spec, warm, opts)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhRunResult {
    pub stop: StopReason,
    pub records: Vec<IterationRecord>,
    pub best: Option<BestPlan>,
    /// Iteration-0 solutions, empty if that iteration failed.
    pub iteration0: Vec<SubproblemSolution>,
    /// Solutions of the last completed iteration.
    pub solutions: Vec<SubproblemSolution>,
    pub state: PhState,
}

impl PhRunResult {
    pub fn last_iteration(&self) -> Option<usize> {
        self.records.last().map(|r| r.iteration)
    }
}

/// A solution cached together with the objective terms that produced it.
struct Cached {
    key: PhTerms,
    solution: SubproblemSolution,
}

struct Runner<'a> {
    network: &'a Network,
    scenarios: &'a [Scenario],
    probabilities: Vec<f64>,
    config: &'a PhConfig,
    solver: &'a dyn ScenarioSolver,
    pool: rayon::ThreadPool,
}

impl Runner<'_> {
    /// Solves every scenario for one purpose. A scenario whose effective
    /// terms did not change reuses its cached solution verbatim.
    fn solve_all(
        &self,
        ctx: SolveContext,
        specs: Vec<SubproblemSpec>,
        cache: &mut [Option<Cached>],
        fallback_warm: Option<&[SubproblemSolution]>,
    ) -> Result<Vec<SubproblemSolution>, SubproblemError> {
        let jobs: Vec<(usize, SubproblemSpec, PhTerms)> = specs
            .into_iter()
            .enumerate()
            .map(|(s, spec)| {
                let key = spec.effective_terms();
                (s, spec, key)
            })
            .collect();
        let cache_ref: &[Option<Cached>] = cache;
        let results: Vec<Result<SubproblemSolution, SubproblemError>> = self.pool.install(|| {
            jobs.par_iter()
                .map(|(s, spec, key)| {
                    let prev = cache_ref[*s].as_ref();
                    if let Some(c) = prev {
                        if &c.key == key {
                            return Ok(c.solution.clone());
                        }
                    }
                    let warm = prev.map(|c| &c.solution).or(fallback_warm.map(|f| &f[*s]));
                    self.solver.solve(ctx, self.network, &self.scenarios[*s], spec, warm, &self.config.subproblem)
                })
                .collect()
        });
        let mut out = Vec::with_capacity(results.len());
        for ((s, _, key), r) in jobs.into_iter().zip(results) {
            let sol = r?;
            cache[s] = Some(Cached { key, solution: sol.clone() });
            out.push(sol);
        }
        Ok(out)
    }

    fn first_failure(&self, sols: &[SubproblemSolution], iteration: usize) -> Option<StopReason> {
        sols.iter().find(|s| !s.is_converged()).map(|s| {
            log::warn!("scenario {} did not converge at iteration {iteration}: {}", s.scenario_id, s.status);
            StopReason::OpfNonConvergence { scenario: s.scenario_id.clone(), iteration }
        })
    }

    fn saturated(&self, plan: &UnionPlan) -> bool {
        self.network.candidates.iter().enumerate().any(|(k, c)| {
            plan.q_inv_r[k] + plan.q_inv_c[k] >= c.max_mvar * (1.0 - SATURATION_TOL)
        })
    }
}

/// Relative distance to a candidate's cap that counts as saturated.
pub const SATURATION_TOL: f64 = 1e-3;

/// Runs the hedging loop with the AC subproblem solver.
pub fn run(network: &Network, scenarios: &[Scenario], config: &PhConfig) -> Result<PhRunResult, PhError> {
    run_with(network, scenarios, config, &AcSolver, &mut |_| {})
}

/// [`run`] with a custom scenario solver and a sink that receives every
/// iteration record as soon as it is complete.
pub fn run_with(
    network: &Network,
    scenarios: &[Scenario],
    config: &PhConfig,
    solver: &dyn ScenarioSolver,
    sink: &mut dyn FnMut(&IterationRecord),
) -> Result<PhRunResult, PhError> {
    config.validate()?;
    if scenarios.is_empty() {
        return Err(PhError::Case("no scenarios".into()));
    }
    if network.candidates.is_empty() {
        return Err(PhError::Case("no var candidates".into()));
    }
    let total: f64 = scenarios.iter().map(|s| s.probability).sum();
    if !(total > 0.0) {
        return Err(PhError::Case("scenario probabilities must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| PhError::Config(format!("thread pool: {e}")))?;
    let runner = Runner {
        network,
        scenarios,
        probabilities: scenarios.iter().map(|s| s.probability / total).collect(),
        config,
        solver,
        pool,
    };
    let probs = &runner.probabilities;
    let nc = network.candidates.len();
    let ns = scenarios.len();
    let lb_enabled = config.lower_bound_enabled(ns);
    let started = Instant::now();

    let mut state = PhState::new(ns, &network.candidates, config.penalty_k);
    let mut ph_cache: Vec<Option<Cached>> = (0..ns).map(|_| None).collect();
    let mut lb_cache: Vec<Option<Cached>> = (0..ns).map(|_| None).collect();
    let mut records = Vec::new();

    // Iteration 0: investment cost only.
    let specs = scenarios.iter().map(|sc| SubproblemSpec::plain(sc.id.clone(), nc)).collect();
    let ctx = SolveContext { iteration: 0, purpose: SolvePurpose::Hedging };
    let mut current = runner.solve_all(ctx, specs, &mut ph_cache, None)?;
    if let Some(stop) = runner.first_failure(&current, 0) {
        return Ok(PhRunResult { stop, records, best: None, iteration0: Vec::new(), solutions: current, state });
    }
    let iteration0 = current.clone();

    let mut iteration = 0;
    loop {
        let upper = compute_upper_bound(network, &current);
        if config.verify_upper_bound {
            for sc in scenarios {
                if !verify_plan(network, sc, &upper, &config.subproblem)? {
                    log::warn!("union plan of iteration {iteration} is infeasible for scenario {}", sc.id);
                }
            }
        }

        // Deviation from the average the solutions were pulled toward.
        let (napsd_r, napsd_c) = if iteration > 0 && config.napsd_report {
            let (r, c) = compute_napsd(&current, &state.avg_r, &state.avg_c, config.napsd_normalization);
            (Some(r), Some(c))
        } else {
            (None, None)
        };

        let lb = if lb_enabled && iteration > 0 {
            let specs = (0..ns).map(|s| lower_bound_spec(&scenarios[s].id, &state.terms(s))).collect();
            let ctx = SolveContext { iteration, purpose: SolvePurpose::LowerBound };
            let sols = runner.solve_all(ctx, specs, &mut lb_cache, Some(&current))?;
            let lb = aggregate_lower_bound(probs, &sols);
            if lb.is_none() {
                log::warn!("lower bound undefined at iteration {iteration}");
            }
            lb
        } else {
            None
        };
        let gap = lb.map(|lb| relative_gap(lb, upper.cost));
        let lb_above_ub = lb.is_some_and(|lb| lb > upper.cost + 1e-6 * upper.cost.abs());
        if lb_above_ub {
            log::warn!("lower bound above upper bound at iteration {iteration}");
        }

        if state.best.as_ref().is_none_or(|b| upper.cost < b.plan.cost) {
            state.best = Some(BestPlan { iteration, plan: upper.clone() });
        }
        let min_effective_cost = (0..ns)
            .flat_map(|s| {
                let st = &state;
                network.candidates.iter().enumerate().flat_map(move |(k, c)| {
                    [c.cost_reactor + st.w_r[s][k], c.cost_capacitor + st.w_c[s][k]]
                })
            })
            .fold(f64::INFINITY, f64::min);
        let record = IterationRecord {
            iteration,
            napsd_r,
            napsd_c,
            lb,
            ub: upper.cost,
            gap,
            total_mvar: upper.total_mvar(),
            best_cost: state.best.as_ref().map_or(upper.cost, |b| b.plan.cost),
            seconds: started.elapsed().as_secs_f64(),
            lb_above_ub,
            weight_sum_residual: weight_sum_residual(&state.w_r, probs)
                .max(weight_sum_residual(&state.w_c, probs)),
            min_effective_cost,
            saturated: runner.saturated(&upper),
            investments: current
                .iter()
                .map(|s| ScenarioInvestment {
                    scenario_id: s.scenario_id.clone(),
                    q_inv_r: s.q_inv_r.clone(),
                    q_inv_c: s.q_inv_c.clone(),
                })
                .collect(),
        };
        log::info!(
            "iter {iteration}: ub {:.3} lb {} gap {} mvar {:.3}",
            record.ub,
            record.lb.map_or("-".into(), |v| format!("{v:.3}")),
            record.gap.map_or("-".into(), |v| format!("{v:.4}")),
            record.total_mvar
        );
        sink(&record);
        records.push(record);

        let stop = if gap.is_some_and(|g| g <= config.gap_tolerance) {
            Some(StopReason::Gap)
        } else if iteration >= config.max_iterations {
            Some(StopReason::Timeout)
        } else {
            None
        };
        if let Some(stop) = stop {
            let best = state.best.clone();
            return Ok(PhRunResult { stop, records, best, iteration0, solutions: current, state });
        }

        // Averages, then weights, from the solutions just obtained.
        iteration += 1;
        state.iteration = iteration;
        let (avg_r, avg_c) = update_averages(&current, probs);
        state.avg_r = avg_r;
        state.avg_c = avg_c;
        let inv_r: Vec<&[f64]> = current.iter().map(|s| s.q_inv_r.as_slice()).collect();
        let inv_c: Vec<&[f64]> = current.iter().map(|s| s.q_inv_c.as_slice()).collect();
        update_weights(&mut state.w_r, &inv_r, &state.avg_r, &state.rho_r, config.step_r);
        update_weights(&mut state.w_c, &inv_c, &state.avg_c, &state.rho_c, config.step_c);

        let specs = (0..ns)
            .map(|s| SubproblemSpec {
                scenario_id: scenarios[s].id.clone(),
                mode: ObjectiveMode::PhAugmented,
                terms: state.terms(s),
            })
            .collect();
        let ctx = SolveContext { iteration, purpose: SolvePurpose::Hedging };
        let next = runner.solve_all(ctx, specs, &mut ph_cache, None)?;
        if let Some(stop) = runner.first_failure(&next, iteration) {
            let best = state.best.clone();
            return Ok(PhRunResult { stop, records, best, iteration0, solutions: current, state });
        }
        current = next;
    }
}
