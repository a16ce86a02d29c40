//! Convergence measures for the hedging loop: per-scenario deviation from
//! the average, Lagrangian lower bound, union upper bound and their gap.

use serde::{Deserialize, Serialize};
use varplan_ipm::{NlpProblem, Status};

use crate::network::{ModuleKind, Network, Scenario};
use crate::subproblem::{
    build, solve_scenario, BlockProblem, ObjectiveMode, PhTerms, SubproblemError,
    SubproblemOptions, SubproblemSolution, SubproblemSpec,
};

/// Averages at or below this many Mvar are left out of the deviation sum.
pub const NAPSD_EPS: f64 = 1e-6;

/// Sum that does not depend on the order of its terms.
pub fn stable_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = terms.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NapsdNormalization {
    /// Divide by the number of scenarios.
    #[default]
    Scenarios,
    /// Divide by the number of (candidate, scenario) terms kept.
    Terms,
}

/// Normalized average per-scenario deviation for one equipment kind.
/// `investments[s][k]` is scenario `s`'s investment at candidate `k` and
/// `prev_avg[k]` the average of the previous iteration.
pub fn napsd(investments: &[Vec<f64>], prev_avg: &[f64], norm: NapsdNormalization) -> f64 {
    let mut terms = Vec::new();
    for inv in investments {
        for (k, &avg) in prev_avg.iter().enumerate() {
            if avg > NAPSD_EPS {
                terms.push((inv[k] - avg).abs() / avg);
            }
        }
    }
    if terms.is_empty() {
        return 0.0;
    }
    let count = terms.len();
    let total = stable_sum(terms);
    match norm {
        NapsdNormalization::Scenarios => total / investments.len() as f64,
        NapsdNormalization::Terms => total / count as f64,
    }
}

/// `(napsd_r, napsd_c)` over a set of solutions.
pub fn compute_napsd(
    solutions: &[SubproblemSolution],
    prev_avg_r: &[f64],
    prev_avg_c: &[f64],
    norm: NapsdNormalization,
) -> (f64, f64) {
    let r: Vec<Vec<f64>> = solutions.iter().map(|s| s.q_inv_r.clone()).collect();
    let c: Vec<Vec<f64>> = solutions.iter().map(|s| s.q_inv_c.clone()).collect();
    (napsd(&r, prev_avg_r, norm), napsd(&c, prev_avg_c, norm))
}

/// Probability-weighted mean of per-scenario values at each candidate.
pub fn weighted_average(values: &[&[f64]], probabilities: &[f64]) -> Vec<f64> {
    let nc = values.first().map_or(0, |v| v.len());
    (0..nc)
        .map(|k| stable_sum(values.iter().zip(probabilities).map(|(v, p)| p * v[k])))
        .collect()
}

/// Componentwise maximum of the scenario investments and its cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnionPlan {
    pub q_inv_r: Vec<f64>,
    pub q_inv_c: Vec<f64>,
    pub cost: f64,
}

impl UnionPlan {
    pub fn total_mvar(&self) -> f64 {
        self.q_inv_r.iter().chain(&self.q_inv_c).sum()
    }

    pub fn investment(&self, kind: ModuleKind) -> &[f64] {
        match kind {
            ModuleKind::Reactor => &self.q_inv_r,
            ModuleKind::Capacitor => &self.q_inv_c,
        }
    }
}

pub fn investment_cost(network: &Network, q_inv_r: &[f64], q_inv_c: &[f64]) -> f64 {
    network
        .candidates
        .iter()
        .enumerate()
        .map(|(k, c)| c.cost_reactor * q_inv_r[k] + c.cost_capacitor * q_inv_c[k])
        .sum()
}

pub fn union_plan(network: &Network, q_inv_r: &[&[f64]], q_inv_c: &[&[f64]]) -> UnionPlan {
    let nc = network.candidates.len();
    let max_of = |sets: &[&[f64]], k: usize| sets.iter().map(|v| v[k]).fold(0.0, f64::max);
    let r: Vec<f64> = (0..nc).map(|k| max_of(q_inv_r, k)).collect();
    let c: Vec<f64> = (0..nc).map(|k| max_of(q_inv_c, k)).collect();
    let cost = investment_cost(network, &r, &c);
    UnionPlan { q_inv_r: r, q_inv_c: c, cost }
}

/// Upper bound from the union of the scenario investments.
pub fn compute_upper_bound(network: &Network, solutions: &[SubproblemSolution]) -> UnionPlan {
    let r: Vec<&[f64]> = solutions.iter().map(|s| s.q_inv_r.as_slice()).collect();
    let c: Vec<&[f64]> = solutions.iter().map(|s| s.q_inv_c.as_slice()).collect();
    union_plan(network, &r, &c)
}

/// The subproblem with its investments pinned to a plan.
struct Pinned<'a> {
    inner: BlockProblem<'a>,
    fixed: Vec<(usize, f64)>,
}

impl NlpProblem for Pinned<'_> {
    fn num_variables(&self) -> usize {
        self.inner.num_variables()
    }
    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        self.inner.bounds(lower, upper);
        for &(i, v) in &self.fixed {
            lower[i] = v;
            upper[i] = v;
        }
    }
    fn num_equalities(&self) -> usize {
        self.inner.num_equalities()
    }
    fn num_inequalities(&self) -> usize {
        self.inner.num_inequalities()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        self.inner.objective(x)
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.inner.gradient(x, grad)
    }
    fn constraints(&self, x: &[f64], values: &mut [f64]) {
        self.inner.constraints(x, values)
    }
    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.inner.jacobian_structure()
    }
    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) {
        self.inner.jacobian_values(x, values)
    }
    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.inner.hessian_structure()
    }
    fn hessian_values(&self, x: &[f64], obj_factor: f64, multipliers: &[f64], values: &mut [f64]) {
        self.inner.hessian_values(x, obj_factor, multipliers, values)
    }
}

/// Re-solves one scenario with the investments fixed at `plan`; true when
/// the operating problem is feasible.
pub fn verify_plan(
    network: &Network,
    scenario: &Scenario,
    plan: &UnionPlan,
    opts: &SubproblemOptions,
) -> Result<bool, SubproblemError> {
    let spec = SubproblemSpec::plain(scenario.id.clone(), network.candidates.len());
    let inner = build(network, scenario, &spec, opts)?;
    let layout = &inner.blocks()[0].layout;
    let mut fixed = Vec::new();
    for k in 0..network.candidates.len() {
        fixed.push((layout.q_inv_r[k], network.to_pu(plan.q_inv_r[k])));
        fixed.push((layout.q_inv_c[k], network.to_pu(plan.q_inv_c[k])));
    }
    let problem = Pinned { inner, fixed };
    let mut start = problem.inner.start();
    for &(i, v) in &problem.fixed {
        start[i] = v;
    }
    let nlp = varplan_ipm::solve(&problem, &start, &opts.solver)?;
    let view = problem.inner.blocks()[0].extract(network, scenario, &nlp, opts);
    Ok(view.status == Status::Converged)
}

/// The spec whose probability-weighted optimum is the Lagrangian bound.
pub fn lower_bound_spec(scenario_id: &str, terms: &PhTerms) -> SubproblemSpec {
    SubproblemSpec {
        scenario_id: scenario_id.to_string(),
        mode: ObjectiveMode::LinearOnly,
        terms: PhTerms {
            rho_r: vec![0.0; terms.rho_r.len()],
            rho_c: vec![0.0; terms.rho_c.len()],
            ..terms.clone()
        },
    }
}

/// `Σ Pr(s)·objective_s` over linear-only solutions; `None` when any of
/// them failed.
pub fn aggregate_lower_bound(probabilities: &[f64], solutions: &[SubproblemSolution]) -> Option<f64> {
    if solutions.iter().any(|s| !s.is_converged()) {
        return None;
    }
    Some(stable_sum(probabilities.iter().zip(solutions).map(|(p, s)| p * s.objective)))
}

/// Solves every scenario in linear-only mode with its weights and averages
/// the objectives. `terms[s]` belongs to `scenarios[s]`.
pub fn compute_lower_bound(
    network: &Network,
    scenarios: &[Scenario],
    terms: &[PhTerms],
    opts: &SubproblemOptions,
) -> Result<Option<f64>, SubproblemError> {
    let mut sols = Vec::with_capacity(scenarios.len());
    for (sc, t) in scenarios.iter().zip(terms) {
        sols.push(solve_scenario(network, sc, &lower_bound_spec(&sc.id, t), None, opts)?);
    }
    let total: f64 = scenarios.iter().map(|s| s.probability).sum();
    let probs: Vec<f64> = scenarios.iter().map(|s| s.probability / total).collect();
    Ok(aggregate_lower_bound(&probs, &sols))
}

/// `(ub − lb)/ub`. A zero upper bound gives zero gap unless the lower
/// bound is meaningfully negative.
pub fn relative_gap(lb: f64, ub: f64) -> f64 {
    if ub > 0.0 {
        (ub - lb) / ub
    } else if lb >= -1e-9 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioInvestment {
    pub scenario_id: String,
    pub q_inv_r: Vec<f64>,
    pub q_inv_c: Vec<f64>,
}

/// One row of the convergence history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub napsd_r: Option<f64>,
    pub napsd_c: Option<f64>,
    pub lb: Option<f64>,
    pub ub: f64,
    pub gap: Option<f64>,
    /// Mvar of the union plan.
    pub total_mvar: f64,
    pub best_cost: f64,
    pub seconds: f64,
    /// Set when the lower bound exceeds the upper bound, which a locally
    /// solved nonconvex subproblem can cause.
    pub lb_above_ub: bool,
    /// Largest `|Σ Pr·w| / max(1, Σ |w|)` over candidates and kinds.
    pub weight_sum_residual: f64,
    /// Smallest `I + w` over candidates, kinds and scenarios.
    pub min_effective_cost: f64,
    /// Some candidate's union investment sits at its cap.
    pub saturated: bool,
    pub investments: Vec<ScenarioInvestment>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    #[test]
    fn napsd_hand_values() {
        assert_eq!(napsd(&[vec![10.0], vec![10.0]], &[10.0], NapsdNormalization::Scenarios), 0.0);
        let v = napsd(&[vec![12.0], vec![8.0]], &[10.0], NapsdNormalization::Scenarios);
        assert!((v - 0.2).abs() <= 1e-12);
        assert_eq!(napsd(&[vec![3.0], vec![1.0]], &[0.0], NapsdNormalization::Scenarios), 0.0);
    }

    #[test]
    fn napsd_normalizations_differ_by_term_count() {
        let inv = [vec![12.0, 0.0, 4.0], vec![8.0, 0.0, 6.0]];
        let avg = [10.0, 0.0, 5.0];
        let s = napsd(&inv, &avg, NapsdNormalization::Scenarios);
        let t = napsd(&inv, &avg, NapsdNormalization::Terms);
        assert!((s - 0.4).abs() < 1e-12);
        assert!((t - 0.2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn napsd_is_scale_invariant(
            inv in prop::collection::vec(prop::collection::vec(0.0f64..500.0, 4), 1..6),
            avg in prop::collection::vec(0.0f64..500.0, 4),
            lambda in 1e-3f64..1e3,
        ) {
            let scaled: Vec<Vec<f64>> = inv.iter().map(|v| v.iter().map(|x| x * lambda).collect()).collect();
            let avg_s: Vec<f64> = avg.iter().map(|x| x * lambda).collect();
            // keep the filter decision unchanged under scaling
            prop_assume!(avg.iter().zip(&avg_s).all(|(a, b)| (*a > NAPSD_EPS) == (*b > NAPSD_EPS)));
            let a = napsd(&inv, &avg, NapsdNormalization::Scenarios);
            let b = napsd(&scaled, &avg_s, NapsdNormalization::Scenarios);
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn averages_by_hand() {
        let a = weighted_average(&[&[12.0], &[8.0]], &[0.5, 0.5]);
        assert_eq!(a, vec![10.0]);
        let b = weighted_average(&[&[0.0], &[100.0]], &[0.9, 0.1]);
        assert!((b[0] - 10.0).abs() < 1e-12);
        let c = weighted_average(&[&[7.5, 1.0], &[7.5, 1.0], &[7.5, 1.0]], &[0.2, 0.3, 0.5]);
        assert_eq!(c, vec![7.5, 1.0]);
    }

    #[test]
    fn union_by_hand() {
        let mut net = fixtures::three_bus().network;
        net.candidates.truncate(2);
        let a_r = [10.0, 0.0];
        let a_c = [0.0, 0.0];
        let b_r = [5.0, 0.0];
        let b_c = [0.0, 3.0];
        let u = union_plan(&net, &[&a_r, &b_r], &[&a_c, &b_c]);
        assert_eq!(u.q_inv_r, vec![10.0, 0.0]);
        assert_eq!(u.q_inv_c, vec![0.0, 3.0]);
        let expect = 10.0 * net.candidates[0].cost_reactor + 3.0 * net.candidates[1].cost_capacitor;
        assert!((u.cost - expect).abs() < 1e-12);
        for (r, c) in [(&a_r, &a_c), (&b_r, &b_c)] {
            assert!(u.cost >= investment_cost(&net, r, c));
        }
    }

    #[test]
    fn identical_scenarios_union_is_each() {
        let net = fixtures::two_bus().network;
        let u = union_plan(&net, &[&[2.0], &[2.0]], &[&[40.0], &[40.0]]);
        assert_eq!(u.cost, investment_cost(&net, &[2.0], &[40.0]));
    }

    #[test]
    fn gap_conventions() {
        assert_eq!(relative_gap(90.0, 100.0), 0.1);
        assert_eq!(relative_gap(0.0, 0.0), 0.0);
        assert_eq!(relative_gap(-1.0, 0.0), f64::INFINITY);
        assert!(relative_gap(101.0, 100.0) < 0.0);
    }

    #[test]
    fn lower_bound_needs_every_solution() {
        let case = fixtures::two_bus();
        let spec = SubproblemSpec::plain("s1", 1);
        let mut a = solve_scenario(&case.network, &case.scenarios[0], &spec, None, &SubproblemOptions::default()).unwrap();
        let b = a.clone();
        assert!(aggregate_lower_bound(&[0.5, 0.5], &[a.clone(), b.clone()]).is_some());
        a.status = Status::IterationLimit;
        assert!(aggregate_lower_bound(&[0.5, 0.5], &[a, b]).is_none());
    }

    #[test]
    fn union_plan_is_feasible_everywhere() {
        let case = fixtures::three_bus();
        let opts = SubproblemOptions::default();
        let sols: Vec<_> = case
            .scenarios
            .iter()
            .map(|sc| solve_scenario(&case.network, sc, &SubproblemSpec::plain(sc.id.clone(), 3), None, &opts).unwrap())
            .collect();
        let u = compute_upper_bound(&case.network, &sols);
        for sc in &case.scenarios {
            assert!(verify_plan(&case.network, sc, &u, &opts).unwrap());
        }
        let mut short = u.clone();
        short.q_inv_c.iter_mut().for_each(|q| *q *= 0.5);
        assert!(!verify_plan(&case.network, &case.scenarios[0], &short, &opts).unwrap());
    }
}
