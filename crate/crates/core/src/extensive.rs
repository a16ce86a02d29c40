//! Deterministic equivalent: every scenario in one NLP with a single set of
//! investment variables. Used as a reference for the decomposition.

use serde::Serialize;
use varplan_ipm::{solve, Status};

use crate::network::{Network, Scenario};
use crate::power_flow::VarLayout;
use crate::subproblem::{
    objective_scale, BlockProblem, ScenarioBlock, SubproblemError, SubproblemOptions,
    SubproblemSolution, SubproblemSpec,
};

#[derive(Debug, Clone, Serialize)]
pub struct ExtensiveSolution {
    #[serde(serialize_with = "status_str")]
    pub status: Status,
    /// Shared investments, Mvar per candidate.
    pub q_inv_r: Vec<f64>,
    pub q_inv_c: Vec<f64>,
    /// Investment cost of the shared plan.
    pub cost: f64,
    pub iterations: usize,
    /// Per-scenario views of the joint solution.
    pub scenarios: Vec<SubproblemSolution>,
}

fn status_str<S: serde::Serializer>(s: &Status, ser: S) -> Result<S::Ok, S::Error> {
    ser.serialize_str(&s.to_string())
}

impl ExtensiveSolution {
    pub fn is_converged(&self) -> bool {
        self.status.is_converged() && self.scenarios.iter().all(|s| s.is_converged())
    }

    pub fn total_investment(&self) -> f64 {
        self.q_inv_r.iter().chain(&self.q_inv_c).sum()
    }
}

/// Minimizes the investment cost subject to every scenario's AC constraints.
/// Scenario blocks are weighted by probability, which leaves the shared
/// investment term at its full cost.
pub fn solve_extensive(
    network: &Network,
    scenarios: &[Scenario],
    opts: &SubproblemOptions,
) -> Result<ExtensiveSolution, SubproblemError> {
    let nc = network.candidates.len();
    let scale = objective_scale(network);
    let mut blocks = Vec::with_capacity(scenarios.len());
    let mut next = 0;
    let mut shared: Option<(Vec<usize>, Vec<usize>)> = None;
    for (s, sc) in scenarios.iter().enumerate() {
        let layout = match &shared {
            None => VarLayout::new(network, next),
            Some((r, c)) => VarLayout::with_shared_investment(network, next, r, c),
        };
        next = layout.end;
        if shared.is_none() {
            shared = Some((layout.q_inv_r.clone(), layout.q_inv_c.clone()));
        }
        let spec = SubproblemSpec::plain(sc.id.clone(), nc);
        blocks.push(ScenarioBlock::new(
            network,
            sc,
            &spec,
            layout,
            sc.probability,
            scale,
            s == 0,
            opts.mva_sides,
        )?);
    }
    let problem = BlockProblem::new(network, scenarios.iter().collect(), blocks);
    let nlp = solve(&problem, &problem.start(), &opts.solver)?;
    let views: Vec<SubproblemSolution> = problem
        .blocks()
        .iter()
        .zip(scenarios)
        .map(|(b, sc)| b.extract(network, sc, &nlp, opts))
        .collect();
    let first = views.first();
    let q_inv_r = first.map(|v| v.q_inv_r.clone()).unwrap_or_default();
    let q_inv_c = first.map(|v| v.q_inv_c.clone()).unwrap_or_default();
    let cost = network
        .candidates
        .iter()
        .enumerate()
        .map(|(k, c)| c.cost_reactor * q_inv_r[k] + c.cost_capacitor * q_inv_c[k])
        .sum();
    Ok(ExtensiveSolution {
        status: nlp.status,
        q_inv_r,
        q_inv_c,
        cost,
        iterations: nlp.iterations,
        scenarios: views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::subproblem::solve_scenario;

    #[test]
    fn single_scenario_matches_subproblem() {
        let case = fixtures::two_bus();
        let opts = SubproblemOptions::default();
        let one = &case.scenarios[..1];
        let mut sc = one.to_vec();
        sc[0].probability = 1.0;
        let ef = solve_extensive(&case.network, &sc, &opts).unwrap();
        let sub = solve_scenario(&case.network, &sc[0], &SubproblemSpec::plain("s1", 1), None, &opts).unwrap();
        assert!(ef.is_converged());
        assert!((ef.q_inv_c[0] - sub.q_inv_c[0]).abs() < 1e-4);
        assert!((ef.cost - sub.parts.investment).abs() < 1e-2);
    }

    #[test]
    fn shared_plan_covers_the_worst_scenario() {
        let case = fixtures::two_bus();
        let ef = solve_extensive(&case.network, &case.scenarios, &SubproblemOptions::default()).unwrap();
        assert!(ef.is_converged());
        assert!((ef.q_inv_c[0] - 150.0).abs() < 2.0, "{}", ef.q_inv_c[0]);
        for view in &ef.scenarios {
            assert_eq!(view.q_inv_c, ef.q_inv_c);
        }
    }
}
