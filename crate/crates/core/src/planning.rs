//! Study workflow around the hedging loop: candidate pre-selection and
//! rounding continuous requirements onto catalog equipment.

use serde::Serialize;
use thiserror::Error;

use crate::network::{EquipmentCatalog, Module, ModuleKind, Network, Scenario, VarCandidate};
use crate::subproblem::{
    solve_scenario, SubproblemError, SubproblemOptions, SubproblemSolution, SubproblemSpec,
};

/// Mvar below which a bus is considered to have no investment.
pub const CANDIDATE_EPS: f64 = 0.1;

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error("scenario {scenario} is infeasible with every candidate available: {status}")]
    Infeasible { scenario: String, status: String },
    #[error("catalog has no {0} modules")]
    EmptyCatalog(ModuleKind),
    #[error("requirement at bus {bus} must be finite and >= 0")]
    BadRequirement { bus: usize },
    #[error(transparent)]
    Subproblem(#[from] SubproblemError),
}

/// Plain-cost solves with the network's full candidate list.
pub fn plain_solutions(
    network: &Network,
    scenarios: &[Scenario],
    opts: &SubproblemOptions,
) -> Result<Vec<SubproblemSolution>, PlanningError> {
    let nc = network.candidates.len();
    let mut out = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let sol = solve_scenario(network, sc, &SubproblemSpec::plain(sc.id.clone(), nc), None, opts)?;
        if !sol.is_converged() {
            return Err(PlanningError::Infeasible { scenario: sc.id.clone(), status: sol.status.to_string() });
        }
        out.push(sol);
    }
    Ok(out)
}

/// Candidates whose largest plain-cost investment over the scenarios
/// exceeds `threshold` Mvar.
pub fn select_candidates(
    network: &Network,
    scenarios: &[Scenario],
    opts: &SubproblemOptions,
    threshold: f64,
) -> Result<Vec<VarCandidate>, PlanningError> {
    let sols = plain_solutions(network, scenarios, opts)?;
    Ok(network
        .candidates
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            sols.iter()
                .map(|s| s.q_inv_r[*k] + s.q_inv_c[*k])
                .fold(0.0, f64::max)
                > threshold
        })
        .map(|(_, c)| c.clone())
        .collect())
}

/// Continuous requirement at one bus, Mvar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Requirement {
    pub bus: usize,
    pub reactor: f64,
    pub capacitor: f64,
}

impl Requirement {
    pub fn of(&self, kind: ModuleKind) -> f64 {
        match kind {
            ModuleKind::Reactor => self.reactor,
            ModuleKind::Capacitor => self.capacitor,
        }
    }
}

/// Per-bus requirements from per-candidate investments. Values at or
/// below `eps` are treated as zero.
pub fn requirements(network: &Network, q_inv_r: &[f64], q_inv_c: &[f64], eps: f64) -> Vec<Requirement> {
    let clip = |v: f64| if v > eps { v } else { 0.0 };
    network
        .candidates
        .iter()
        .enumerate()
        .map(|(k, c)| Requirement { bus: c.bus, reactor: clip(q_inv_r[k]), capacitor: clip(q_inv_c[k]) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusPlan {
    pub bus: usize,
    pub modules: Vec<Module>,
    pub bay: bool,
    pub requirement_r: f64,
    pub requirement_c: f64,
    pub covered_r: f64,
    pub covered_c: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretePlan {
    /// Only buses that receive equipment, in input order.
    pub buses: Vec<BusPlan>,
    pub total_cost: f64,
}

impl DiscretePlan {
    pub fn bus(&self, bus: usize) -> Option<&BusPlan> {
        self.buses.iter().find(|b| b.bus == bus)
    }
}

/// Cheapest multiset of modules whose sizes add up to at least `need`.
/// Counts are searched exhaustively up to `need / size + 1` per module type;
/// ties go to fewer modules, then to the earlier catalog entry.
pub fn cheapest_cover(modules: &[&Module], need: f64) -> Vec<Module> {
    if need <= 0.0 || modules.is_empty() {
        return Vec::new();
    }
    let mut search = CoverSearch {
        modules,
        bounds: modules.iter().map(|m| (need / m.size).floor() as usize + 1).collect(),
        need,
        counts: vec![0; modules.len()],
        best: None,
    };
    search.walk(0, 0.0, 0.0);
    let (_, _, counts) = search.best.expect("the largest count of any module covers the need");
    let mut out = Vec::new();
    for (m, &c) in modules.iter().zip(&counts) {
        out.extend(std::iter::repeat_n(**m, c));
    }
    out
}

struct CoverSearch<'a> {
    modules: &'a [&'a Module],
    bounds: Vec<usize>,
    need: f64,
    counts: Vec<usize>,
    /// (cost, module count, counts)
    best: Option<(f64, usize, Vec<usize>)>,
}

impl CoverSearch<'_> {
    fn walk(&mut self, i: usize, size: f64, cost: f64) {
        if self.best.as_ref().is_some_and(|b| cost > b.0) {
            return;
        }
        if size >= self.need - 1e-9 {
            let n: usize = self.counts.iter().sum();
            let better = match &self.best {
                None => true,
                Some((bc, bn, _)) => cost < *bc || (cost == *bc && n < *bn),
            };
            if better {
                self.best = Some((cost, n, self.counts.clone()));
            }
            return;
        }
        if i == self.modules.len() {
            return;
        }
        let m = self.modules[i];
        for c in 0..=self.bounds[i] {
            self.counts[i] = c;
            self.walk(i + 1, size + c as f64 * m.size, cost + c as f64 * m.cost);
        }
        self.counts[i] = 0;
    }
}

/// Rounds each bus and kind onto catalog modules independently and adds
/// one bay per bus that receives anything.
pub fn discretize(reqs: &[Requirement], catalog: &EquipmentCatalog) -> Result<DiscretePlan, PlanningError> {
    let mut buses = Vec::new();
    for r in reqs {
        if !(r.reactor >= 0.0 && r.reactor.is_finite() && r.capacitor >= 0.0 && r.capacitor.is_finite()) {
            return Err(PlanningError::BadRequirement { bus: r.bus });
        }
        let mut modules = Vec::new();
        for kind in ModuleKind::ALL {
            let need = r.of(kind);
            if need <= 0.0 {
                continue;
            }
            let options: Vec<&Module> = catalog.modules_of(kind).collect();
            if options.is_empty() {
                return Err(PlanningError::EmptyCatalog(kind));
            }
            modules.extend(cheapest_cover(&options, need));
        }
        if modules.is_empty() {
            continue;
        }
        let covered = |k: ModuleKind| modules.iter().filter(|m| m.kind == k).map(|m| m.size).sum::<f64>();
        let cost = modules.iter().map(|m| m.cost).sum::<f64>() + catalog.bay_cost;
        buses.push(BusPlan {
            bus: r.bus,
            covered_r: covered(ModuleKind::Reactor),
            covered_c: covered(ModuleKind::Capacitor),
            modules,
            bay: true,
            requirement_r: r.reactor,
            requirement_c: r.capacitor,
            cost,
        });
    }
    let total_cost = buses.iter().map(|b| b.cost).sum();
    Ok(DiscretePlan { buses, total_cost })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusChange {
    pub bus: usize,
    pub added: Vec<Module>,
    pub removed: Vec<Module>,
    /// +1 when the bus gains a bay, −1 when it loses one.
    pub bay_change: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SavingsReport {
    pub baseline_cost: f64,
    pub final_cost: f64,
    pub savings: f64,
    /// Fraction of the baseline cost.
    pub relative_savings: f64,
    pub changes: Vec<BusChange>,
}

fn multiset_minus(a: &[Module], b: &[Module]) -> Vec<Module> {
    let mut rest: Vec<&Module> = b.iter().collect();
    let mut out = Vec::new();
    for m in a {
        if let Some(pos) = rest.iter().position(|r| *r == m) {
            rest.remove(pos);
        } else {
            out.push(*m);
        }
    }
    out
}

/// Cost difference between a baseline plan and a final plan with the
/// per-bus module changes.
pub fn plan_cost_report(baseline: &DiscretePlan, final_plan: &DiscretePlan) -> SavingsReport {
    let mut bus_ids: Vec<usize> = baseline.buses.iter().chain(&final_plan.buses).map(|b| b.bus).collect();
    bus_ids.sort_unstable();
    bus_ids.dedup();
    let empty = Vec::new();
    let mut changes = Vec::new();
    for id in bus_ids {
        let before = baseline.bus(id);
        let after = final_plan.bus(id);
        let mb = before.map_or(&empty, |b| &b.modules);
        let ma = after.map_or(&empty, |b| &b.modules);
        let added = multiset_minus(ma, mb);
        let removed = multiset_minus(mb, ma);
        let bay_change = after.is_some() as i8 - before.is_some() as i8;
        if !added.is_empty() || !removed.is_empty() || bay_change != 0 {
            changes.push(BusChange { bus: id, added, removed, bay_change });
        }
    }
    let savings = baseline.total_cost - final_plan.total_cost;
    SavingsReport {
        baseline_cost: baseline.total_cost,
        final_cost: final_plan.total_cost,
        savings,
        relative_savings: if baseline.total_cost > 0.0 { savings / baseline.total_cost } else { 0.0 },
        changes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn req(bus: usize, reactor: f64, capacitor: f64) -> Requirement {
        Requirement { bus, reactor, capacitor }
    }

    #[test]
    fn single_module_examples() {
        let cat = fixtures::standard_catalog();
        let p = discretize(&[req(1, 11.8, 0.0)], &cat).unwrap();
        assert_eq!(p.buses[0].modules.len(), 1);
        assert_eq!(p.buses[0].modules[0].size, 15.0);
        assert_eq!(p.total_cost, 1810.0 + 3217.0);
        let p = discretize(&[req(1, 0.0, 9.3)], &cat).unwrap();
        assert_eq!(p.buses[0].modules[0].size, 10.0);
        assert_eq!(p.total_cost, 362.0 + 3217.0);
        let p = discretize(&[req(1, 0.0, 0.0)], &cat).unwrap();
        assert!(p.buses.is_empty());
        assert_eq!(p.total_cost, 0.0);
    }

    #[test]
    fn mixed_bus_pays_one_bay() {
        let cat = fixtures::standard_catalog();
        let p = discretize(&[req(4, 10.0, 10.0)], &cat).unwrap();
        assert_eq!(p.total_cost, 1810.0 + 362.0 + 3217.0);
        assert_eq!(p.buses[0].covered_r, 15.0);
        assert_eq!(p.buses[0].covered_c, 10.0);
    }

    #[test]
    fn cover_matches_brute_force() {
        let cat = fixtures::standard_catalog();
        let caps: Vec<&Module> = cat.modules_of(ModuleKind::Capacitor).collect();
        for tenth in 0..=600 {
            let need = tenth as f64 / 10.0;
            let cover = cheapest_cover(&caps, need);
            let cost: f64 = cover.iter().map(|m| m.cost).sum();
            let mut brute = f64::INFINITY;
            for a in 0..=13 {
                for b in 0..=7 {
                    for c in 0..=5 {
                        let size = 5.0 * a as f64 + 10.0 * b as f64 + 15.0 * c as f64;
                        if size >= need {
                            brute = brute.min(313.0 * a as f64 + 362.0 * b as f64 + 418.0 * c as f64);
                        }
                    }
                }
            }
            assert_eq!(cost, brute, "need {need}");
            assert!(cover.iter().map(|m| m.size).sum::<f64>() >= need);
        }
    }

    #[test]
    fn empty_kind_is_an_error() {
        let mut cat = fixtures::standard_catalog();
        cat.modules.retain(|m| m.kind == ModuleKind::Capacitor);
        assert!(matches!(discretize(&[req(1, 1.0, 0.0)], &cat), Err(PlanningError::EmptyCatalog(ModuleKind::Reactor))));
        assert!(discretize(&[req(1, 0.0, 1.0)], &cat).is_ok());
        assert!(matches!(discretize(&[req(1, -1.0, 0.0)], &cat), Err(PlanningError::BadRequirement { bus: 1 })));
    }

    proptest! {
        #[test]
        fn discreteness_never_cheapens(r in 0.0f64..200.0, c in 0.0f64..200.0) {
            let cat = fixtures::standard_catalog();
            let p = discretize(&[req(1, r, c)], &cat).unwrap();
            let continuous = r * cat.cheapest_unit_cost(ModuleKind::Reactor).unwrap()
                + c * cat.cheapest_unit_cost(ModuleKind::Capacitor).unwrap();
            prop_assert!(p.total_cost >= continuous - 1e-9);
            let b = &p.buses;
            if let Some(b) = b.first() {
                prop_assert!(b.covered_r >= r && b.covered_c >= c);
            }
        }

        #[test]
        fn discretize_is_monotone(r in 0.0f64..120.0, c in 0.0f64..120.0, dr in 0.0f64..30.0, dc in 0.0f64..30.0) {
            let cat = fixtures::standard_catalog();
            let a = discretize(&[req(1, r, c)], &cat).unwrap().total_cost;
            let b = discretize(&[req(1, r + dr, c + dc)], &cat).unwrap().total_cost;
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn identical_plans_save_nothing() {
        let cat = fixtures::standard_catalog();
        let p = discretize(&[req(1, 11.8, 0.0), req(2, 0.0, 9.3)], &cat).unwrap();
        let r = plan_cost_report(&p, &p);
        assert_eq!(r.savings, 0.0);
        assert!(r.changes.is_empty());
    }

    #[test]
    fn removing_a_bus_saves_its_modules_and_bay() {
        let cat = fixtures::standard_catalog();
        let before = discretize(&[req(1, 10.0, 0.0), req(2, 0.0, 9.3), req(3, 0.0, 20.0)], &cat).unwrap();
        let after = discretize(&[req(2, 0.0, 9.3), req(3, 0.0, 20.0)], &cat).unwrap();
        let r = plan_cost_report(&before, &after);
        assert_eq!(r.savings, 1810.0 + 3217.0);
        assert_eq!(r.changes.len(), 1);
        assert_eq!(r.changes[0].bus, 1);
        assert_eq!(r.changes[0].bay_change, -1);
        assert_eq!(r.changes[0].removed.len(), 1);
    }

    #[test]
    fn four_substation_study() {
        let cat = fixtures::standard_catalog();
        let first = [req(1, 10.0, 0.0), req(2, 11.8, 0.0), req(3, 0.0, 10.0), req(4, 0.0, 9.3)];
        let p0 = discretize(&first, &cat).unwrap();
        let p1 = discretize(&first[1..], &cat).unwrap();
        assert_eq!(p0.total_cost, 2.0 * (1810.0 + 3217.0) + 2.0 * (362.0 + 3217.0));
        assert_eq!(p1.total_cost, 1810.0 + 3217.0 + 2.0 * (362.0 + 3217.0));
        let r = plan_cost_report(&p0, &p1);
        assert_eq!(r.savings, 5027.0);
        assert!((r.relative_savings - 5027.0 / 17212.0).abs() < 1e-12);
    }

    #[test]
    fn requirements_drop_residue() {
        let net = fixtures::three_bus().network;
        let r = requirements(&net, &[0.0, 0.05, 3.0], &[0.2, 0.0, 0.0], CANDIDATE_EPS);
        assert_eq!(r[0], req(1, 0.0, 0.2));
        assert_eq!(r[1], req(2, 0.0, 0.0));
        assert_eq!(r[2], req(3, 3.0, 0.0));
    }
}
