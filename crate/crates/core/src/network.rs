//! Network, scenario and catalog types plus the JSON case file.
//!
//! Files carry MW/Mvar/MVA and degrees; everything in memory is per-unit on
//! `base_mva` and radians. Candidate costs and caps stay in currency and Mvar.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub name: String,
    pub v_min: f64,
    pub v_max: f64,
    pub is_slack: bool,
}

/// π-model branch with an ideal tap-changing, phase-shifting transformer on
/// the from side. A plain line has `tap_min == tap_max == 1` and zero phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub g: f64,
    pub b: f64,
    pub charging: f64,
    /// Apparent power limit, per-unit.
    pub s_max: f64,
    pub tap_min: f64,
    pub tap_max: f64,
    /// Radians.
    pub phase_min: f64,
    pub phase_max: f64,
}

impl Branch {
    pub fn has_tap(&self) -> bool {
        self.tap_min < self.tap_max
    }

    pub fn has_phase(&self) -> bool {
        self.phase_min < self.phase_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarCandidate {
    pub bus: usize,
    /// Currency per Mvar.
    pub cost_reactor: f64,
    pub cost_capacitor: f64,
    pub max_mvar: f64,
}

impl VarCandidate {
    pub fn cost(&self, kind: ModuleKind) -> f64 {
        match kind {
            ModuleKind::Reactor => self.cost_reactor,
            ModuleKind::Capacitor => self.cost_capacitor,
        }
    }
}

/// One operating condition. Per-bus vectors follow the network's bus order
/// and are per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub probability: f64,
    pub p_gen: Vec<f64>,
    pub p_dem: Vec<f64>,
    pub q_dem: Vec<f64>,
    pub q_gen_min: Vec<f64>,
    pub q_gen_max: Vec<f64>,
    /// Bounds on the slack bus active generation; may be infinite.
    pub p_slack_min: f64,
    pub p_slack_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Reactor,
    Capacitor,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 2] = [ModuleKind::Reactor, ModuleKind::Capacitor];
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModuleKind::Reactor => f.write_str("reactor"),
            ModuleKind::Capacitor => f.write_str("capacitor"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Module {
    pub kind: ModuleKind,
    /// Mvar.
    pub size: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquipmentCatalog {
    pub modules: Vec<Module>,
    pub bay_cost: f64,
}

impl EquipmentCatalog {
    pub fn modules_of(&self, kind: ModuleKind) -> impl Iterator<Item = &Module> {
        self.modules.iter().filter(move |m| m.kind == kind)
    }

    /// Lowest cost per Mvar among modules of `kind`.
    pub fn cheapest_unit_cost(&self, kind: ModuleKind) -> Option<f64> {
        self.modules_of(kind)
            .map(|m| m.cost / m.size)
            .min_by(|a, b| a.total_cmp(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub candidates: Vec<VarCandidate>,
    pub base_mva: f64,
}

impl Network {
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_index(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.is_slack)
    }

    /// `(from, to)` bus positions for every branch. Panics on dangling ids,
    /// which `validate` reports as fatal.
    pub fn branch_ends(&self) -> Vec<(usize, usize)> {
        let index = self.id_map();
        self.branches
            .iter()
            .map(|br| (index[&br.from_bus], index[&br.to_bus]))
            .collect()
    }

    pub fn candidate_bus_indices(&self) -> Vec<usize> {
        let index = self.id_map();
        self.candidates.iter().map(|c| index[&c.bus]).collect()
    }

    fn id_map(&self) -> HashMap<usize, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn to_pu(&self, mw: f64) -> f64 {
        mw / self.base_mva
    }

    pub fn from_pu(&self, pu: f64) -> f64 {
        pu * self.base_mva
    }

    /// Same network with a different candidate list.
    pub fn with_candidates(&self, candidates: Vec<VarCandidate>) -> Network {
        Network {
            candidates,
            ..self.clone()
        }
    }

    fn is_connected(&self) -> bool {
        if self.buses.is_empty() {
            return false;
        }
        let index = self.id_map();
        let mut adj = vec![Vec::new(); self.buses.len()];
        for br in &self.branches {
            if let (Some(&f), Some(&t)) = (index.get(&br.from_bus), index.get(&br.to_bus)) {
                adj[f].push(t);
                adj[t].push(f);
            }
        }
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub network: Network,
    pub scenarios: Vec<Scenario>,
    pub catalog: EquipmentCatalog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Fatal,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

impl Finding {
    fn fatal(message: impl Into<String>) -> Self {
        Finding {
            severity: Severity::Fatal,
            message: message.into(),
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Finding {
            severity: Severity::Warning,
            message: message.into(),
        }
    }

    pub fn is_fatal(&self) -> bool {
        self.severity == Severity::Fatal
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.severity {
            Severity::Fatal => write!(f, "error: {}", self.message),
            Severity::Warning => write!(f, "warning: {}", self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read case file: {0}")]
    Io(#[from] std::io::Error),
    #[error("case schema: {0}")]
    Schema(String),
    #[error("{0}")]
    Invalid(String),
}

/// Relative mismatch between total fixed generation and total demand above
/// which a scenario is flagged.
pub const BALANCE_WARNING_FRACTION: f64 = 0.3;

/// Checks every invariant. Fatal findings make the case unusable; warnings
/// are informational.
pub fn validate(network: &Network, scenarios: &[Scenario]) -> Vec<Finding> {
    let mut out = Vec::new();
    let n = network.buses.len();

    if !(network.base_mva > 0.0) {
        out.push(Finding::fatal("base_mva must be positive"));
    }
    if n == 0 {
        out.push(Finding::fatal("network has no buses"));
        return out;
    }

    let mut ids = HashSet::new();
    for bus in &network.buses {
        if !ids.insert(bus.id) {
            out.push(Finding::fatal(format!("duplicate bus id {}", bus.id)));
        }
        if !(bus.v_min > 0.0 && bus.v_min < bus.v_max) {
            out.push(Finding::fatal(format!(
                "bus {}: need 0 < v_min < v_max, got [{}, {}]",
                bus.id, bus.v_min, bus.v_max
            )));
        }
    }
    match network.buses.iter().filter(|b| b.is_slack).count() {
        0 => out.push(Finding::fatal("no slack bus")),
        1 => {}
        k => out.push(Finding::fatal(format!("{k} slack buses, expected exactly one"))),
    }

    let mut branch_ids = HashSet::new();
    for br in &network.branches {
        if !branch_ids.insert(br.id) {
            out.push(Finding::fatal(format!("duplicate branch id {}", br.id)));
        }
        for end in [br.from_bus, br.to_bus] {
            if !ids.contains(&end) {
                out.push(Finding::fatal(format!("branch {}: unknown bus {end}", br.id)));
            }
        }
        if br.from_bus == br.to_bus {
            out.push(Finding::fatal(format!("branch {}: from_bus equals to_bus", br.id)));
        }
        if !(br.s_max > 0.0) {
            out.push(Finding::fatal(format!("branch {}: s_max must be positive", br.id)));
        }
        if !(br.tap_min > 0.0 && br.tap_min <= br.tap_max) {
            out.push(Finding::fatal(format!(
                "branch {}: need 0 < tap_min <= tap_max",
                br.id
            )));
        }
        if !(br.phase_min <= br.phase_max) {
            out.push(Finding::fatal(format!("branch {}: phase_min > phase_max", br.id)));
        }
        if br.g == 0.0 && br.b == 0.0 {
            out.push(Finding::fatal(format!("branch {}: zero series admittance", br.id)));
        }
    }
    if !network.is_connected() {
        out.push(Finding::fatal("network is disconnected"));
    }

    let mut cand_buses = HashSet::new();
    for c in &network.candidates {
        if !ids.contains(&c.bus) {
            out.push(Finding::fatal(format!("candidate references unknown bus {}", c.bus)));
        }
        if !cand_buses.insert(c.bus) {
            out.push(Finding::fatal(format!("duplicate candidate at bus {}", c.bus)));
        }
        if !(c.cost_reactor > 0.0 && c.cost_capacitor > 0.0 && c.max_mvar > 0.0) {
            out.push(Finding::fatal(format!(
                "candidate at bus {}: costs and max_mvar must be positive",
                c.bus
            )));
        }
    }

    if scenarios.is_empty() {
        out.push(Finding::fatal("no scenarios"));
        return out;
    }
    let mut scenario_ids = HashSet::new();
    let mut total_probability = 0.0;
    for sc in scenarios {
        if !scenario_ids.insert(sc.id.as_str()) {
            out.push(Finding::fatal(format!("duplicate scenario id {}", sc.id)));
        }
        total_probability += sc.probability;
        if !(0.0..=1.0).contains(&sc.probability) {
            out.push(Finding::fatal(format!(
                "scenario {}: probability {} outside [0, 1]",
                sc.id, sc.probability
            )));
        }
        let vectors = [
            ("p_gen", &sc.p_gen),
            ("p_dem", &sc.p_dem),
            ("q_dem", &sc.q_dem),
            ("q_gen_min", &sc.q_gen_min),
            ("q_gen_max", &sc.q_gen_max),
        ];
        let mut lengths_ok = true;
        for (name, v) in vectors {
            if v.len() != n {
                lengths_ok = false;
                out.push(Finding::fatal(format!(
                    "scenario {}: {name} has {} entries, expected {n}",
                    sc.id,
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                out.push(Finding::fatal(format!("scenario {}: {name} is not finite", sc.id)));
            }
        }
        if !(sc.p_slack_min <= sc.p_slack_max) {
            out.push(Finding::fatal(format!(
                "scenario {}: p_slack_min > p_slack_max",
                sc.id
            )));
        }
        if !lengths_ok {
            continue;
        }
        for k in 0..n {
            if sc.q_gen_min[k] > sc.q_gen_max[k] {
                out.push(Finding::fatal(format!(
                    "scenario {}: q_gen_min > q_gen_max at bus {}",
                    sc.id, network.buses[k].id
                )));
            }
        }
        let gen: f64 = sc.p_gen.iter().sum();
        let dem: f64 = sc.p_dem.iter().sum();
        if dem == 0.0 {
            out.push(Finding::warning(format!("scenario {}: zero total load", sc.id)));
        } else if (gen - dem).abs() > BALANCE_WARNING_FRACTION * dem.abs() {
            out.push(Finding::warning(format!(
                "scenario {}: total generation {:.1} MW differs from load {:.1} MW by more than {:.0}%",
                sc.id,
                gen * network.base_mva,
                dem * network.base_mva,
                BALANCE_WARNING_FRACTION * 100.0
            )));
        }
    }
    if (total_probability - 1.0).abs() > 1e-9 {
        out.push(Finding::fatal(format!(
            "scenario probabilities must sum to 1 (got {total_probability})"
        )));
    }
    out
}

pub fn validate_catalog(catalog: &EquipmentCatalog) -> Vec<Finding> {
    let mut out = Vec::new();
    if !(catalog.bay_cost >= 0.0) {
        out.push(Finding::fatal("catalog bay_cost must be nonnegative"));
    }
    for kind in ModuleKind::ALL {
        let mut sizes: Vec<f64> = Vec::new();
        for m in catalog.modules_of(kind) {
            if !(m.size > 0.0 && m.cost > 0.0) {
                out.push(Finding::fatal(format!(
                    "catalog {kind} module: size and cost must be positive"
                )));
            }
            if sizes.contains(&m.size) {
                out.push(Finding::fatal(format!(
                    "catalog has two {kind} modules of {} Mvar",
                    m.size
                )));
            }
            sizes.push(m.size);
        }
    }
    out
}

// File schema.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    base_mva: f64,
    buses: Vec<BusFile>,
    branches: Vec<BranchFile>,
    #[serde(default)]
    candidates: Vec<CandidateFile>,
    scenarios: Vec<ScenarioFile>,
    catalog: EquipmentCatalog,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusFile {
    id: usize,
    #[serde(default)]
    name: String,
    v_min: f64,
    v_max: f64,
    #[serde(default)]
    slack: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<usize>,
    from: usize,
    to: usize,
    r: f64,
    x: f64,
    #[serde(default)]
    charging: f64,
    s_max: f64,
    #[serde(default = "one")]
    tap_min: f64,
    #[serde(default = "one")]
    tap_max: f64,
    #[serde(default)]
    phase_min: f64,
    #[serde(default)]
    phase_max: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateFile {
    bus: usize,
    cost_r: f64,
    cost_c: f64,
    max_mvar: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probability: Option<f64>,
    p_gen: Vec<f64>,
    p_dem: Vec<f64>,
    q_dem: Vec<f64>,
    q_gen_min: Vec<f64>,
    q_gen_max: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_slack_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_slack_max: Option<f64>,
}

fn impedance_to_admittance(r: f64, x: f64) -> (f64, f64) {
    let d = r * r + x * x;
    (r / d, -x / d)
}

fn admittance_to_impedance(g: f64, b: f64) -> (f64, f64) {
    let d = g * g + b * b;
    (g / d, -b / d)
}

fn finite_or(v: Option<f64>, default: f64) -> f64 {
    v.unwrap_or(default)
}

impl CaseFile {
    fn into_case(self) -> Result<Case, CaseError> {
        let base = self.base_mva;
        let buses = self
            .buses
            .into_iter()
            .map(|b| Bus {
                id: b.id,
                name: b.name,
                v_min: b.v_min,
                v_max: b.v_max,
                is_slack: b.slack,
            })
            .collect();
        let mut branches = Vec::with_capacity(self.branches.len());
        for (i, b) in self.branches.into_iter().enumerate() {
            let id = b.id.unwrap_or(i + 1);
            if b.r == 0.0 && b.x == 0.0 {
                return Err(CaseError::Schema(format!("branches[{i}]: r and x both zero")));
            }
            let (g, bs) = impedance_to_admittance(b.r, b.x);
            branches.push(Branch {
                id,
                from_bus: b.from,
                to_bus: b.to,
                g,
                b: bs,
                charging: b.charging,
                s_max: b.s_max / base,
                tap_min: b.tap_min,
                tap_max: b.tap_max,
                phase_min: b.phase_min.to_radians(),
                phase_max: b.phase_max.to_radians(),
            });
        }
        let candidates = self
            .candidates
            .into_iter()
            .map(|c| VarCandidate {
                bus: c.bus,
                cost_reactor: c.cost_r,
                cost_capacitor: c.cost_c,
                max_mvar: c.max_mvar,
            })
            .collect();

        let given = self.scenarios.iter().filter(|s| s.probability.is_some()).count();
        let count = self.scenarios.len();
        if given != 0 && given != count {
            return Err(CaseError::Schema(
                "scenarios: probability must be given for all scenarios or for none".into(),
            ));
        }
        let pu = |v: Vec<f64>| v.into_iter().map(|x| x / base).collect::<Vec<_>>();
        let scenarios = self
            .scenarios
            .into_iter()
            .enumerate()
            .map(|(i, s)| Scenario {
                id: s.id.unwrap_or_else(|| format!("s{}", i + 1)),
                probability: s.probability.unwrap_or(1.0 / count as f64),
                p_gen: pu(s.p_gen),
                p_dem: pu(s.p_dem),
                q_dem: pu(s.q_dem),
                q_gen_min: pu(s.q_gen_min),
                q_gen_max: pu(s.q_gen_max),
                p_slack_min: finite_or(s.p_slack_min, f64::NEG_INFINITY) / base,
                p_slack_max: finite_or(s.p_slack_max, f64::INFINITY) / base,
            })
            .collect();

        Ok(Case {
            network: Network {
                buses,
                branches,
                candidates,
                base_mva: base,
            },
            scenarios,
            catalog: self.catalog,
        })
    }

    fn from_case(case: &Case) -> CaseFile {
        let base = case.network.base_mva;
        let mw = |v: &[f64]| v.iter().map(|x| x * base).collect::<Vec<_>>();
        let bound = |v: f64| v.is_finite().then_some(v * base);
        CaseFile {
            base_mva: base,
            buses: case
                .network
                .buses
                .iter()
                .map(|b| BusFile {
                    id: b.id,
                    name: b.name.clone(),
                    v_min: b.v_min,
                    v_max: b.v_max,
                    slack: b.is_slack,
                })
                .collect(),
            branches: case
                .network
                .branches
                .iter()
                .map(|b| {
                    let (r, x) = admittance_to_impedance(b.g, b.b);
                    BranchFile {
                        id: Some(b.id),
                        from: b.from_bus,
                        to: b.to_bus,
                        r,
                        x,
                        charging: b.charging,
                        s_max: b.s_max * base,
                        tap_min: b.tap_min,
                        tap_max: b.tap_max,
                        phase_min: b.phase_min.to_degrees(),
                        phase_max: b.phase_max.to_degrees(),
                    }
                })
                .collect(),
            candidates: case
                .network
                .candidates
                .iter()
                .map(|c| CandidateFile {
                    bus: c.bus,
                    cost_r: c.cost_reactor,
                    cost_c: c.cost_capacitor,
                    max_mvar: c.max_mvar,
                })
                .collect(),
            scenarios: case
                .scenarios
                .iter()
                .map(|s| ScenarioFile {
                    id: Some(s.id.clone()),
                    probability: Some(s.probability),
                    p_gen: mw(&s.p_gen),
                    p_dem: mw(&s.p_dem),
                    q_dem: mw(&s.q_dem),
                    q_gen_min: mw(&s.q_gen_min),
                    q_gen_max: mw(&s.q_gen_max),
                    p_slack_min: bound(s.p_slack_min),
                    p_slack_max: bound(s.p_slack_max),
                })
                .collect(),
            catalog: case.catalog.clone(),
        }
    }
}

/// Parses a case from JSON text, failing on schema violations and on any
/// fatal validation finding.
pub fn parse_case_str(text: &str) -> Result<Case, CaseError> {
    let file: CaseFile =
        serde_json::from_str(text).map_err(|e| CaseError::Schema(e.to_string()))?;
    let case = file.into_case()?;
    let fatal: Vec<String> = validate(&case.network, &case.scenarios)
        .into_iter()
        .chain(validate_catalog(&case.catalog))
        .filter(Finding::is_fatal)
        .map(|f| f.message)
        .collect();
    if !fatal.is_empty() {
        return Err(CaseError::Invalid(fatal.join("; ")));
    }
    Ok(case)
}

pub fn parse_case(path: impl AsRef<Path>) -> Result<Case, CaseError> {
    let text = std::fs::read_to_string(path)?;
    parse_case_str(&text)
}

pub fn case_to_string(case: &Case) -> String {
    serde_json::to_string_pretty(&CaseFile::from_case(case)).expect("case serializes")
}

pub fn write_case(case: &Case, path: impl AsRef<Path>) -> Result<(), CaseError> {
    std::fs::write(path, case_to_string(case))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const THREE_BUS: &str = r#"{
        "base_mva": 100,
        "buses": [
            {"id": 1, "name": "A", "v_min": 0.95, "v_max": 1.05, "slack": true},
            {"id": 2, "name": "B", "v_min": 0.95, "v_max": 1.05},
            {"id": 3, "name": "C", "v_min": 0.95, "v_max": 1.05}
        ],
        "branches": [
            {"from": 1, "to": 2, "r": 0.01, "x": 0.1, "charging": 0.02, "s_max": 200},
            {"from": 2, "to": 3, "r": 0.01, "x": 0.1, "s_max": 200,
             "tap_min": 0.9, "tap_max": 1.1},
            {"from": 1, "to": 3, "r": 0.02, "x": 0.2, "s_max": 200,
             "phase_min": -10, "phase_max": 10}
        ],
        "candidates": [{"bus": 3, "cost_r": 40, "cost_c": 30, "max_mvar": 100}],
        "scenarios": [
            {"p_gen": [0, 50, 0], "p_dem": [0, 0, 60], "q_dem": [0, 0, 20],
             "q_gen_min": [-100, -50, 0], "q_gen_max": [100, 50, 0]},
            {"p_gen": [0, 25, 0], "p_dem": [0, 0, 30], "q_dem": [0, 0, 5],
             "q_gen_min": [-100, -50, 0], "q_gen_max": [100, 50, 0]}
        ],
        "catalog": {"modules": [{"kind": "capacitor", "size": 5, "cost": 313}],
                    "bay_cost": 3217}
    }"#;

    fn edit(f: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(THREE_BUS).unwrap();
        f(&mut v);
        v.to_string()
    }

    #[test]
    fn parses_three_bus_case() {
        let case = parse_case_str(THREE_BUS).unwrap();
        assert_eq!(case.network.buses.len(), 3);
        assert_eq!(case.network.branches.len(), 3);
        assert_eq!(case.scenarios.len(), 2);
        assert_eq!(case.scenarios[0].probability, 0.5);
        assert_eq!(case.scenarios[1].id, "s2");
        assert_eq!(case.network.branches[1].id, 2);
        assert!(case.network.branches[1].has_tap());
        assert!(!case.network.branches[0].has_tap());
        assert!((case.network.branches[2].phase_max - 10f64.to_radians()).abs() < 1e-15);
        assert_eq!(case.network.branches[0].s_max, 2.0);
        assert_eq!(case.scenarios[0].p_dem[2], 0.6);
        assert_eq!(case.scenarios[0].p_slack_max, f64::INFINITY);
        let (g, b) = (case.network.branches[0].g, case.network.branches[0].b);
        assert!((g - 0.01 / 0.0101).abs() < 1e-12 && (b + 0.1 / 0.0101).abs() < 1e-12);
        assert!(validate(&case.network, &case.scenarios).is_empty());
    }

    #[test]
    fn bad_probability_sum() {
        let text = edit(|v| {
            v["scenarios"][0]["probability"] = 0.4.into();
            v["scenarios"][1]["probability"] = 0.5.into();
        });
        let err = parse_case_str(&text).unwrap_err().to_string();
        assert!(err.contains("scenario probabilities must sum to 1"), "{err}");
    }

    #[test]
    fn partial_probabilities_rejected() {
        let text = edit(|v| v["scenarios"][0]["probability"] = 1.0.into());
        assert!(matches!(parse_case_str(&text), Err(CaseError::Schema(_))));
    }

    #[test]
    fn schema_error_names_field() {
        let text = edit(|v| {
            v["buses"][1].as_object_mut().unwrap().remove("v_min");
        });
        let err = parse_case_str(&text).unwrap_err().to_string();
        assert!(err.contains("v_min"), "{err}");
        let text = edit(|v| v["buses"][0]["vmax"] = 1.0.into());
        let err = parse_case_str(&text).unwrap_err().to_string();
        assert!(err.contains("vmax"), "{err}");
    }

    #[test]
    fn structural_errors() {
        let dup = edit(|v| v["buses"][1]["id"] = 1.into());
        assert!(parse_case_str(&dup).unwrap_err().to_string().contains("duplicate bus id"));

        let no_slack = edit(|v| v["buses"][0]["slack"] = false.into());
        assert!(parse_case_str(&no_slack).unwrap_err().to_string().contains("no slack"));

        let island = edit(|v| {
            let br = v["branches"].as_array_mut().unwrap();
            br.remove(2);
            br.remove(1);
        });
        assert!(parse_case_str(&island).unwrap_err().to_string().contains("disconnected"));
    }

    #[test]
    fn two_slacks_is_fatal() {
        let mut case = parse_case_str(THREE_BUS).unwrap();
        case.network.buses[2].is_slack = true;
        let findings = validate(&case.network, &case.scenarios);
        assert_eq!(findings.len(), 1);
        assert!(findings[0].is_fatal());
    }

    #[test]
    fn generation_mismatch_warns() {
        let mut case = parse_case_str(THREE_BUS).unwrap();
        // 50 MW vs 60 MW is within 30%; 40 MW vs 60 MW is not.
        assert!(validate(&case.network, &case.scenarios).is_empty());
        case.scenarios[0].p_gen[1] = 0.4;
        let findings = validate(&case.network, &case.scenarios);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Warning);
    }

    #[test]
    fn zero_load_warns() {
        let mut case = parse_case_str(THREE_BUS).unwrap();
        case.scenarios[1].p_dem = vec![0.0; 3];
        let findings = validate(&case.network, &case.scenarios);
        assert_eq!(findings.len(), 1);
        assert!(findings[0].message.contains("zero total load"));
    }

    #[test]
    fn catalog_duplicate_size() {
        let cat = EquipmentCatalog {
            modules: vec![
                Module { kind: ModuleKind::Reactor, size: 15.0, cost: 1.0 },
                Module { kind: ModuleKind::Reactor, size: 15.0, cost: 2.0 },
                Module { kind: ModuleKind::Capacitor, size: 15.0, cost: 2.0 },
            ],
            bay_cost: 0.0,
        };
        assert_eq!(validate_catalog(&cat).len(), 1);
    }

    fn rel_close(a: f64, b: f64) -> bool {
        a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
    }

    fn assert_case_close(a: &Case, b: &Case) {
        assert_eq!(a.network.buses, b.network.buses);
        assert_eq!(a.network.candidates, b.network.candidates);
        assert_eq!(a.catalog, b.catalog);
        for (x, y) in a.network.branches.iter().zip(&b.network.branches) {
            assert_eq!((x.id, x.from_bus, x.to_bus), (y.id, y.from_bus, y.to_bus));
            for (p, q) in [
                (x.g, y.g),
                (x.b, y.b),
                (x.charging, y.charging),
                (x.s_max, y.s_max),
                (x.tap_min, y.tap_min),
                (x.tap_max, y.tap_max),
                (x.phase_min, y.phase_min),
                (x.phase_max, y.phase_max),
            ] {
                assert!(rel_close(p, q), "{p} vs {q}");
            }
        }
        for (x, y) in a.scenarios.iter().zip(&b.scenarios) {
            assert_eq!(x.id, y.id);
            assert!(rel_close(x.probability, y.probability));
            for (u, v) in [
                (&x.p_gen, &y.p_gen),
                (&x.p_dem, &y.p_dem),
                (&x.q_dem, &y.q_dem),
                (&x.q_gen_min, &y.q_gen_min),
                (&x.q_gen_max, &y.q_gen_max),
            ] {
                assert!(u.iter().zip(v).all(|(p, q)| rel_close(*p, *q)));
            }
        }
    }

    #[test]
    fn serialize_round_trip() {
        let a = parse_case_str(THREE_BUS).unwrap();
        let b = parse_case_str(&case_to_string(&a)).unwrap();
        assert_case_close(&a, &b);
    }

    proptest! {
        #[test]
        fn random_round_trip(
            r in 1e-4f64..0.5, x in 1e-3f64..2.0, base in 1.0f64..1000.0,
            load in proptest::collection::vec(0.0f64..500.0, 3),
            phase in -30.0f64..30.0,
        ) {
            let text = edit(|v| {
                v["base_mva"] = base.into();
                v["branches"][0]["r"] = r.into();
                v["branches"][0]["x"] = x.into();
                v["branches"][2]["phase_min"] = (phase - 1.0).into();
                v["branches"][2]["phase_max"] = phase.into();
                v["scenarios"][0]["q_dem"] = serde_json::json!(load);
            });
            let a = parse_case_str(&text).unwrap();
            let b = parse_case_str(&case_to_string(&a)).unwrap();
            assert_case_close(&a, &b);
            let c = parse_case_str(&case_to_string(&b)).unwrap();
            assert_case_close(&b, &c);
        }

        #[test]
        fn per_unit_round_trip(mvar in -1e4f64..1e4, base in 1.0f64..1e4) {
            let net = Network { buses: vec![], branches: vec![], candidates: vec![], base_mva: base };
            let back = net.from_pu(net.to_pu(mvar));
            prop_assert!((back - mvar).abs() <= 1e-12 * mvar.abs().max(1e-300));
        }
    }
}
