//! One scenario's var-planning OPF.
//!
//! Variables are per-unit inside the NLP. The objective is evaluated in
//! currency with investments in Mvar and then scaled by
//! `1 / (base_mva · max unit cost)` so that its gradient is O(1) per pu.

use serde::Serialize;
use thiserror::Error;
use varplan_ipm::{
    solve, warm_start_from, HessianMode, NlpProblem, NlpSolution, SolverError, SolverOptions,
    Status,
};

use crate::network::{ModuleKind, Network, Scenario};
use crate::power_flow::{nodal_residuals, AcConstraints, MvaSides, OperatingPoint, VarLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Investment cost only.
    PlainCost,
    /// Investment cost plus linear and halved quadratic hedging terms.
    PhAugmented,
    /// Investment cost plus the linear hedging term.
    LinearOnly,
}

/// Hedging coefficients for one candidate list. Weights are currency/Mvar,
/// targets Mvar, penalties currency/Mvar².
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhTerms {
    pub w_r: Vec<f64>,
    pub w_c: Vec<f64>,
    pub avg_r: Vec<f64>,
    pub avg_c: Vec<f64>,
    pub rho_r: Vec<f64>,
    pub rho_c: Vec<f64>,
}

impl PhTerms {
    pub fn zeros(candidates: usize) -> Self {
        let z = vec![0.0; candidates];
        PhTerms {
            w_r: z.clone(),
            w_c: z.clone(),
            avg_r: z.clone(),
            avg_c: z.clone(),
            rho_r: z.clone(),
            rho_c: z,
        }
    }

    fn all(&self) -> [&Vec<f64>; 6] {
        [&self.w_r, &self.w_c, &self.avg_r, &self.avg_c, &self.rho_r, &self.rho_c]
    }

    fn weights_and_penalties_zero(&self) -> bool {
        [&self.w_r, &self.w_c, &self.rho_r, &self.rho_c]
            .iter()
            .all(|v| v.iter().all(|&x| x == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSpec {
    pub scenario_id: String,
    pub mode: ObjectiveMode,
    pub terms: PhTerms,
}

impl SubproblemSpec {
    pub fn plain(scenario_id: impl Into<String>, candidates: usize) -> Self {
        SubproblemSpec {
            scenario_id: scenario_id.into(),
            mode: ObjectiveMode::PlainCost,
            terms: PhTerms::zeros(candidates),
        }
    }

    /// Coefficients that actually enter the objective, with terms the mode
    /// ignores zeroed. Two specs with equal keys define the same problem.
    pub fn effective_terms(&self) -> PhTerms {
        let mut t = self.terms.clone();
        match self.mode {
            ObjectiveMode::PlainCost => t = PhTerms::zeros(t.w_r.len()),
            ObjectiveMode::LinearOnly => {
                t.rho_r.iter_mut().for_each(|x| *x = 0.0);
                t.rho_c.iter_mut().for_each(|x| *x = 0.0);
            }
            ObjectiveMode::PhAugmented => {}
        }
        if t.weights_and_penalties_zero() {
            t.avg_r.iter_mut().for_each(|x| *x = 0.0);
            t.avg_c.iter_mut().for_each(|x| *x = 0.0);
        }
        t
    }

    fn check(&self, candidates: usize) -> Result<(), SubproblemError> {
        if self.terms.all().iter().any(|v| v.len() != candidates) {
            return Err(SubproblemError::Spec(format!(
                "hedging terms must have one entry per candidate ({candidates})"
            )));
        }
        if self.mode == ObjectiveMode::PlainCost && !self.terms.weights_and_penalties_zero() {
            return Err(SubproblemError::Spec(
                "plain-cost mode requires zero weights and penalties".into(),
            ));
        }
        if self.terms.all().iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(SubproblemError::Spec("hedging terms must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SubproblemError {
    #[error("candidate references unknown bus {0}")]
    UnknownCandidateBus(usize),
    #[error("invalid subproblem spec: {0}")]
    Spec(String),
    #[error("scenario {0} does not match the network")]
    Scenario(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemOptions {
    pub solver: SolverOptions,
    pub mva_sides: MvaSides,
    /// Initial barrier parameter when starting from a previous solution.
    pub warm_mu_init: f64,
    /// Largest accepted nodal residual (pu) when re-checking a converged point.
    pub feasibility_tol: f64,
}

impl Default for SubproblemOptions {
    fn default() -> Self {
        SubproblemOptions {
            solver: SolverOptions::default(),
            mva_sides: MvaSides::From,
            warm_mu_init: 1e-3,
            feasibility_tol: 1e-6,
        }
    }
}

impl SubproblemOptions {
    pub fn with_hessian(mut self, mode: HessianMode) -> Self {
        self.solver.hessian = mode;
        self
    }
}

/// Objective of one candidate kind as a function of investment `Q` (Mvar):
/// `I Q + w (Q − A) + ρ/2 (Q − A)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    cost: f64,
    w: f64,
    avg: f64,
    rho: f64,
}

impl Term {
    fn parts(&self, q: f64) -> (f64, f64, f64) {
        let d = q - self.avg;
        (self.cost * q, self.w * d, 0.5 * self.rho * d * d)
    }
}

/// Investment cost and the two hedging parts, in currency.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ObjectiveParts {
    pub investment: f64,
    pub linear: f64,
    pub quadratic: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.investment + self.linear + self.quadratic
    }
}

/// Variables, constraints and objective of one scenario inside a larger
/// NLP vector. Several blocks may share their investment indices.
#[derive(Debug, Clone)]
pub struct ScenarioBlock {
    pub layout: VarLayout,
    ac: AcConstraints,
    terms: Vec<[Term; 2]>,
    /// Objective multiplier; the scenario probability in an extensive form.
    weight: f64,
    base_mva: f64,
    scale: f64,
    cap_pu: Vec<f64>,
    cap_rows: bool,
    start: Vec<(usize, f64)>,
}

impl ScenarioBlock {
    /// `scale` multiplies the currency objective.
    pub fn new(
        network: &Network,
        scenario: &Scenario,
        spec: &SubproblemSpec,
        layout: VarLayout,
        weight: f64,
        scale: f64,
        cap_rows: bool,
        sides: MvaSides,
    ) -> Result<Self, SubproblemError> {
        let nc = network.candidates.len();
        spec.check(nc)?;
        for c in &network.candidates {
            if network.bus_index(c.bus).is_none() {
                return Err(SubproblemError::UnknownCandidateBus(c.bus));
            }
        }
        let n = network.buses.len();
        if [&scenario.p_gen, &scenario.p_dem, &scenario.q_dem, &scenario.q_gen_min, &scenario.q_gen_max]
            .iter()
            .any(|v| v.len() != n)
        {
            return Err(SubproblemError::Scenario(scenario.id.clone()));
        }
        let t = spec.effective_terms();
        let terms = network
            .candidates
            .iter()
            .enumerate()
            .map(|(c, cand)| {
                [
                    Term { cost: cand.cost_reactor, w: t.w_r[c], avg: t.avg_r[c], rho: t.rho_r[c] },
                    Term { cost: cand.cost_capacitor, w: t.w_c[c], avg: t.avg_c[c], rho: t.rho_c[c] },
                ]
            })
            .collect();
        let ac = AcConstraints::new(network, scenario, &layout, sides);

        let flat = OperatingPoint::flat(network);
        let mut start = Vec::new();
        for (k, bus) in network.buses.iter().enumerate() {
            start.push((layout.v[k], flat.v[k].clamp(bus.v_min, bus.v_max)));
            start.push((layout.q_gen[k], 0.0f64.clamp(scenario.q_gen_min[k], scenario.q_gen_max[k])));
        }
        for (l, _) in network.branches.iter().enumerate() {
            if let Some(i) = layout.tap[l].index() {
                start.push((i, flat.tap[l]));
            }
            if let Some(i) = layout.phase[l].index() {
                start.push((i, flat.phase[l]));
            }
        }
        let slack = network.slack_index().expect("validated network has a slack bus");
        start.push((
            layout.p_slack,
            scenario.p_gen[slack].clamp(scenario.p_slack_min, scenario.p_slack_max),
        ));

        Ok(ScenarioBlock {
            ac,
            terms,
            weight,
            base_mva: network.base_mva,
            scale,
            cap_pu: network.candidates.iter().map(|c| network.to_pu(c.max_mvar)).collect(),
            cap_rows,
            start,
            layout,
        })
    }

    pub fn num_equalities(&self) -> usize {
        self.ac.num_equalities()
    }

    pub fn num_inequalities(&self) -> usize {
        let nc = self.terms.len();
        self.ac.num_limits() + 2 * nc + if self.cap_rows { nc } else { 0 }
    }

    fn inv_indices(&self, c: usize) -> [usize; 2] {
        [self.layout.q_inv_r[c], self.layout.q_inv_c[c]]
    }

    fn inj_indices(&self, c: usize) -> [usize; 2] {
        [self.layout.q_inj_r[c], self.layout.q_inj_c[c]]
    }

    /// Writes bounds for every variable the block touches, including the
    /// (possibly shared) investments.
    pub fn write_bounds(&self, network: &Network, scenario: &Scenario, lower: &mut [f64], upper: &mut [f64]) {
        self.layout.write_bounds(network, scenario, lower, upper);
        for (c, &cap) in self.cap_pu.iter().enumerate() {
            for i in self.inv_indices(c) {
                lower[i] = 0.0;
                upper[i] = cap;
            }
        }
    }

    pub fn write_start(&self, x: &mut [f64]) {
        for &(i, v) in &self.start {
            x[i] = v;
        }
    }

    pub fn objective_parts(&self, x: &[f64]) -> ObjectiveParts {
        let mut p = ObjectiveParts::default();
        for (c, pair) in self.terms.iter().enumerate() {
            for (term, i) in pair.iter().zip(self.inv_indices(c)) {
                let (a, b, q) = term.parts(x[i] * self.base_mva);
                p.investment += a;
                p.linear += b;
                p.quadratic += q;
            }
        }
        p
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.weight * self.scale * self.objective_parts(x).total()
    }

    pub fn add_gradient(&self, x: &[f64], grad: &mut [f64]) {
        let f = self.weight * self.scale * self.base_mva;
        for (c, pair) in self.terms.iter().enumerate() {
            for (t, i) in pair.iter().zip(self.inv_indices(c)) {
                let q = x[i] * self.base_mva;
                grad[i] += f * (t.cost + t.w + t.rho * (q - t.avg));
            }
        }
    }

    pub fn evaluate_constraints(&self, x: &[f64], eq: &mut [f64], ineq: &mut [f64]) {
        let nl = self.ac.num_limits();
        let (limits, rest) = ineq.split_at_mut(nl);
        self.ac.evaluate(x, eq, limits);
        let nc = self.terms.len();
        for c in 0..nc {
            let inv = self.inv_indices(c);
            let inj = self.inj_indices(c);
            rest[2 * c] = x[inj[0]] - x[inv[0]];
            rest[2 * c + 1] = x[inj[1]] - x[inv[1]];
            if self.cap_rows {
                rest[2 * nc + c] = x[inv[0]] + x[inv[1]] - self.cap_pu[c];
            }
        }
    }

    pub fn jacobian_structure(&self, eq_row: usize, ineq_row: usize) -> Vec<(usize, usize)> {
        let mut out = self.ac.jacobian_structure(eq_row, ineq_row);
        let row0 = ineq_row + self.ac.num_limits();
        let nc = self.terms.len();
        for c in 0..nc {
            let inv = self.inv_indices(c);
            let inj = self.inj_indices(c);
            for kind in 0..2 {
                out.push((row0 + 2 * c + kind, inj[kind]));
                out.push((row0 + 2 * c + kind, inv[kind]));
            }
            if self.cap_rows {
                out.push((row0 + 2 * nc + c, inv[0]));
                out.push((row0 + 2 * nc + c, inv[1]));
            }
        }
        out
    }

    pub fn jacobian_values(&self, x: &[f64], vals: &mut [f64]) {
        let n_ac = self.ac_jacobian_len();
        self.ac.jacobian_values(x, &mut vals[..n_ac]);
        let mut pos = n_ac;
        for _ in 0..self.terms.len() {
            for _ in 0..2 {
                vals[pos] = 1.0;
                vals[pos + 1] = -1.0;
                pos += 2;
            }
            if self.cap_rows {
                vals[pos] = 1.0;
                vals[pos + 1] = 1.0;
                pos += 2;
            }
        }
    }

    fn ac_jacobian_len(&self) -> usize {
        self.ac.jacobian_structure(0, 0).len()
    }

    pub fn hessian_structure(&self) -> Vec<(usize, usize)> {
        let mut out = self.ac.hessian_structure();
        for c in 0..self.terms.len() {
            for i in self.inv_indices(c) {
                out.push((i, i));
            }
        }
        out
    }

    pub fn hessian_values(&self, obj_factor: f64, x: &[f64], eq_mult: &[f64], ineq_mult: &[f64], vals: &mut [f64]) {
        let n_ac = vals.len() - 2 * self.terms.len();
        let nl = self.ac.num_limits();
        self.ac.hessian_values(x, eq_mult, &ineq_mult[..nl], &mut vals[..n_ac]);
        let f = obj_factor * self.weight * self.scale * self.base_mva * self.base_mva;
        let mut pos = n_ac;
        for pair in &self.terms {
            for t in pair {
                vals[pos] = f * t.rho;
                pos += 1;
            }
        }
    }

    /// Reads the scenario's decisions back from an NLP point.
    pub fn extract(&self, network: &Network, scenario: &Scenario, nlp: &NlpSolution, opts: &SubproblemOptions) -> SubproblemSolution {
        let x = &nlp.x;
        let base = self.base_mva;
        let pick = |idx: &[usize]| idx.iter().map(|&i| x[i] * base).collect::<Vec<_>>();
        let point = self.layout.point(x);
        let q_inj_r = pick(&self.layout.q_inj_r);
        let q_inj_c = pick(&self.layout.q_inj_c);
        let q_gen = pick(&self.layout.q_gen);
        let p_slack = x[self.layout.p_slack] * base;
        let to_pu = |v: &[f64]| v.iter().map(|m| m / base).collect::<Vec<_>>();
        let residuals = nodal_residuals(
            network,
            scenario,
            &point,
            &to_pu(&q_inj_r),
            &to_pu(&q_inj_c),
            &to_pu(&q_gen),
            p_slack / base,
        )
        .expect("layout matches network");
        let max_residual = residuals
            .iter()
            .map(|&(p, q)| p.abs().max(q.abs()))
            .fold(0.0, f64::max);
        // Interior-point iterates stop a barrier's width above zero; report
        // those investments as exactly zero.
        let mut xs = x.clone();
        for c in 0..self.terms.len() {
            for i in self.inv_indices(c) {
                if xs[i] * base < INVESTMENT_ZERO {
                    xs[i] = 0.0;
                }
            }
        }
        let pick = |idx: &[usize]| idx.iter().map(|&i| xs[i] * base).collect::<Vec<_>>();
        let parts = self.objective_parts(&xs);
        let mut status = nlp.status;
        if status.is_converged() && !(max_residual <= opts.feasibility_tol) {
            log::warn!(
                "scenario {}: converged point fails the residual check ({max_residual:.3e} pu)",
                scenario.id
            );
            status = Status::Diverged;
        }
        SubproblemSolution {
            scenario_id: scenario.id.clone(),
            status,
            q_inv_r: pick(&self.layout.q_inv_r),
            q_inv_c: pick(&self.layout.q_inv_c),
            q_inj_r,
            q_inj_c,
            point,
            q_gen,
            p_slack,
            objective: parts.total(),
            parts,
            max_residual,
            iterations: nlp.iterations,
            nlp: nlp.clone(),
        }
    }
}

/// The NLP handed to the interior-point solver: one or more blocks plus
/// optional leading variables (shared investments).
pub struct BlockProblem<'a> {
    network: &'a Network,
    scenarios: Vec<&'a Scenario>,
    blocks: Vec<ScenarioBlock>,
    n: usize,
    eq_offsets: Vec<usize>,
    ineq_offsets: Vec<usize>,
    m_eq: usize,
    m_in: usize,
    jac_offsets: Vec<usize>,
    hess_offsets: Vec<usize>,
}

impl<'a> BlockProblem<'a> {
    pub fn new(network: &'a Network, scenarios: Vec<&'a Scenario>, blocks: Vec<ScenarioBlock>) -> Self {
        let n = blocks.iter().map(|b| b.layout.end).max().unwrap_or(0);
        let mut eq_offsets = Vec::new();
        let mut m_eq = 0;
        for b in &blocks {
            eq_offsets.push(m_eq);
            m_eq += b.num_equalities();
        }
        let mut ineq_offsets = Vec::new();
        let mut m_in = 0;
        for b in &blocks {
            ineq_offsets.push(m_eq + m_in);
            m_in += b.num_inequalities();
        }
        let mut jac_offsets = vec![0];
        let mut hess_offsets = vec![0];
        for b in &blocks {
            jac_offsets.push(jac_offsets.last().unwrap() + b.jacobian_structure(0, 0).len());
            hess_offsets.push(hess_offsets.last().unwrap() + b.hessian_structure().len());
        }
        BlockProblem {
            network,
            scenarios,
            blocks,
            n,
            eq_offsets,
            ineq_offsets,
            m_eq,
            m_in,
            jac_offsets,
            hess_offsets,
        }
    }

    pub fn blocks(&self) -> &[ScenarioBlock] {
        &self.blocks
    }

    pub fn start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for b in &self.blocks {
            b.write_start(&mut x);
        }
        x
    }

    fn ineq_len(&self, i: usize) -> usize {
        self.blocks[i].num_inequalities()
    }
}

impl NlpProblem for BlockProblem<'_> {
    fn num_variables(&self) -> usize {
        self.n
    }

    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]) {
        for (b, sc) in self.blocks.iter().zip(&self.scenarios) {
            b.write_bounds(self.network, sc, lower, upper);
        }
    }

    fn num_equalities(&self) -> usize {
        self.m_eq
    }

    fn num_inequalities(&self) -> usize {
        self.m_in
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.blocks.iter().map(|b| b.objective(x)).sum()
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for b in &self.blocks {
            b.add_gradient(x, grad);
        }
    }

    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        let (eq, ineq) = out.split_at_mut(self.m_eq);
        for (i, b) in self.blocks.iter().enumerate() {
            let e0 = self.eq_offsets[i];
            let i0 = self.ineq_offsets[i] - self.m_eq;
            b.evaluate_constraints(
                x,
                &mut eq[e0..e0 + b.num_equalities()],
                &mut ineq[i0..i0 + self.ineq_len(i)],
            );
        }
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.jacobian_structure(self.eq_offsets[i], self.ineq_offsets[i]))
            .collect()
    }

    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.jacobian_values(x, &mut vals[self.jac_offsets[i]..self.jac_offsets[i + 1]]);
        }
    }

    fn hessian_structure(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().flat_map(|b| b.hessian_structure()).collect()
    }

    fn hessian_values(&self, x: &[f64], obj_factor: f64, multipliers: &[f64], vals: &mut [f64]) {
        let (eq, ineq) = multipliers.split_at(self.m_eq);
        for (i, b) in self.blocks.iter().enumerate() {
            let e0 = self.eq_offsets[i];
            let i0 = self.ineq_offsets[i] - self.m_eq;
            b.hessian_values(
                obj_factor,
                x,
                &eq[e0..e0 + b.num_equalities()],
                &ineq[i0..i0 + self.ineq_len(i)],
                &mut vals[self.hess_offsets[i]..self.hess_offsets[i + 1]],
            );
        }
    }
}

/// Investments below this many Mvar are reported as zero.
pub const INVESTMENT_ZERO: f64 = 1e-3;

/// Multiplier turning currency into the NLP's objective units.
pub fn objective_scale(network: &Network) -> f64 {
    let max_cost = network
        .candidates
        .iter()
        .flat_map(|c| [c.cost_reactor, c.cost_capacitor])
        .fold(0.0, f64::max);
    if max_cost > 0.0 {
        1.0 / (network.base_mva * max_cost)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SubproblemSolution {
    pub scenario_id: String,
    #[serde(serialize_with = "status_str")]
    pub status: Status,
    /// Mvar, per candidate.
    pub q_inv_r: Vec<f64>,
    pub q_inv_c: Vec<f64>,
    pub q_inj_r: Vec<f64>,
    pub q_inj_c: Vec<f64>,
    #[serde(serialize_with = "point_map")]
    pub point: OperatingPoint,
    /// Mvar, per bus.
    pub q_gen: Vec<f64>,
    /// MW.
    pub p_slack: f64,
    /// Currency.
    pub objective: f64,
    pub parts: ObjectiveParts,
    /// Largest re-evaluated nodal residual, pu.
    pub max_residual: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub nlp: NlpSolution,
}

fn status_str<S: serde::Serializer>(s: &Status, ser: S) -> Result<S::Ok, S::Error> {
    ser.serialize_str(&s.to_string())
}

fn point_map<S: serde::Serializer>(p: &OperatingPoint, ser: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let mut st = ser.serialize_struct("OperatingPoint", 4)?;
    st.serialize_field("v", &p.v)?;
    st.serialize_field("theta", &p.theta)?;
    st.serialize_field("tap", &p.tap)?;
    st.serialize_field("phase", &p.phase)?;
    st.end()
}

impl SubproblemSolution {
    pub fn is_converged(&self) -> bool {
        self.status.is_converged()
    }

    pub fn investment(&self, kind: ModuleKind) -> &[f64] {
        match kind {
            ModuleKind::Reactor => &self.q_inv_r,
            ModuleKind::Capacitor => &self.q_inv_c,
        }
    }

    pub fn total_investment(&self) -> f64 {
        self.q_inv_r.iter().chain(&self.q_inv_c).sum()
    }
}

/// Single-scenario NLP.
pub fn build<'a>(
    network: &'a Network,
    scenario: &'a Scenario,
    spec: &SubproblemSpec,
    opts: &SubproblemOptions,
) -> Result<BlockProblem<'a>, SubproblemError> {
    let layout = VarLayout::new(network, 0);
    let block = ScenarioBlock::new(
        network,
        scenario,
        spec,
        layout,
        1.0,
        objective_scale(network),
        true,
        opts.mva_sides,
    )?;
    Ok(BlockProblem::new(network, vec![scenario], vec![block]))
}

pub fn solve_scenario(
    network: &Network,
    scenario: &Scenario,
    spec: &SubproblemSpec,
    warm: Option<&SubproblemSolution>,
    opts: &SubproblemOptions,
) -> Result<SubproblemSolution, SubproblemError> {
    let problem = build(network, scenario, spec, opts)?;
    let mut solver = opts.solver.clone();
    let start = match warm.map(|w| warm_start_from(&w.nlp, &problem)) {
        Some(Ok(x)) => {
            solver.mu_init = opts.warm_mu_init;
            x
        }
        Some(Err(e)) => {
            log::debug!("scenario {}: cold start ({e})", scenario.id);
            problem.start()
        }
        None => problem.start(),
    };
    let nlp = solve(&problem, &start, &solver)?;
    if !nlp.status.is_converged() {
        log::debug!(
            "scenario {} ({:?}): {} after {} iterations",
            scenario.id,
            spec.mode,
            nlp.status,
            nlp.iterations
        );
    }
    Ok(problem.blocks()[0].extract(network, scenario, &nlp, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn opts() -> SubproblemOptions {
        SubproblemOptions::default()
    }

    #[test]
    fn plain_cost_spec_rejects_weights() {
        let case = fixtures::two_bus();
        let mut spec = SubproblemSpec::plain("s1", 1);
        spec.terms.w_c[0] = 1.0;
        let err = build(&case.network, &case.scenarios[0], &spec, &opts()).err().unwrap();
        assert!(matches!(err, SubproblemError::Spec(_)));
    }

    #[test]
    fn unknown_candidate_bus() {
        let case = fixtures::two_bus();
        let mut net = case.network.clone();
        net.candidates[0].bus = 99;
        let spec = SubproblemSpec::plain("s1", 1);
        let err = build(&net, &case.scenarios[0], &spec, &opts()).err().unwrap();
        assert!(matches!(err, SubproblemError::UnknownCandidateBus(99)));
    }

    #[test]
    fn effective_terms_normalize_modes() {
        let mut spec = SubproblemSpec::plain("s", 2);
        spec.mode = ObjectiveMode::PhAugmented;
        spec.terms.avg_c = vec![3.0, 4.0];
        assert_eq!(spec.effective_terms(), PhTerms::zeros(2));
        spec.mode = ObjectiveMode::LinearOnly;
        spec.terms.rho_c = vec![1.0, 1.0];
        assert_eq!(spec.effective_terms(), PhTerms::zeros(2));
        spec.terms.w_r = vec![1.0, 0.0];
        let t = spec.effective_terms();
        assert_eq!(t.rho_c, vec![0.0, 0.0]);
        assert_eq!(t.avg_c, vec![3.0, 4.0]);
    }

    #[test]
    fn term_parts() {
        let t = Term { cost: 10.0, w: 2.0, avg: 5.0, rho: 4.0 };
        assert_eq!(t.parts(7.0), (70.0, 4.0, 8.0));
    }
}
