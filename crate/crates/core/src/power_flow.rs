//! AC branch flows, nodal balances and their derivatives.
//!
//! Local branch variables are ordered `(v_k, v_j, θ_k, θ_j, t, φ)`. With
//! `θ' = θ_k − θ_j − φ`, `C = cos θ'`, `S = sin θ'` and `B = v_k v_j / t`,
//! every flow component has the form
//!
//! ```text
//! F = α v_k²/t² + β v_j² + B (γ C + η S)
//! ```
//!
//! | component | α              | β              | γ  | η  |
//! |-----------|----------------|----------------|----|----|
//! | p_from    | g              | 0              | −g | −b |
//! | q_from    | −(b + b_c/2)   | 0              | b  | −g |
//! | p_to      | 0              | g              | −g | b  |
//! | q_to      | 0              | −(b + b_c/2)   | b  | g  |
//!
//! Flows are measured leaving the bus at the respective end.

use thiserror::Error;

use crate::network::{Branch, Network, Scenario};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchFlow {
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowComponent {
    PFrom,
    QFrom,
    PTo,
    QTo,
}

impl FlowComponent {
    pub const ALL: [FlowComponent; 4] = [
        FlowComponent::PFrom,
        FlowComponent::QFrom,
        FlowComponent::PTo,
        FlowComponent::QTo,
    ];
}

fn coefficients(br: &Branch, comp: FlowComponent) -> [f64; 4] {
    let (g, b) = (br.g, br.b);
    let bsh = b + 0.5 * br.charging;
    match comp {
        FlowComponent::PFrom => [g, 0.0, -g, -b],
        FlowComponent::QFrom => [-bsh, 0.0, b, -g],
        FlowComponent::PTo => [0.0, g, -g, b],
        FlowComponent::QTo => [0.0, -bsh, b, g],
    }
}

/// Local variable vector `(v_k, v_j, θ_k, θ_j, t, φ)`.
pub type Local = [f64; 6];

const D_THETA: [f64; 6] = [0.0, 0.0, 1.0, -1.0, 0.0, -1.0];

pub fn component_value(br: &Branch, comp: FlowComponent, z: &Local) -> f64 {
    let [alpha, beta, gamma, eta] = coefficients(br, comp);
    let [vk, vj, tk, tj, t, phi] = *z;
    let th = tk - tj - phi;
    let tr = gamma * th.cos() + eta * th.sin();
    alpha * vk * vk / (t * t) + beta * vj * vj + vk * vj / t * tr
}

/// Value, gradient and full symmetric Hessian of one flow component.
pub fn component_derivatives(br: &Branch, comp: FlowComponent, z: &Local) -> (f64, Local, [Local; 6]) {
    let [alpha, beta, gamma, eta] = coefficients(br, comp);
    let [vk, vj, tk, tj, t, phi] = *z;
    let th = tk - tj - phi;
    let (s, c) = th.sin_cos();
    let tr = gamma * c + eta * s;
    let dtr = -gamma * s + eta * c;
    let t2 = t * t;
    let t3 = t2 * t;
    let bb = vk * vj / t;

    let value = alpha * vk * vk / t2 + beta * vj * vj + bb * tr;

    let mut g = [0.0; 6];
    g[0] = 2.0 * alpha * vk / t2 + vj * tr / t;
    g[1] = 2.0 * beta * vj + vk * tr / t;
    for a in [2, 3, 5] {
        g[a] = bb * dtr * D_THETA[a];
    }
    g[4] = -2.0 * alpha * vk * vk / t3 - bb * tr / t;

    let mut h = [[0.0; 6]; 6];
    let mut set = |a: usize, b: usize, v: f64| {
        h[a][b] = v;
        h[b][a] = v;
    };
    set(0, 0, 2.0 * alpha / t2);
    set(0, 1, tr / t);
    set(1, 1, 2.0 * beta);
    set(0, 4, -4.0 * alpha * vk / t3 - vj * tr / t2);
    set(1, 4, -vk * tr / t2);
    set(4, 4, 6.0 * alpha * vk * vk / (t2 * t2) + 2.0 * bb * tr / t2);
    for a in [2, 3, 5] {
        let da = D_THETA[a];
        set(0, a, vj * dtr * da / t);
        set(1, a, vk * dtr * da / t);
        set(a, 4, -bb * dtr * da / t);
        for b in [2, 3, 5] {
            set(a, b, -bb * tr * da * D_THETA[b]);
        }
    }
    (value, g, h)
}

pub fn branch_flow(br: &Branch, vk: f64, vj: f64, theta_k: f64, theta_j: f64, t: f64, phi: f64) -> BranchFlow {
    let z = [vk, vj, theta_k, theta_j, t, phi];
    BranchFlow {
        p_from: component_value(br, FlowComponent::PFrom, &z),
        q_from: component_value(br, FlowComponent::QFrom, &z),
        p_to: component_value(br, FlowComponent::PTo, &z),
        q_to: component_value(br, FlowComponent::QTo, &z),
    }
}

/// Series active loss `g |V_k / a − V_j|²` with `a = t e^{jφ}`.
pub fn series_loss(br: &Branch, z: &Local) -> f64 {
    let [vk, vj, tk, tj, t, phi] = *z;
    let th = tk - tj - phi;
    br.g * (vk * vk / (t * t) + vj * vj - 2.0 * vk * vj / t * th.cos())
}

/// Per-bus voltage state plus per-branch tap ratio and phase shift.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub tap: Vec<f64>,
    pub phase: Vec<f64>,
}

impl OperatingPoint {
    /// Flat start with taps and phases at mid-range.
    pub fn flat(network: &Network) -> Self {
        OperatingPoint {
            v: vec![1.0; network.buses.len()],
            theta: vec![0.0; network.buses.len()],
            tap: network
                .branches
                .iter()
                .map(|b| 0.5 * (b.tap_min + b.tap_max))
                .collect(),
            phase: network
                .branches
                .iter()
                .map(|b| 0.5 * (b.phase_min + b.phase_max))
                .collect(),
        }
    }

    pub fn local(&self, ends: (usize, usize), branch: usize) -> Local {
        let (k, j) = ends;
        [
            self.v[k],
            self.v[j],
            self.theta[k],
            self.theta[j],
            self.tap[branch],
            self.phase[branch],
        ]
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("{what} has length {found}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<(), FlowError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(FlowError::Dimension {
            what,
            expected,
            found: v.len(),
        })
    }
}

/// Per-bus `(ΔP, ΔQ)` in per-unit. `q_inj_*` follow the candidate order;
/// `p_slack` replaces the scenario's generation at the slack bus.
pub fn nodal_residuals(
    network: &Network,
    scenario: &Scenario,
    point: &OperatingPoint,
    q_inj_r: &[f64],
    q_inj_c: &[f64],
    q_gen: &[f64],
    p_slack: f64,
) -> Result<Vec<(f64, f64)>, FlowError> {
    let n = network.buses.len();
    let nb = network.branches.len();
    let nc = network.candidates.len();
    check_len("v", &point.v, n)?;
    check_len("theta", &point.theta, n)?;
    check_len("tap", &point.tap, nb)?;
    check_len("phase", &point.phase, nb)?;
    check_len("q_inj_r", q_inj_r, nc)?;
    check_len("q_inj_c", q_inj_c, nc)?;
    check_len("q_gen", q_gen, n)?;
    check_len("p_gen", &scenario.p_gen, n)?;

    let slack = network.slack_index();
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let pg = if Some(k) == slack { p_slack } else { scenario.p_gen[k] };
            (pg - scenario.p_dem[k], q_gen[k] - scenario.q_dem[k])
        })
        .collect();
    for (l, (br, ends)) in network.branches.iter().zip(network.branch_ends()).enumerate() {
        let z = point.local(ends, l);
        let f = branch_flow(br, z[0], z[1], z[2], z[3], z[4], z[5]);
        out[ends.0].0 -= f.p_from;
        out[ends.0].1 -= f.q_from;
        out[ends.1].0 -= f.p_to;
        out[ends.1].1 -= f.q_to;
    }
    for (c, k) in network.candidate_bus_indices().into_iter().enumerate() {
        out[k].1 += q_inj_c[c] - q_inj_r[c];
    }
    Ok(out)
}

/// A quantity that is either an NLP variable or a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    Var(usize),
    Fixed(f64),
}

impl Slot {
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Slot::Var(i) => x[i],
            Slot::Fixed(v) => v,
        }
    }

    pub fn index(&self) -> Option<usize> {
        match *self {
            Slot::Var(i) => Some(i),
            Slot::Fixed(_) => None,
        }
    }
}

/// Positions of one scenario's variables inside an NLP vector.
///
/// Angles exist for non-slack buses, taps and phases only where their range
/// is nonempty. Investment indices may be shared between several layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct VarLayout {
    pub v: Vec<usize>,
    pub theta: Vec<Slot>,
    pub tap: Vec<Slot>,
    pub phase: Vec<Slot>,
    pub q_gen: Vec<usize>,
    pub p_slack: usize,
    pub q_inj_r: Vec<usize>,
    pub q_inj_c: Vec<usize>,
    pub q_inv_r: Vec<usize>,
    pub q_inv_c: Vec<usize>,
    /// One past the last index this layout allocated.
    pub end: usize,
}

impl VarLayout {
    pub fn new(network: &Network, start: usize) -> Self {
        Self::build(network, start, None)
    }

    /// Layout whose investment variables are the given shared indices.
    pub fn with_shared_investment(network: &Network, start: usize, q_inv_r: &[usize], q_inv_c: &[usize]) -> Self {
        Self::build(network, start, Some((q_inv_r, q_inv_c)))
    }

    fn build(network: &Network, start: usize, shared: Option<(&[usize], &[usize])>) -> Self {
        let mut next = start;
        let mut take = |count: usize| -> Vec<usize> {
            let r = (next..next + count).collect();
            next += count;
            r
        };
        let n = network.buses.len();
        let nc = network.candidates.len();
        let v = take(n);
        let theta = network
            .buses
            .iter()
            .map(|b| if b.is_slack { Slot::Fixed(0.0) } else { Slot::Var(take(1)[0]) })
            .collect();
        let tap = network
            .branches
            .iter()
            .map(|b| if b.has_tap() { Slot::Var(take(1)[0]) } else { Slot::Fixed(b.tap_min) })
            .collect();
        let phase = network
            .branches
            .iter()
            .map(|b| if b.has_phase() { Slot::Var(take(1)[0]) } else { Slot::Fixed(b.phase_min) })
            .collect();
        let q_gen = take(n);
        let p_slack = take(1)[0];
        let q_inj_r = take(nc);
        let q_inj_c = take(nc);
        let (q_inv_r, q_inv_c) = match shared {
            Some((r, c)) => (r.to_vec(), c.to_vec()),
            None => (take(nc), take(nc)),
        };
        VarLayout {
            v,
            theta,
            tap,
            phase,
            q_gen,
            p_slack,
            q_inj_r,
            q_inj_c,
            q_inv_r,
            q_inv_c,
            end: next,
        }
    }

    pub fn point(&self, x: &[f64]) -> OperatingPoint {
        OperatingPoint {
            v: self.v.iter().map(|&i| x[i]).collect(),
            theta: self.theta.iter().map(|s| s.value(x)).collect(),
            tap: self.tap.iter().map(|s| s.value(x)).collect(),
            phase: self.phase.iter().map(|s| s.value(x)).collect(),
        }
    }

    pub fn write_point(&self, point: &OperatingPoint, x: &mut [f64]) {
        for (k, &i) in self.v.iter().enumerate() {
            x[i] = point.v[k];
        }
        let slots = [
            (&self.theta, &point.theta),
            (&self.tap, &point.tap),
            (&self.phase, &point.phase),
        ];
        for (slots, values) in slots {
            for (s, &val) in slots.iter().zip(values) {
                if let Slot::Var(i) = s {
                    x[*i] = val;
                }
            }
        }
    }

    /// Bounds for the variables this layout owns: voltages, angles, taps,
    /// phases, reactive generation, slack generation and injections.
    /// Investment bounds are left to the caller.
    pub fn write_bounds(&self, network: &Network, scenario: &Scenario, lower: &mut [f64], upper: &mut [f64]) {
        for (k, bus) in network.buses.iter().enumerate() {
            lower[self.v[k]] = bus.v_min;
            upper[self.v[k]] = bus.v_max;
            if let Slot::Var(i) = self.theta[k] {
                lower[i] = f64::NEG_INFINITY;
                upper[i] = f64::INFINITY;
            }
            lower[self.q_gen[k]] = scenario.q_gen_min[k];
            upper[self.q_gen[k]] = scenario.q_gen_max[k];
        }
        for (l, br) in network.branches.iter().enumerate() {
            if let Slot::Var(i) = self.tap[l] {
                lower[i] = br.tap_min;
                upper[i] = br.tap_max;
            }
            if let Slot::Var(i) = self.phase[l] {
                lower[i] = br.phase_min;
                upper[i] = br.phase_max;
            }
        }
        lower[self.p_slack] = scenario.p_slack_min;
        upper[self.p_slack] = scenario.p_slack_max;
        for (c, cand) in network.candidates.iter().enumerate() {
            let cap = network.to_pu(cand.max_mvar);
            for i in [self.q_inj_r[c], self.q_inj_c[c]] {
                lower[i] = 0.0;
                upper[i] = cap;
            }
        }
    }
}

/// Which branch ends carry an apparent-power limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MvaSides {
    #[default]
    From,
    Both,
}

/// Equality rows `ΔP_k`, `ΔQ_k` and inequality rows `p² + q² − s_max² ≤ 0`
/// for one scenario, evaluated on an NLP vector through a [`VarLayout`].
#[derive(Debug, Clone)]
pub struct AcConstraints {
    branches: Vec<Branch>,
    ends: Vec<(usize, usize)>,
    slots: Vec<[Slot; 6]>,
    n_bus: usize,
    slack: usize,
    p_fixed: Vec<f64>,
    q_dem: Vec<f64>,
    q_gen: Vec<usize>,
    p_slack: usize,
    injections: Vec<(usize, usize, usize)>,
    /// `(branch, from side?)` per limit row.
    limits: Vec<(usize, bool)>,
}

impl AcConstraints {
    pub fn new(network: &Network, scenario: &Scenario, layout: &VarLayout, sides: MvaSides) -> Self {
        let ends = network.branch_ends();
        let slots = ends
            .iter()
            .enumerate()
            .map(|(l, &(k, j))| {
                [
                    Slot::Var(layout.v[k]),
                    Slot::Var(layout.v[j]),
                    layout.theta[k],
                    layout.theta[j],
                    layout.tap[l],
                    layout.phase[l],
                ]
            })
            .collect();
        let slack = network.slack_index().expect("validated network has a slack bus");
        let p_fixed = (0..network.buses.len())
            .map(|k| {
                let pg = if k == slack { 0.0 } else { scenario.p_gen[k] };
                pg - scenario.p_dem[k]
            })
            .collect();
        let injections = network
            .candidate_bus_indices()
            .into_iter()
            .enumerate()
            .map(|(c, k)| (k, layout.q_inj_r[c], layout.q_inj_c[c]))
            .collect();
        let mut limits = Vec::new();
        for l in 0..network.branches.len() {
            limits.push((l, true));
            if sides == MvaSides::Both {
                limits.push((l, false));
            }
        }
        AcConstraints {
            branches: network.branches.clone(),
            ends,
            slots,
            n_bus: network.buses.len(),
            slack,
            p_fixed,
            q_dem: scenario.q_dem.clone(),
            q_gen: layout.q_gen.clone(),
            p_slack: layout.p_slack,
            injections,
            limits,
        }
    }

    pub fn num_equalities(&self) -> usize {
        2 * self.n_bus
    }

    pub fn num_limits(&self) -> usize {
        self.limits.len()
    }

    fn local(&self, l: usize, x: &[f64]) -> Local {
        let s = &self.slots[l];
        [
            s[0].value(x),
            s[1].value(x),
            s[2].value(x),
            s[3].value(x),
            s[4].value(x),
            s[5].value(x),
        ]
    }

    fn limit_components(from: bool) -> (FlowComponent, FlowComponent) {
        if from {
            (FlowComponent::PFrom, FlowComponent::QFrom)
        } else {
            (FlowComponent::PTo, FlowComponent::QTo)
        }
    }

    /// Writes `2n` balance residuals into `eq` and the limit values into
    /// `limits`.
    pub fn evaluate(&self, x: &[f64], eq: &mut [f64], limits: &mut [f64]) {
        let n = self.n_bus;
        for k in 0..n {
            eq[k] = self.p_fixed[k];
            eq[n + k] = x[self.q_gen[k]] - self.q_dem[k];
        }
        eq[self.slack] += x[self.p_slack];
        for &(k, r, c) in &self.injections {
            eq[n + k] += x[c] - x[r];
        }
        for (l, br) in self.branches.iter().enumerate() {
            let z = self.local(l, x);
            let (k, j) = self.ends[l];
            eq[k] -= component_value(br, FlowComponent::PFrom, &z);
            eq[n + k] -= component_value(br, FlowComponent::QFrom, &z);
            eq[j] -= component_value(br, FlowComponent::PTo, &z);
            eq[n + j] -= component_value(br, FlowComponent::QTo, &z);
        }
        for (row, &(l, from)) in self.limits.iter().enumerate() {
            let br = &self.branches[l];
            let z = self.local(l, x);
            let (pc, qc) = Self::limit_components(from);
            let p = component_value(br, pc, &z);
            let q = component_value(br, qc, &z);
            limits[row] = p * p + q * q - br.s_max * br.s_max;
        }
    }

    /// Jacobian triplets with equality rows starting at `eq_row` and limit
    /// rows at `limit_row`. Duplicates are expected and summed by the solver.
    pub fn jacobian_structure(&self, eq_row: usize, limit_row: usize) -> Vec<(usize, usize)> {
        let n = self.n_bus;
        let mut out = Vec::new();
        for k in 0..n {
            out.push((eq_row + n + k, self.q_gen[k]));
        }
        out.push((eq_row + self.slack, self.p_slack));
        for &(k, r, c) in &self.injections {
            out.push((eq_row + n + k, r));
            out.push((eq_row + n + k, c));
        }
        for l in 0..self.branches.len() {
            let (k, j) = self.ends[l];
            for row in [k, n + k, j, n + j] {
                for s in &self.slots[l] {
                    if let Some(i) = s.index() {
                        out.push((eq_row + row, i));
                    }
                }
            }
        }
        for (r, &(l, _)) in self.limits.iter().enumerate() {
            for s in &self.slots[l] {
                if let Some(i) = s.index() {
                    out.push((limit_row + r, i));
                }
            }
        }
        out
    }

    pub fn jacobian_values(&self, x: &[f64], vals: &mut [f64]) {
        let n = self.n_bus;
        let mut pos = 0;
        let mut put = |v: f64| {
            vals[pos] = v;
            pos += 1;
        };
        for _ in 0..n {
            put(1.0);
        }
        put(1.0);
        for _ in &self.injections {
            put(-1.0);
            put(1.0);
        }
        for (l, br) in self.branches.iter().enumerate() {
            let z = self.local(l, x);
            for comp in FlowComponent::ALL {
                let (_, g, _) = component_derivatives(br, comp, &z);
                for (a, s) in self.slots[l].iter().enumerate() {
                    if s.index().is_some() {
                        put(-g[a]);
                    }
                }
            }
        }
        for &(l, from) in &self.limits {
            let br = &self.branches[l];
            let z = self.local(l, x);
            let (pc, qc) = Self::limit_components(from);
            let (p, gp, _) = component_derivatives(br, pc, &z);
            let (q, gq, _) = component_derivatives(br, qc, &z);
            for (a, s) in self.slots[l].iter().enumerate() {
                if s.index().is_some() {
                    put(2.0 * (p * gp[a] + q * gq[a]));
                }
            }
        }
    }

    /// Lower-triangle Hessian pattern, one 6×6 block per branch.
    pub fn hessian_structure(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for slots in &self.slots {
            for a in 0..6 {
                for b in 0..=a {
                    if let (Some(i), Some(j)) = (slots[a].index(), slots[b].index()) {
                        out.push((i.max(j), i.min(j)));
                    }
                }
            }
        }
        out
    }

    /// Hessian of `Σ eq_mult·eq + Σ limit_mult·limit`, in the order of
    /// [`hessian_structure`](Self::hessian_structure).
    pub fn hessian_values(&self, x: &[f64], eq_mult: &[f64], limit_mult: &[f64], vals: &mut [f64]) {
        let n = self.n_bus;
        let mut blocks = vec![[[0.0; 6]; 6]; self.branches.len()];
        for (l, br) in self.branches.iter().enumerate() {
            let z = self.local(l, x);
            let (k, j) = self.ends[l];
            let rows = [k, n + k, j, n + j];
            for (comp, row) in FlowComponent::ALL.into_iter().zip(rows) {
                let lam = eq_mult[row];
                if lam == 0.0 {
                    continue;
                }
                let (_, _, h) = component_derivatives(br, comp, &z);
                for a in 0..6 {
                    for b in 0..6 {
                        blocks[l][a][b] -= lam * h[a][b];
                    }
                }
            }
        }
        for (r, &(l, from)) in self.limits.iter().enumerate() {
            let mu = limit_mult[r];
            if mu == 0.0 {
                continue;
            }
            let br = &self.branches[l];
            let z = self.local(l, x);
            let (pc, qc) = Self::limit_components(from);
            let (p, gp, hp) = component_derivatives(br, pc, &z);
            let (q, gq, hq) = component_derivatives(br, qc, &z);
            for a in 0..6 {
                for b in 0..6 {
                    blocks[l][a][b] +=
                        2.0 * mu * (gp[a] * gp[b] + p * hp[a][b] + gq[a] * gq[b] + q * hq[a][b]);
                }
            }
        }
        let mut pos = 0;
        for (l, slots) in self.slots.iter().enumerate() {
            for a in 0..6 {
                for b in 0..=a {
                    if slots[a].index().is_some() && slots[b].index().is_some() {
                        vals[pos] = blocks[l][a][b];
                        pos += 1;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(g: f64, b: f64, charging: f64) -> Branch {
        Branch {
            id: 1,
            from_bus: 1,
            to_bus: 2,
            g,
            b,
            charging,
            s_max: 1.0,
            tap_min: 1.0,
            tap_max: 1.0,
            phase_min: 0.0,
            phase_max: 0.0,
        }
    }

    #[test]
    fn no_flow_with_identical_terminals() {
        let f = branch_flow(&line(1.0, -10.0, 0.0), 1.0, 1.0, 0.3, 0.3, 1.0, 0.0);
        assert!(f.p_from.abs() < 1e-15 && f.q_from.abs() < 1e-15);
    }

    #[test]
    fn lossless_angle_difference() {
        let f = branch_flow(&line(0.0, -10.0, 0.0), 1.0, 1.0, 0.1, 0.0, 1.0, 0.0);
        assert!((f.p_from - 10.0 * 0.1f64.sin()).abs() < 1e-14);
        assert!((f.p_from - 0.99833).abs() < 1e-5);
    }

    #[test]
    fn lossless_branch_is_antisymmetric_in_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let br = line(0.0, -7.0, 0.0);
        for _ in 0..100 {
            let f = branch_flow(
                &br,
                rng.gen_range(0.9..1.1),
                rng.gen_range(0.9..1.1),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                1.0,
                0.0,
            );
            assert!((f.p_from + f.p_to).abs() < 1e-13);
        }
    }

    /// Complex-arithmetic π-model: S_from = V_k I_k*, with the ideal
    /// transformer `a = t e^{jφ}` on the from side.
    fn complex_flows(br: &Branch, z: &Local) -> BranchFlow {
        let [vk, vj, tk, tj, t, phi] = *z;
        let y = Complex64::new(br.g, br.b);
        let ysh = Complex64::new(0.0, br.charging / 2.0);
        let a = Complex64::from_polar(t, phi);
        let v_k = Complex64::from_polar(vk, tk);
        let v_j = Complex64::from_polar(vj, tj);
        let i_k = ((y + ysh) * v_k / (a * a.conj()) - y * v_j / a.conj());
        let i_j = (y + ysh) * v_j - y * v_k / a;
        let sf = v_k * i_k.conj();
        let st = v_j * i_j.conj();
        BranchFlow { p_from: sf.re, q_from: sf.im, p_to: st.re, q_to: st.im }
    }

    #[test]
    fn closed_form_matches_complex_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let br = line(rng.gen_range(0.0..5.0), rng.gen_range(-20.0..-1.0), rng.gen_range(0.0..0.5));
            let z = [
                rng.gen_range(0.9..1.1),
                rng.gen_range(0.9..1.1),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.9..1.1),
                rng.gen_range(-0.3..0.3),
            ];
            let a = branch_flow(&br, z[0], z[1], z[2], z[3], z[4], z[5]);
            let b = complex_flows(&br, &z);
            for (x, y) in [(a.p_from, b.p_from), (a.q_from, b.q_from), (a.p_to, b.p_to), (a.q_to, b.q_to)] {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
            let loss = (a.p_from + a.p_to) - series_loss(&br, &z);
            assert!(loss.abs() < 1e-12);
        }
    }

    #[test]
    fn component_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..50 {
            let br = line(rng.gen_range(0.0..5.0), rng.gen_range(-20.0..-1.0), rng.gen_range(0.0..0.5));
            let z: Local = [
                rng.gen_range(0.9..1.1),
                rng.gen_range(0.9..1.1),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.9..1.1),
                rng.gen_range(-0.3..0.3),
            ];
            for comp in FlowComponent::ALL {
                let (_, g, hs) = component_derivatives(&br, comp, &z);
                for a in 0..6 {
                    let mut zp = z;
                    let mut zm = z;
                    zp[a] += h;
                    zm[a] -= h;
                    let fd = (component_value(&br, comp, &zp) - component_value(&br, comp, &zm)) / (2.0 * h);
                    assert!((fd - g[a]).abs() <= 1e-6 * g[a].abs().max(1e-3), "grad {a}");
                    let (_, gp, _) = component_derivatives(&br, comp, &zp);
                    let (_, gm, _) = component_derivatives(&br, comp, &zm);
                    for b in 0..6 {
                        let fd = (gp[b] - gm[b]) / (2.0 * h);
                        assert!(
                            (fd - hs[a][b]).abs() <= 1e-6 * hs[a][b].abs().max(1e-3),
                            "{comp:?} hess ({a},{b}): {fd} vs {}",
                            hs[a][b]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn squared_limit_agrees_with_magnitude_form() {
        // s = √(p² + q²) and s² − s_max² share sign and have gradients
        // related by d(s²) = 2 s ds.
        let br = line(1.0, -8.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let z: Local = [
                rng.gen_range(0.9..1.1),
                rng.gen_range(0.9..1.1),
                rng.gen_range(-0.5..0.5),
                0.0,
                1.0,
                0.0,
            ];
            let (p, gp, _) = component_derivatives(&br, FlowComponent::PFrom, &z);
            let (q, gq, _) = component_derivatives(&br, FlowComponent::QFrom, &z);
            let s = (p * p + q * q).sqrt();
            assert!(s > 0.0);
            let s_max = 1.0;
            assert_eq!(s <= s_max, p * p + q * q - s_max * s_max <= 0.0);
            for a in 0..6 {
                let d_sq = 2.0 * (p * gp[a] + q * gq[a]);
                let d_abs = (p * gp[a] + q * gq[a]) / s;
                assert!((d_sq - 2.0 * s * d_abs).abs() <= 1e-12 * d_sq.abs().max(1.0));
            }
        }
    }

    fn random_x(layout: &VarLayout, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x: Vec<f64> = (0..layout.end).map(|_| rng.gen_range(-0.5..0.5)).collect();
        for &i in &layout.v {
            x[i] = rng.gen_range(0.9..1.1);
        }
        for s in &layout.tap {
            if let Slot::Var(i) = s {
                x[*i] = rng.gen_range(0.9..1.1);
            }
        }
        x
    }

    fn dense_jacobian(ac: &AcConstraints, x: &[f64], rows: usize) -> Vec<Vec<f64>> {
        let s = ac.jacobian_structure(0, ac.num_equalities());
        let mut v = vec![0.0; s.len()];
        ac.jacobian_values(x, &mut v);
        let mut d = vec![vec![0.0; x.len()]; rows];
        for ((r, c), val) in s.into_iter().zip(v) {
            d[r][c] += val;
        }
        d
    }

    fn eval_all(ac: &AcConstraints, x: &[f64]) -> Vec<f64> {
        let m = ac.num_equalities();
        let mut eq = vec![0.0; m];
        let mut li = vec![0.0; ac.num_limits()];
        ac.evaluate(x, &mut eq, &mut li);
        eq.extend(li);
        eq
    }

    #[test]
    fn constraint_hessian_matches_finite_differences() {
        let case = fixtures::three_bus();
        let net = &case.network;
        let layout = VarLayout::new(net, 0);
        let ac = AcConstraints::new(net, &case.scenarios[0], &layout, MvaSides::Both);
        let rows = ac.num_equalities() + ac.num_limits();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x = random_x(&layout, &mut rng);
            let mult: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (eqm, lim) = mult.split_at(ac.num_equalities());
            let s = ac.hessian_structure();
            let mut v = vec![0.0; s.len()];
            ac.hessian_values(&x, eqm, lim, &mut v);
            let n = x.len();
            let mut hess = vec![vec![0.0; n]; n];
            for ((r, c), val) in s.into_iter().zip(v) {
                hess[r][c] += val;
                if r != c {
                    hess[c][r] += val;
                }
            }
            let h = 1e-6;
            for i in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let jp = dense_jacobian(&ac, &xp, rows);
                let jm = dense_jacobian(&ac, &xm, rows);
                for j in 0..n {
                    let fd: f64 = (0..rows).map(|r| mult[r] * (jp[r][j] - jm[r][j]) / (2.0 * h)).sum();
                    assert!((fd - hess[i][j]).abs() <= 1e-5 * hess[i][j].abs().max(1.0), "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn jacobian_linear_entries() {
        let case = fixtures::three_bus();
        let net = &case.network;
        let layout = VarLayout::new(net, 0);
        let ac = AcConstraints::new(net, &case.scenarios[0], &layout, MvaSides::From);
        let rows = ac.num_equalities() + ac.num_limits();
        let x = random_x(&layout, &mut ChaCha8Rng::seed_from_u64(6));
        let j = dense_jacobian(&ac, &x, rows);
        let n = net.buses.len();
        for (c, k) in net.candidate_bus_indices().into_iter().enumerate() {
            assert_eq!(j[n + k][layout.q_inj_c[c]], 1.0);
            assert_eq!(j[n + k][layout.q_inj_r[c]], -1.0);
        }
        // No angle variable exists at the slack bus.
        let slack = net.slack_index().unwrap();
        assert_eq!(layout.theta[slack], Slot::Fixed(0.0));
        assert_eq!(layout.end, x.len());
    }

    #[test]
    fn evaluator_agrees_with_nodal_residuals() {
        let case = fixtures::three_bus();
        let net = &case.network;
        let sc = &case.scenarios[1];
        let layout = VarLayout::new(net, 0);
        let ac = AcConstraints::new(net, sc, &layout, MvaSides::From);
        let x = random_x(&layout, &mut ChaCha8Rng::seed_from_u64(7));
        let all = eval_all(&ac, &x);
        let pick = |idx: &[usize]| idx.iter().map(|&i| x[i]).collect::<Vec<_>>();
        let res = nodal_residuals(
            net,
            sc,
            &layout.point(&x),
            &pick(&layout.q_inj_r),
            &pick(&layout.q_inj_c),
            &pick(&layout.q_gen),
            x[layout.p_slack],
        )
        .unwrap();
        let n = net.buses.len();
        for k in 0..n {
            assert!((res[k].0 - all[k]).abs() < 1e-14);
            assert!((res[k].1 - all[n + k]).abs() < 1e-14);
        }
    }

    #[test]
    fn residuals_are_local() {
        let case = fixtures::three_bus();
        let net = &case.network;
        let sc = &case.scenarios[0];
        let nc = net.candidates.len();
        let point = OperatingPoint::flat(net);
        let q_gen = vec![0.0; net.buses.len()];
        let base = nodal_residuals(net, sc, &point, &vec![0.0; nc], &vec![0.0; nc], &q_gen, 0.0).unwrap();
        // Perturb a bus with a single neighbour.
        let ends = net.branch_ends();
        let degree = |k: usize| ends.iter().filter(|&&(a, b)| a == k || b == k).count();
        let k = (0..net.buses.len()).min_by_key(|&k| degree(k)).unwrap();
        let mut moved = point.clone();
        moved.v[k] += 0.01;
        let after = nodal_residuals(net, sc, &moved, &vec![0.0; nc], &vec![0.0; nc], &q_gen, 0.0).unwrap();
        for m in 0..net.buses.len() {
            let neighbour = m == k || ends.iter().any(|&(a, b)| (a == k && b == m) || (b == k && a == m));
            let changed = base[m] != after[m];
            assert_eq!(changed, neighbour, "bus {m}");
        }
    }

    #[test]
    fn active_power_is_conserved() {
        let case = fixtures::ieee24();
        let net = &case.network;
        let sc = &case.scenarios[0];
        let n = net.buses.len();
        let nc = net.candidates.len();
        let slack = net.slack_index().unwrap();
        let ends = net.branch_ends();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mut point = OperatingPoint::flat(net);
            for k in 0..n {
                point.v[k] = rng.gen_range(0.9..1.1);
                point.theta[k] = if k == slack { 0.0 } else { rng.gen_range(-0.4..0.4) };
            }
            for (l, br) in net.branches.iter().enumerate() {
                point.tap[l] = rng.gen_range(br.tap_min..=br.tap_max);
                point.phase[l] = rng.gen_range(br.phase_min..=br.phase_max);
            }
            let p_slack = rng.gen_range(0.0..5.0);
            let zeros = vec![0.0; nc];
            let res = nodal_residuals(net, sc, &point, &zeros, &zeros, &vec![0.0; n], p_slack).unwrap();
            let mismatch: f64 = res.iter().map(|r| r.0).sum();
            let injection: f64 = (0..n).map(|k| if k == slack { p_slack } else { sc.p_gen[k] }).sum();
            let load: f64 = sc.p_dem.iter().sum();
            let losses: f64 = net
                .branches
                .iter()
                .enumerate()
                .map(|(l, br)| series_loss(br, &point.local(ends[l], l)))
                .sum();
            let through_flows: f64 = net
                .branches
                .iter()
                .enumerate()
                .map(|(l, br)| {
                    let (a, b) = ends[l];
                    let f = branch_flow(br, point.v[a], point.v[b], point.theta[a], point.theta[b], point.tap[l], point.phase[l]);
                    f.p_from + f.p_to
                })
                .sum();
            assert!((mismatch - (injection - load - losses)).abs() <= 1e-10, "{mismatch}");
            assert!((losses - through_flows).abs() <= 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let case = fixtures::three_bus();
        let net = &case.network;
        let point = OperatingPoint::flat(net);
        let err = nodal_residuals(net, &case.scenarios[0], &point, &[], &[], &[0.0; 3], 0.0).unwrap_err();
        assert!(matches!(err, FlowError::Dimension { what: "q_inj_r", .. }));
    }

    #[test]
    fn isolated_balance_closes() {
        let case = fixtures::two_bus();
        let net = &case.network;
        let mut sc = case.scenarios[0].clone();
        // Zero everything and let the candidate injection cancel the load.
        let point = OperatingPoint::flat(net);
        let n = net.buses.len();
        sc.p_gen = vec![0.0; n];
        sc.p_dem = vec![0.0; n];
        sc.q_dem = vec![0.0; n];
        let k = net.candidate_bus_indices()[0];
        sc.q_dem[k] = 0.2;
        let res = nodal_residuals(net, &sc, &point, &[0.0], &[0.2], &vec![0.0; n], 0.0).unwrap();
        assert!(res.iter().all(|&(p, q)| p.abs() < 1e-15 && q.abs() < 1e-15));
    }
}
