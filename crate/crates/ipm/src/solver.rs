use log::debug;

use crate::ldl::{Inertia, Ldl, SymMatrix};
use crate::problem::NlpProblem;
use crate::SolverError;

/// How the Hessian of the Lagrangian is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianMode {
    #[default]
    Exact,
    /// Damped BFGS on the free variables; the problem's Hessian callback is
    /// never called.
    QuasiNewton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Scaled KKT tolerance, also the bound on the constraint violation.
    pub tol: f64,
    pub max_iterations: usize,
    pub mu_init: f64,
    /// Monotone barrier reduction factor.
    pub mu_decrease: f64,
    /// Fraction-to-the-boundary parameter.
    pub tau: f64,
    /// Relative push of the starting point away from its bounds.
    pub bound_push: f64,
    pub hessian: HessianMode,
    /// First diagonal shift tried when the KKT inertia is wrong.
    pub reg_init: f64,
    pub reg_growth: f64,
    pub reg_max: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iterations: 200,
            mu_init: 0.1,
            mu_decrease: 0.2,
            tau: 0.995,
            bound_push: 1e-2,
            hessian: HessianMode::Exact,
            reg_init: 1e-8,
            reg_growth: 10.0,
            reg_max: 1e20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    IterationLimit,
    Diverged,
    LineSearchFailure,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Status::Converged => "converged",
            Status::IterationLimit => "iteration_limit",
            Status::Diverged => "diverged",
            Status::LineSearchFailure => "line_search_failure",
        };
        f.write_str(s)
    }
}

impl Status {
    pub fn is_converged(self) -> bool {
        self == Status::Converged
    }
}

/// One line of the optional per-iteration trace.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub iteration: usize,
    pub mu: f64,
    pub objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub complementarity: f64,
    pub regularization: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
    pub backtracks: usize,
}

impl std::fmt::Display for IterationTrace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:4} mu={:.2e} f={:+.8e} inf_pr={:.2e} inf_du={:.2e} comp={:.2e} reg={:.1e} a_p={:.2e} a_d={:.2e} ls={}",
            self.iteration,
            self.mu,
            self.objective,
            self.primal_infeasibility,
            self.dual_infeasibility,
            self.complementarity,
            self.regularization,
            self.alpha_primal,
            self.alpha_dual,
            self.backtracks
        )
    }
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    /// Equality multipliers followed by inequality multipliers (≥ 0).
    pub multipliers: Vec<f64>,
    pub lower_bound_multipliers: Vec<f64>,
    pub upper_bound_multipliers: Vec<f64>,
    pub objective: f64,
    pub constraints: Vec<f64>,
    pub status: Status,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub iterations: usize,
    pub message: Option<String>,
}

/// Returns `previous.x` pushed inside `[lower, upper]` by `1e-4` of the bound
/// width (or of `max(1, |bound|)` for half-infinite intervals).
pub fn warm_start_from(
    previous: &NlpSolution,
    problem: &dyn NlpProblem,
) -> Result<Vec<f64>, SolverError> {
    let n = problem.num_variables();
    if previous.x.len() != n {
        return Err(SolverError::DimensionMismatch {
            expected: n,
            found: previous.x.len(),
        });
    }
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    problem.bounds(&mut lower, &mut upper);
    Ok(previous
        .x
        .iter()
        .zip(lower.iter().zip(&upper))
        .map(|(&x, (&l, &u))| project_interior(x, l, u, 1e-4))
        .collect())
}

fn project_interior(x: f64, l: f64, u: f64, frac: f64) -> f64 {
    if l == u {
        return l;
    }
    let width = u - l;
    let margin_l = if width.is_finite() {
        frac * width
    } else {
        frac * l.abs().max(1.0)
    };
    let margin_u = if width.is_finite() {
        frac * width
    } else {
        frac * u.abs().max(1.0)
    };
    let mut v = x;
    if l.is_finite() && v < l + margin_l {
        v = l + margin_l;
    }
    if u.is_finite() && v > u - margin_u {
        v = u - margin_u;
    }
    v
}

pub fn solve(
    problem: &dyn NlpProblem,
    start: &[f64],
    opts: &SolverOptions,
) -> Result<NlpSolution, SolverError> {
    solve_traced(problem, start, opts, None)
}

pub fn solve_traced(
    problem: &dyn NlpProblem,
    start: &[f64],
    opts: &SolverOptions,
    sink: Option<&mut dyn FnMut(&IterationTrace)>,
) -> Result<NlpSolution, SolverError> {
    let mut ip = InteriorPoint::new(problem, start, opts)?;
    Ok(ip.run(sink))
}

const KAPPA_EPS: f64 = 10.0;
const KAPPA_SIGMA: f64 = 1e10;
const ARMIJO_ETA: f64 = 1e-4;
const S_MAX: f64 = 100.0;
// Heavy backtracking triggers a retry with a proximal term on the primal block.
const RETRY_BACKTRACKS: usize = 4;
const RETRY_REG_INIT: f64 = 1e-4;
const RETRY_REG_MAX: f64 = 1e4;

struct Evaluation {
    f: f64,
    grad: Vec<f64>,
    c: Vec<f64>,
    jac: Vec<f64>,
}

struct InteriorPoint<'a> {
    problem: &'a dyn NlpProblem,
    opts: &'a SolverOptions,
    n: usize,
    m_eq: usize,
    m_in: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    // free[j] = full index of free variable j
    free: Vec<usize>,
    free_pos: Vec<Option<usize>>,
    jac_pattern: Vec<(usize, usize)>,
    hess_pattern: Vec<(usize, usize)>,
    // full-space iterate
    x: Vec<f64>,
    // free-space duals
    zl: Vec<f64>,
    zu: Vec<f64>,
    slack: Vec<f64>,
    y: Vec<f64>,
    mu: f64,
    nu: f64,
    last_reg: f64,
    bfgs: Option<Vec<f64>>,
}

impl<'a> InteriorPoint<'a> {
    fn new(
        problem: &'a dyn NlpProblem,
        start: &[f64],
        opts: &'a SolverOptions,
    ) -> Result<Self, SolverError> {
        let n = problem.num_variables();
        if start.len() != n {
            return Err(SolverError::DimensionMismatch {
                expected: n,
                found: start.len(),
            });
        }
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        problem.bounds(&mut lower, &mut upper);
        for i in 0..n {
            if !(lower[i] <= upper[i]) {
                return Err(SolverError::InvalidBounds {
                    index: i,
                    lower: lower[i],
                    upper: upper[i],
                });
            }
        }
        let free: Vec<usize> = (0..n).filter(|&i| lower[i] < upper[i]).collect();
        let mut free_pos = vec![None; n];
        for (j, &i) in free.iter().enumerate() {
            free_pos[i] = Some(j);
        }
        let x: Vec<f64> = (0..n)
            .map(|i| {
                if lower[i] == upper[i] {
                    lower[i]
                } else {
                    push_into(start[i], lower[i], upper[i], opts.bound_push)
                }
            })
            .collect();
        let m_eq = problem.num_equalities();
        let m_in = problem.num_inequalities();
        let bfgs = match opts.hessian {
            HessianMode::Exact => None,
            HessianMode::QuasiNewton => {
                let nf = free.len();
                let mut b = vec![0.0; nf * nf];
                for j in 0..nf {
                    b[j * nf + j] = 1.0;
                }
                Some(b)
            }
        };
        Ok(InteriorPoint {
            problem,
            opts,
            n,
            m_eq,
            m_in,
            jac_pattern: problem.jacobian_structure(),
            hess_pattern: problem.hessian_structure(),
            lower,
            upper,
            free,
            free_pos,
            x,
            zl: Vec::new(),
            zu: Vec::new(),
            slack: Vec::new(),
            y: vec![0.0; m_eq + m_in],
            mu: opts.mu_init,
            nu: 1.0,
            last_reg: 0.0,
            bfgs,
        })
    }

    fn evaluate(&self, x: &[f64]) -> Option<Evaluation> {
        let f = self.problem.objective(x);
        let mut grad = vec![0.0; self.n];
        self.problem.gradient(x, &mut grad);
        let mut c = vec![0.0; self.m_eq + self.m_in];
        self.problem.constraints(x, &mut c);
        let mut jac = vec![0.0; self.jac_pattern.len()];
        self.problem.jacobian_values(x, &mut jac);
        let ok = f.is_finite()
            && grad.iter().all(|v| v.is_finite())
            && c.iter().all(|v| v.is_finite())
            && jac.iter().all(|v| v.is_finite());
        ok.then_some(Evaluation { f, grad, c, jac })
    }

    fn evaluate_values(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let f = self.problem.objective(x);
        let mut c = vec![0.0; self.m_eq + self.m_in];
        self.problem.constraints(x, &mut c);
        (f.is_finite() && c.iter().all(|v| v.is_finite())).then_some((f, c))
    }

    fn has_lower(&self, j: usize) -> bool {
        self.lower[self.free[j]].is_finite()
    }

    fn has_upper(&self, j: usize) -> bool {
        self.upper[self.free[j]].is_finite()
    }

    /// Free-space `Jᵀ v` for a full constraint-space vector.
    fn jac_t_mul(&self, jac: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.free.len()];
        for (k, &(r, c)) in self.jac_pattern.iter().enumerate() {
            if let Some(j) = self.free_pos[c] {
                out[j] += jac[k] * v[r];
            }
        }
        out
    }

    /// `J dx` in full constraint space.
    fn jac_mul(&self, jac: &[f64], dx: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m_eq + self.m_in];
        for (k, &(r, c)) in self.jac_pattern.iter().enumerate() {
            if let Some(j) = self.free_pos[c] {
                out[r] += jac[k] * dx[j];
            }
        }
        out
    }

    fn lagrangian_gradient(&self, ev: &Evaluation, y: &[f64]) -> Vec<f64> {
        let mut g = self.jac_t_mul(&ev.jac, y);
        for (j, &i) in self.free.iter().enumerate() {
            g[j] += ev.grad[i];
        }
        g
    }

    fn violation(&self, c: &[f64]) -> f64 {
        let eq = c[..self.m_eq].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ineq = c[self.m_eq..].iter().fold(0.0f64, |m, v| m.max(*v));
        eq.max(ineq)
    }

    fn barrier_objective(&self, f: f64, x: &[f64], slack: &[f64]) -> f64 {
        let mut phi = f;
        for (j, &i) in self.free.iter().enumerate() {
            if self.has_lower(j) {
                phi -= self.mu * (x[i] - self.lower[i]).ln();
            }
            if self.has_upper(j) {
                phi -= self.mu * (self.upper[i] - x[i]).ln();
            }
        }
        for &s in slack {
            phi -= self.mu * s.ln();
        }
        phi
    }

    fn constraint_residual(&self, c: &[f64], slack: &[f64]) -> Vec<f64> {
        let mut r = c.to_vec();
        for (k, s) in slack.iter().enumerate() {
            r[self.m_eq + k] += s;
        }
        r
    }

    /// Returns (scaled overall error, primal inf, dual inf, complementarity)
    /// for barrier parameter `mu`.
    fn optimality_error(&self, ev: &Evaluation, mu: f64) -> (f64, f64, f64, f64) {
        let grad_l = self.lagrangian_gradient(ev, &self.y);
        let mut dual = 0.0f64;
        let mut comp = 0.0f64;
        let mut z_sum = 0.0;
        let mut n_bounds = 0usize;
        for (j, &i) in self.free.iter().enumerate() {
            let r = grad_l[j] - self.zl[j] + self.zu[j];
            dual = dual.max(r.abs());
            if self.has_lower(j) {
                comp = comp.max(((self.x[i] - self.lower[i]) * self.zl[j] - mu).abs());
                z_sum += self.zl[j].abs();
                n_bounds += 1;
            }
            if self.has_upper(j) {
                comp = comp.max(((self.upper[i] - self.x[i]) * self.zu[j] - mu).abs());
                z_sum += self.zu[j].abs();
                n_bounds += 1;
            }
        }
        for k in 0..self.m_in {
            comp = comp.max((self.slack[k] * self.y[self.m_eq + k] - mu).abs());
            z_sum += self.y[self.m_eq + k].abs();
            n_bounds += 1;
        }
        let primal = self
            .constraint_residual(&ev.c, &self.slack)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let y_sum: f64 = self.y[..self.m_eq].iter().map(|v| v.abs()).sum();
        let denom = (self.m_eq + n_bounds).max(1) as f64;
        let s_d = (S_MAX.max((y_sum + z_sum) / denom)) / S_MAX;
        let s_c = (S_MAX.max(z_sum / n_bounds.max(1) as f64)) / S_MAX;
        let err = (dual / s_d).max(primal).max(comp / s_c);
        (err, primal, dual, comp)
    }

    fn hessian_dense(&self, x: &[f64]) -> SymMatrix {
        let nf = self.free.len();
        let mut h = SymMatrix::zeros(nf);
        match &self.bfgs {
            Some(b) => {
                for j in 0..nf {
                    for i in j..nf {
                        h.add(i, j, b[i * nf + j]);
                    }
                }
            }
            None => {
                let mut vals = vec![0.0; self.hess_pattern.len()];
                self.problem.hessian_values(x, 1.0, &self.y, &mut vals);
                for (k, &(r, c)) in self.hess_pattern.iter().enumerate() {
                    if let (Some(i), Some(j)) = (self.free_pos[r], self.free_pos[c]) {
                        h.add(i, j, vals[k]);
                    }
                }
            }
        }
        h
    }

    fn initialize(&mut self, ev: &Evaluation) {
        let nf = self.free.len();
        self.zl = vec![0.0; nf];
        self.zu = vec![0.0; nf];
        for (j, &i) in self.free.iter().enumerate() {
            if self.lower[i].is_finite() {
                self.zl[j] = self.mu / (self.x[i] - self.lower[i]);
            }
            if self.upper[i].is_finite() {
                self.zu[j] = self.mu / (self.upper[i] - self.x[i]);
            }
        }
        self.slack = ev.c[self.m_eq..]
            .iter()
            .map(|&ci| (-ci).max(self.opts.bound_push * ci.abs().max(1.0)))
            .collect();
        for k in 0..self.m_in {
            self.y[self.m_eq + k] = self.mu / self.slack[k];
        }
    }

    fn finish(&self, ev: Option<&Evaluation>, status: Status, iterations: usize, message: Option<String>) -> NlpSolution {
        let (objective, constraints) = self
            .evaluate_values(&self.x)
            .unwrap_or((f64::NAN, vec![f64::NAN; self.m_eq + self.m_in]));
        let max_violation = self.violation(&constraints);
        let kkt_residual = match ev {
            Some(ev) if !self.zl.is_empty() || self.free.is_empty() => self.optimality_error(ev, 0.0).0,
            _ => f64::INFINITY,
        };
        let mut lower_mult = vec![0.0; self.n];
        let mut upper_mult = vec![0.0; self.n];
        for (j, &i) in self.free.iter().enumerate() {
            if let Some(z) = self.zl.get(j) {
                lower_mult[i] = *z;
            }
            if let Some(z) = self.zu.get(j) {
                upper_mult[i] = *z;
            }
        }
        NlpSolution {
            x: self.x.clone(),
            multipliers: self.y.clone(),
            lower_bound_multipliers: lower_mult,
            upper_bound_multipliers: upper_mult,
            objective,
            constraints,
            status,
            kkt_residual,
            max_violation,
            iterations,
            message,
        }
    }

    fn run(&mut self, mut sink: Option<&mut dyn FnMut(&IterationTrace)>) -> NlpSolution {
        let mut ev = match self.evaluate(&self.x) {
            Some(ev) => ev,
            None => {
                return self.finish(
                    None,
                    Status::Diverged,
                    0,
                    Some("non-finite function value at the starting point".into()),
                )
            }
        };
        self.initialize(&ev);
        let nf = self.free.len();
        let tol = self.opts.tol;
        let mu_min = tol / 10.0;

        for iter in 0..=self.opts.max_iterations {
            let (err0, inf_pr, inf_du, comp) = self.optimality_error(&ev, 0.0);
            if err0 <= tol && self.violation(&ev.c) <= tol {
                return self.finish(Some(&ev), Status::Converged, iter, None);
            }
            if nf == 0 {
                return self.finish(
                    Some(&ev),
                    Status::Diverged,
                    iter,
                    Some("all variables fixed at an infeasible point".into()),
                );
            }
            if iter == self.opts.max_iterations {
                return self.finish(Some(&ev), Status::IterationLimit, iter, None);
            }

            // Monotone barrier update.
            loop {
                let (err_mu, ..) = self.optimality_error(&ev, self.mu);
                if err_mu > KAPPA_EPS * self.mu || self.mu <= mu_min {
                    break;
                }
                self.mu = mu_min.max((self.opts.mu_decrease * self.mu).min(self.mu.powf(1.5)));
            }
            let mu = self.mu;

            let mut min_reg = 0.0;
            let (step, alpha, alpha_d, backtracks, x_new, s_new) = loop {
                let step = match self.newton_step(&ev, min_reg) {
                    Some(step) => step,
                    None => {
                        return self.finish(
                            Some(&ev),
                            Status::Diverged,
                            iter,
                            Some("could not obtain a KKT matrix with correct inertia".into()),
                        )
                    }
                };
                let (alpha_p, alpha_d) = self.step_lengths(&step);
                let last = min_reg >= RETRY_REG_MAX;
                let limit = if last { 60 } else { RETRY_BACKTRACKS };
                match self.line_search(&ev, &step, alpha_p, limit) {
                    Some((alpha, backtracks, x_t, s_t)) => break (step, alpha, alpha_d, backtracks, x_t, s_t),
                    None if !last => {
                        min_reg = if min_reg == 0.0 { RETRY_REG_INIT } else { min_reg * 10.0 };
                        debug!("short step, retrying with primal regularization {min_reg:.1e}");
                    }
                    None => {
                        return self.finish(
                            Some(&ev),
                            Status::LineSearchFailure,
                            iter,
                            Some("no acceptable step after 60 backtracks".into()),
                        )
                    }
                }
            };

            let x_old_free: Vec<f64> = self.free.iter().map(|&i| self.x[i]).collect();
            self.x = x_new;
            self.slack = s_new;
            for k in 0..self.m_eq {
                self.y[k] += alpha * step.dy[k];
            }
            for k in 0..self.m_in {
                self.y[self.m_eq + k] += alpha_d * step.dlam[k];
            }
            for j in 0..nf {
                self.zl[j] += alpha_d * step.dzl[j];
                self.zu[j] += alpha_d * step.dzu[j];
            }
            self.safeguard_duals();

            if self.x.iter().any(|v| !v.is_finite() || v.abs() > 1e20) {
                return self.finish(None, Status::Diverged, iter + 1, Some("iterates diverged".into()));
            }
            let ev_new = match self.evaluate(&self.x) {
                Some(e) => e,
                None => {
                    return self.finish(
                        None,
                        Status::Diverged,
                        iter + 1,
                        Some("non-finite derivative at accepted point".into()),
                    )
                }
            };
            if self.bfgs.is_some() {
                self.bfgs_update(&ev, &ev_new, &x_old_free);
            }
            ev = ev_new;

            if let Some(sink) = sink.as_deref_mut() {
                sink(&IterationTrace {
                    iteration: iter,
                    mu,
                    objective: ev.f,
                    primal_infeasibility: inf_pr,
                    dual_infeasibility: inf_du,
                    complementarity: comp,
                    regularization: step.regularization,
                    alpha_primal: alpha,
                    alpha_dual: alpha_d,
                    backtracks,
                });
            }
        }
        unreachable!("loop returns at the iteration limit")
    }

    fn step_lengths(&self, step: &Step) -> (f64, f64) {
        let tau = self.opts.tau;
        let mut alpha_p: f64 = 1.0;
        let mut alpha_d: f64 = 1.0;
        for (j, &i) in self.free.iter().enumerate() {
            let dx = step.dx[j];
            if self.has_lower(j) && dx < 0.0 {
                alpha_p = alpha_p.min(-tau * (self.x[i] - self.lower[i]) / dx);
            }
            if self.has_upper(j) && dx > 0.0 {
                alpha_p = alpha_p.min(tau * (self.upper[i] - self.x[i]) / dx);
            }
            if self.has_lower(j) && step.dzl[j] < 0.0 {
                alpha_d = alpha_d.min(-tau * self.zl[j] / step.dzl[j]);
            }
            if self.has_upper(j) && step.dzu[j] < 0.0 {
                alpha_d = alpha_d.min(-tau * self.zu[j] / step.dzu[j]);
            }
        }
        for k in 0..self.m_in {
            if step.ds[k] < 0.0 {
                alpha_p = alpha_p.min(-tau * self.slack[k] / step.ds[k]);
            }
            let lam = self.y[self.m_eq + k];
            if step.dlam[k] < 0.0 {
                alpha_d = alpha_d.min(-tau * lam / step.dlam[k]);
            }
        }
        (alpha_p, alpha_d)
    }

    /// Backtracking on the l2 merit function. Returns the accepted step length,
    /// the number of halvings and the trial point.
    fn line_search(
        &mut self,
        ev: &Evaluation,
        step: &Step,
        alpha_p: f64,
        max_backtracks: usize,
    ) -> Option<(f64, usize, Vec<f64>, Vec<f64>)> {
        let mu = self.mu;
        let r0 = self.constraint_residual(&ev.c, &self.slack);
        let theta0 = norm2(&r0);
        let phi_b0 = self.barrier_objective(ev.f, &self.x, &self.slack);
        let mut dphi_b = 0.0;
        for (j, &i) in self.free.iter().enumerate() {
            let mut g = ev.grad[i];
            if self.has_lower(j) {
                g -= mu / (self.x[i] - self.lower[i]);
            }
            if self.has_upper(j) {
                g += mu / (self.upper[i] - self.x[i]);
            }
            dphi_b += g * step.dx[j];
        }
        for k in 0..self.m_in {
            dphi_b -= mu / self.slack[k] * step.ds[k];
        }
        if theta0 > 0.0 {
            let nu_trial = (dphi_b + 0.5 * step.curvature.max(0.0)) / (0.9 * theta0);
            if self.nu < nu_trial {
                self.nu = nu_trial.max(1e-8) * 1.1;
            }
        }
        let dphi = (dphi_b - self.nu * theta0).min(0.0);
        let phi0 = phi_b0 + self.nu * theta0;

        let x_scale = self
            .free
            .iter()
            .enumerate()
            .fold(0.0f64, |m, (j, &i)| m.max(step.dx[j].abs() / (1.0 + self.x[i].abs())));
        let mut alpha = alpha_p;
        for backtracks in 0..=max_backtracks {
            let mut x_t = self.x.clone();
            for (j, &i) in self.free.iter().enumerate() {
                x_t[i] += alpha * step.dx[j];
            }
            let s_t: Vec<f64> = self
                .slack
                .iter()
                .zip(&step.ds)
                .map(|(s, ds)| s + alpha * ds)
                .collect();
            if alpha * x_scale < 10.0 * f64::EPSILON {
                // Step too small to matter; accept and let the barrier move on.
                return Some((alpha, backtracks, x_t, s_t));
            }
            if let Some((f_t, c_t)) = self.evaluate_values(&x_t) {
                let theta_t = norm2(&self.constraint_residual(&c_t, &s_t));
                let phi_t = self.barrier_objective(f_t, &x_t, &s_t) + self.nu * theta_t;
                if phi_t.is_finite() && phi_t <= phi0 + ARMIJO_ETA * alpha * dphi {
                    return Some((alpha, backtracks, x_t, s_t));
                }
            }
            alpha *= 0.5;
        }
        None
    }

    fn safeguard_duals(&mut self) {
        let mu = self.mu;
        for (j, &i) in self.free.iter().enumerate() {
            if self.lower[i].is_finite() {
                let gap = self.x[i] - self.lower[i];
                self.zl[j] = self.zl[j].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
            }
            if self.upper[i].is_finite() {
                let gap = self.upper[i] - self.x[i];
                self.zu[j] = self.zu[j].clamp(mu / (KAPPA_SIGMA * gap), KAPPA_SIGMA * mu / gap);
            }
        }
        for k in 0..self.m_in {
            let s = self.slack[k];
            let lam = &mut self.y[self.m_eq + k];
            *lam = lam.clamp(mu / (KAPPA_SIGMA * s), KAPPA_SIGMA * mu / s);
        }
    }

    fn bfgs_update(&mut self, old: &Evaluation, new: &Evaluation, x_old_free: &[f64]) {
        let nf = self.free.len();
        let g_new = self.lagrangian_gradient(new, &self.y);
        let g_old = self.lagrangian_gradient(old, &self.y);
        let s: Vec<f64> = self
            .free
            .iter()
            .zip(x_old_free)
            .map(|(&i, xo)| self.x[i] - xo)
            .collect();
        let mut yv: Vec<f64> = g_new.iter().zip(&g_old).map(|(a, b)| a - b).collect();
        let b = self.bfgs.as_mut().expect("bfgs state");
        let mut bs = vec![0.0; nf];
        for i in 0..nf {
            bs[i] = (0..nf).map(|j| b[i * nf + j] * s[j]).sum();
        }
        let sbs: f64 = s.iter().zip(&bs).map(|(a, c)| a * c).sum();
        if sbs <= 1e-16 {
            return;
        }
        let mut sy: f64 = s.iter().zip(&yv).map(|(a, c)| a * c).sum();
        if sy < 0.2 * sbs {
            let theta = 0.8 * sbs / (sbs - sy);
            for i in 0..nf {
                yv[i] = theta * yv[i] + (1.0 - theta) * bs[i];
            }
            sy = s.iter().zip(&yv).map(|(a, c)| a * c).sum();
        }
        for i in 0..nf {
            for j in 0..nf {
                b[i * nf + j] += yv[i] * yv[j] / sy - bs[i] * bs[j] / sbs;
            }
        }
    }

    fn newton_step(&mut self, ev: &Evaluation, min_reg: f64) -> Option<Step> {
        let nf = self.free.len();
        let m_eq = self.m_eq;
        let mu = self.mu;
        let dim = nf + m_eq;

        // Group Jacobian entries by row in free coordinates.
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m_eq + self.m_in];
        for (k, &(r, c)) in self.jac_pattern.iter().enumerate() {
            if let Some(j) = self.free_pos[c] {
                rows[r].push((j, ev.jac[k]));
            }
        }

        let h = self.hessian_dense(&self.x);
        let mut base = SymMatrix::zeros(dim);
        for j in 0..nf {
            for i in j..nf {
                let v = h.get(i, j);
                if v != 0.0 {
                    base.add(i, j, v);
                }
            }
        }
        let mut sigma = vec![0.0; nf];
        for (j, &i) in self.free.iter().enumerate() {
            if self.has_lower(j) {
                sigma[j] += self.zl[j] / (self.x[i] - self.lower[i]);
            }
            if self.has_upper(j) {
                sigma[j] += self.zu[j] / (self.upper[i] - self.x[i]);
            }
            base.add(j, j, sigma[j]);
        }
        let d_in: Vec<f64> = (0..self.m_in)
            .map(|k| self.y[m_eq + k] / self.slack[k])
            .collect();
        for k in 0..self.m_in {
            let row = &rows[m_eq + k];
            for a in 0..row.len() {
                for b in 0..=a {
                    let (ja, va) = row[a];
                    let (jb, vb) = row[b];
                    let v = d_in[k] * va * vb;
                    if ja == jb && a != b {
                        base.add(ja, jb, 2.0 * v);
                    } else {
                        base.add(ja, jb, v);
                    }
                }
            }
        }
        for (r, row) in rows.iter().take(m_eq).enumerate() {
            for &(j, v) in row {
                base.add(nf + r, j, v);
            }
        }

        // Right-hand side.
        let grad_l = self.lagrangian_gradient(ev, &self.y);
        let mut rhs = vec![0.0; dim];
        for (j, &i) in self.free.iter().enumerate() {
            let mut r = grad_l[j];
            if self.has_lower(j) {
                r -= mu / (self.x[i] - self.lower[i]);
            }
            if self.has_upper(j) {
                r += mu / (self.upper[i] - self.x[i]);
            }
            rhs[j] = -r;
        }
        for k in 0..self.m_in {
            let lam = self.y[m_eq + k];
            let s = self.slack[k];
            let t = lam / s * ev.c[m_eq + k] + mu / s;
            for &(j, v) in &rows[m_eq + k] {
                rhs[j] -= v * t;
            }
        }
        for r in 0..m_eq {
            rhs[nf + r] = -ev.c[r];
        }

        // Inertia correction.
        let target = Inertia {
            positive: nf,
            negative: m_eq,
            zero: 0,
        };
        let mut delta_w = min_reg;
        let mut delta_c = 0.0;
        let factor = |dw: f64, dc: f64| {
            let mut k = base.clone();
            if dw != 0.0 {
                for j in 0..nf {
                    k.add(j, j, dw);
                }
            }
            if dc != 0.0 {
                for r in 0..m_eq {
                    k.add(nf + r, nf + r, -dc);
                }
            }
            Ldl::factor(k, 1e-13)
        };
        let mut ldl = factor(delta_w, 0.0);
        let mut attempts = 0;
        while ldl.inertia() != target {
            attempts += 1;
            if attempts > 40 {
                return None;
            }
            if ldl.inertia().zero > 0 && delta_c == 0.0 && m_eq > 0 {
                delta_c = 1e-8 * mu.powf(0.25);
                ldl = factor(delta_w, delta_c);
                continue;
            }
            delta_w = if delta_w == 0.0 {
                if self.last_reg == 0.0 {
                    self.opts.reg_init
                } else {
                    (self.last_reg / 3.0).max(1e-20)
                }
            } else {
                delta_w * self.opts.reg_growth
            };
            if delta_w > self.opts.reg_max {
                return None;
            }
            ldl = factor(delta_w, delta_c);
        }
        if delta_w > min_reg {
            self.last_reg = delta_w;
            debug!("inertia correction delta_w = {delta_w:.1e}");
        }

        let sol = ldl.solve(&rhs);
        let dx = sol[..nf].to_vec();
        let dy = sol[nf..].to_vec();

        let jdx = self.jac_mul(&ev.jac, &dx);
        let mut dlam = vec![0.0; self.m_in];
        let mut ds = vec![0.0; self.m_in];
        for k in 0..self.m_in {
            let lam = self.y[m_eq + k];
            let s = self.slack[k];
            dlam[k] = lam / s * (jdx[m_eq + k] + ev.c[m_eq + k]) + mu / s;
            ds[k] = (mu - s * lam - s * dlam[k]) / lam;
        }
        let mut dzl = vec![0.0; nf];
        let mut dzu = vec![0.0; nf];
        for (j, &i) in self.free.iter().enumerate() {
            if self.has_lower(j) {
                let gap = self.x[i] - self.lower[i];
                dzl[j] = mu / gap - self.zl[j] - self.zl[j] / gap * dx[j];
            }
            if self.has_upper(j) {
                let gap = self.upper[i] - self.x[i];
                dzu[j] = mu / gap - self.zu[j] + self.zu[j] / gap * dx[j];
            }
        }

        // dxᵀ (H + Σ + δ) dx + dsᵀ (Λ/S) ds
        let mut hdx = vec![0.0; nf];
        h.mul_vec(&dx, &mut hdx);
        let mut curvature: f64 = (0..nf)
            .map(|j| dx[j] * (hdx[j] + (sigma[j] + delta_w) * dx[j]))
            .sum();
        curvature += (0..self.m_in).map(|k| d_in[k] * ds[k] * ds[k]).sum::<f64>();

        Some(Step {
            dx,
            dy,
            ds,
            dlam,
            dzl,
            dzu,
            curvature,
            regularization: delta_w,
        })
    }
}

struct Step {
    dx: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<f64>,
    dlam: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
    curvature: f64,
    regularization: f64,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn push_into(x: f64, l: f64, u: f64, kappa: f64) -> f64 {
    let width = u - l;
    let pl = if width.is_finite() {
        (kappa * l.abs().max(1.0)).min(kappa * width)
    } else {
        kappa * l.abs().max(1.0)
    };
    let pu = if width.is_finite() {
        (kappa * u.abs().max(1.0)).min(kappa * width)
    } else {
        kappa * u.abs().max(1.0)
    };
    let mut v = x;
    if l.is_finite() && v < l + pl {
        v = l + pl;
    }
    if u.is_finite() && v > u - pu {
        v = u - pu;
    }
    v
}
