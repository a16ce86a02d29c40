/// A smooth nonlinear program
///
/// ```text
///     min  f(x)
///     s.t. c_i(x) = 0      i < m_eq
///          c_i(x) <= 0     m_eq <= i < m_eq + m_ineq
///          lower <= x <= upper
/// ```
///
/// Derivatives are supplied as coordinate triplets over a pattern that must
/// not change between evaluations. Duplicate coordinates are summed. The
/// Hessian pattern addresses the lower triangle only (`row >= col`).
pub trait NlpProblem {
    fn num_variables(&self) -> usize;

    /// Bounds may be infinite; `lower[i] == upper[i]` fixes the variable.
    fn bounds(&self, lower: &mut [f64], upper: &mut [f64]);

    fn num_equalities(&self) -> usize;

    fn num_inequalities(&self) -> usize;

    fn objective(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], grad: &mut [f64]);

    /// Writes equalities first, then inequalities.
    fn constraints(&self, x: &[f64], out: &mut [f64]);

    fn jacobian_structure(&self) -> Vec<(usize, usize)>;

    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]);

    fn hessian_structure(&self) -> Vec<(usize, usize)>;

    /// Hessian of `obj_factor * f(x) + Σ multipliers[i] * c_i(x)`.
    fn hessian_values(&self, x: &[f64], obj_factor: f64, multipliers: &[f64], vals: &mut [f64]);

    fn num_constraints(&self) -> usize {
        self.num_equalities() + self.num_inequalities()
    }
}
