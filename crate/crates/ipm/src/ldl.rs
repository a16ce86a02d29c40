//! Dense symmetric indefinite factorization `P A Pᵀ = L D Lᵀ` with
//! Bunch–Kaufman diagonal pivoting (1×1 and 2×2 blocks).
//!
//! Only the lower triangle of the input is referenced. The factorization
//! reports the inertia of `A`, which the interior-point solver uses to decide
//! whether the Hessian block needs regularization.

/// Counts of positive, negative and zero eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Debug, Clone, Copy)]
enum Pivot {
    One(f64),
    // Stores (d11, d21, d22); occupies two consecutive rows.
    Two(f64, f64, f64),
}

/// Column-major lower-triangular working storage.
#[derive(Debug, Clone)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `value` at `(i, j)`; either triangle may be addressed.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.data[r + c * self.n] += value;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.data[r + c * self.n]
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i + j * self.n]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i + j * self.n]
    }

    /// `y = A x` using the symmetric lower storage.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        y.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            y[j] += self.at(j, j) * x[j];
            for i in j + 1..n {
                let a = self.at(i, j);
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
        }
    }
}

/// A completed factorization.
#[derive(Debug, Clone)]
pub struct Ldl {
    n: usize,
    // Unit lower-triangular factor below the diagonal, column-major.
    l: Vec<f64>,
    pivots: Vec<Pivot>,
    // perm[i] = original row placed at position i.
    perm: Vec<usize>,
    inertia: Inertia,
}

const BK_ALPHA: f64 = 0.640_388_203_202_208_4; // (1 + sqrt(17)) / 8

impl Ldl {
    /// Factorizes `a` in place. `zero_tol` is the absolute pivot magnitude
    /// below which a pivot counts as a zero eigenvalue.
    pub fn factor(mut a: SymMatrix, zero_tol: f64) -> Ldl {
        let n = a.n;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots = Vec::with_capacity(n);
        let mut inertia = Inertia::default();

        let mut k = 0;
        while k < n {
            let absakk = a.at(k, k).abs();
            let (imax, colmax) = (k + 1..n)
                .map(|i| (i, a.at(i, k).abs()))
                .fold((k, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });

            let mut kstep = 1;
            let mut kp = k;
            if absakk.max(colmax) <= zero_tol {
                // Entire remaining column is negligible.
                *a.at_mut(k, k) = 0.0;
                for i in k + 1..n {
                    *a.at_mut(i, k) = 0.0;
                }
                pivots.push(Pivot::One(0.0));
                inertia.zero += 1;
                k += 1;
                continue;
            }
            if absakk < BK_ALPHA * colmax {
                let rowmax = (k..n)
                    .filter(|&j| j != imax)
                    .map(|j| a.get(imax, j).abs())
                    .fold(0.0, f64::max);
                if absakk >= BK_ALPHA * colmax * (colmax / rowmax) {
                    kp = k;
                } else if a.at(imax, imax).abs() >= BK_ALPHA * rowmax {
                    kp = imax;
                } else {
                    kp = imax;
                    kstep = 2;
                }
            }

            let kk = k + kstep - 1;
            if kp != kk {
                swap_symmetric(&mut a, kk, kp);
                perm.swap(kk, kp);
            }

            if kstep == 1 {
                let d = a.at(k, k);
                if d.abs() <= zero_tol {
                    inertia.zero += 1;
                    pivots.push(Pivot::One(0.0));
                    for i in k + 1..n {
                        *a.at_mut(i, k) = 0.0;
                    }
                } else {
                    if d > 0.0 {
                        inertia.positive += 1;
                    } else {
                        inertia.negative += 1;
                    }
                    pivots.push(Pivot::One(d));
                    let inv = 1.0 / d;
                    for j in k + 1..n {
                        let ajk = a.at(j, k);
                        if ajk == 0.0 {
                            continue;
                        }
                        let f = ajk * inv;
                        for i in j..n {
                            let aik = a.at(i, k);
                            *a.at_mut(i, j) -= aik * f;
                        }
                    }
                    for i in k + 1..n {
                        *a.at_mut(i, k) *= inv;
                    }
                }
            } else {
                let d11 = a.at(k, k);
                let d21 = a.at(k + 1, k);
                let d22 = a.at(k + 1, k + 1);
                let det = d11 * d22 - d21 * d21;
                if det.abs() <= zero_tol * zero_tol {
                    inertia.zero += 2;
                } else if det < 0.0 {
                    inertia.positive += 1;
                    inertia.negative += 1;
                } else if d11 + d22 > 0.0 {
                    inertia.positive += 2;
                } else {
                    inertia.negative += 2;
                }
                pivots.push(Pivot::Two(d11, d21, d22));
                let (i11, i21, i22) = (d22 / det, -d21 / det, d11 / det);
                // W = A[k+2.., k..k+2] D^{-1}
                let m = n - (k + 2);
                let mut w1 = vec![0.0; m];
                let mut w2 = vec![0.0; m];
                for (t, i) in (k + 2..n).enumerate() {
                    let a1 = a.at(i, k);
                    let a2 = a.at(i, k + 1);
                    w1[t] = a1 * i11 + a2 * i21;
                    w2[t] = a1 * i21 + a2 * i22;
                }
                for (tj, j) in (k + 2..n).enumerate() {
                    let aj1 = a.at(j, k);
                    let aj2 = a.at(j, k + 1);
                    for (ti, i) in (j..n).enumerate() {
                        let t = tj + ti;
                        *a.at_mut(i, j) -= w1[t] * aj1 + w2[t] * aj2;
                    }
                }
                for (t, i) in (k + 2..n).enumerate() {
                    *a.at_mut(i, k) = w1[t];
                    *a.at_mut(i, k + 1) = w2[t];
                }
                *a.at_mut(k + 1, k) = 0.0;
            }
            k += kstep;
        }

        Ldl {
            n,
            l: a.data,
            pivots,
            perm,
            inertia,
        }
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Solves `A x = b`. Zero pivots are treated as pseudo-inverse zeros.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // L z = P b
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for i in j + 1..n {
                    x[i] -= self.l[i + j * n] * xj;
                }
            }
        }
        // D w = z
        let mut k = 0;
        for piv in &self.pivots {
            match *piv {
                Pivot::One(d) => {
                    x[k] = if d == 0.0 { 0.0 } else { x[k] / d };
                    k += 1;
                }
                Pivot::Two(d11, d21, d22) => {
                    let det = d11 * d22 - d21 * d21;
                    let (b1, b2) = (x[k], x[k + 1]);
                    x[k] = (d22 * b1 - d21 * b2) / det;
                    x[k + 1] = (d11 * b2 - d21 * b1) / det;
                    k += 2;
                }
            }
        }
        // Lᵀ u = w
        for j in (0..n).rev() {
            let mut s = x[j];
            for i in j + 1..n {
                s -= self.l[i + j * n] * x[i];
            }
            x[j] = s;
        }
        let mut out = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = x[i];
        }
        out
    }
}

/// Symmetric interchange of rows/columns `p < q`, including the already
/// computed columns of `L` to the left of `p`.
fn swap_symmetric(a: &mut SymMatrix, p: usize, q: usize) {
    debug_assert!(p < q);
    let n = a.n;
    let tmp = a.at(p, p);
    *a.at_mut(p, p) = a.at(q, q);
    *a.at_mut(q, q) = tmp;
    for j in 0..p {
        a.data.swap(p + j * n, q + j * n);
    }
    for i in p + 1..q {
        a.data.swap(i + p * n, q + i * n);
    }
    for i in q + 1..n {
        a.data.swap(i + p * n, i + q * n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_dense(rows: &[&[f64]]) -> SymMatrix {
        let n = rows.len();
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                m.add(i, j, rows[i][j]);
            }
        }
        m
    }

    fn residual(rows: &[&[f64]], x: &[f64], b: &[f64]) -> f64 {
        rows.iter()
            .zip(b)
            .map(|(r, bi)| (r.iter().zip(x).map(|(a, xi)| a * xi).sum::<f64>() - bi).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn positive_definite_solve() {
        let rows: [&[f64]; 3] = [&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 2.0]];
        let f = Ldl::factor(from_dense(&rows), 1e-14);
        assert_eq!(
            f.inertia(),
            Inertia {
                positive: 3,
                negative: 0,
                zero: 0
            }
        );
        let b = [1.0, -2.0, 0.5];
        assert!(residual(&rows, &f.solve(&b), &b) < 1e-13);
    }

    #[test]
    fn saddle_point_needs_two_by_two_pivot() {
        // [[0, 1], [1, 0]] has eigenvalues ±1 and a zero diagonal.
        let rows: [&[f64]; 2] = [&[0.0, 1.0], &[1.0, 0.0]];
        let f = Ldl::factor(from_dense(&rows), 1e-14);
        assert_eq!(f.inertia().positive, 1);
        assert_eq!(f.inertia().negative, 1);
        let b = [3.0, -1.0];
        assert!(residual(&rows, &f.solve(&b), &b) < 1e-14);
    }

    #[test]
    fn kkt_inertia() {
        // H = diag(2, 2), A = [1 1]; KKT inertia is (2, 1, 0).
        let rows: [&[f64]; 3] = [&[2.0, 0.0, 1.0], &[0.0, 2.0, 1.0], &[1.0, 1.0, 0.0]];
        let f = Ldl::factor(from_dense(&rows), 1e-14);
        assert_eq!(
            f.inertia(),
            Inertia {
                positive: 2,
                negative: 1,
                zero: 0
            }
        );
        let b = [0.0, 0.0, 1.0];
        let x = f.solve(&b);
        assert!((x[0] - 0.5).abs() < 1e-14 && (x[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_reports_zero() {
        let rows: [&[f64]; 2] = [&[1.0, 1.0], &[1.0, 1.0]];
        let f = Ldl::factor(from_dense(&rows), 1e-12);
        assert_eq!(f.inertia().zero, 1);
        assert_eq!(f.inertia().positive, 1);
    }

    proptest::proptest! {
        #[test]
        fn random_symmetric_solves_and_inertia(
            n in 1usize..9,
            seed in proptest::collection::vec(-1.0f64..1.0, 81),
            diag in proptest::collection::vec(-3.0f64..3.0, 9),
        ) {
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..=i {
                    let v = seed[i * 9 + j];
                    dense[i][j] = v;
                    dense[j][i] = v;
                }
                dense[i][i] += diag[i];
            }
            let rows: Vec<&[f64]> = dense.iter().map(|r| r.as_slice()).collect();
            let f = Ldl::factor(from_dense(&rows), 1e-300);
            let b: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0).sin()).collect();
            let x = f.solve(&b);
            let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            proptest::prop_assert!(residual(&rows, &x, &b) < 1e-9 * scale);
            let inertia = f.inertia();
            let eig = jacobi_eigenvalues(&dense);
            if eig.iter().all(|e| e.abs() > 1e-8) {
                let neg = eig.iter().filter(|e| **e < 0.0).count();
                proptest::prop_assert_eq!(inertia.negative, neg);
                proptest::prop_assert_eq!(inertia.positive, n - neg);
            }
        }
    }

    fn jacobi_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
        let n = m.len();
        let mut a: Vec<Vec<f64>> = m.to_vec();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i]).collect()
    }
}
