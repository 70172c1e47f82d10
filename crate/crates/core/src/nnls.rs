//! Lawson–Hanson nonnegative least squares.

use nalgebra::{DMatrix, DVector};

/// Minimizes `‖A x - b‖₂` subject to `x ≥ 0`. Returns `x` and the residual norm.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let (m, n) = a.shape();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 10.0 * f64::EPSILON * a.norm() * (m.max(n) as f64);
    let max_outer = 3 * n + 10;

    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate.filter(|&t| w[t] > tol) else {
            break;
        };
        passive[t] = true;

        loop {
            let s = solve_passive(a, b, &passive);
            let feasible = (0..n).filter(|&j| passive[j]).all(|j| s[j] > tol);
            if feasible {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for j in 0..n {
                if passive[j] && s[j] <= tol {
                    let denom = x[j] - s[j];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x += (s - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    let r = (b - a * &x).norm();
    (x, r)
}

/// Unconstrained least squares on the passive columns, zeros elsewhere.
fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let sub = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])]);
    let sol = sub
        .svd(true, true)
        .solve(b, 1e-14)
        .unwrap_or_else(|_| DVector::zeros(idx.len()));
    let mut out = DVector::zeros(passive.len());
    for (c, &j) in idx.iter().enumerate() {
        out[j] = sol[c];
    }
    out
}
