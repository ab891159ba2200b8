//! Small dense helpers over nalgebra. Matrices are row-major `&[f64]` at the
//! crate boundary.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::math::abs;

pub(crate) fn to_matrix(n: usize, m: usize, a: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, m, a)
}

/// LU factorization with partial pivoting of a small square matrix,
/// rejected when numerically singular.
pub(crate) struct SquareFactor {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl SquareFactor {
    pub(crate) fn new(n: usize, a: &[f64]) -> Option<Self> {
        if a.len() != n * n || a.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let scale = a.iter().fold(0.0f64, |s, v| s.max(abs(*v)));
        if scale == 0.0 {
            return None;
        }
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for c in 0..n {
            let pivot_row = (c..n)
                .max_by(|&i, &j| abs(lu[i * n + c]).total_cmp(&abs(lu[j * n + c])))
                .unwrap_or(c);
            if abs(lu[pivot_row * n + c]) <= 1e-13 * scale {
                return None;
            }
            if pivot_row != c {
                for j in 0..n {
                    lu.swap(c * n + j, pivot_row * n + j);
                }
                perm.swap(c, pivot_row);
            }
            let p = lu[c * n + c];
            for i in c + 1..n {
                let factor = lu[i * n + c] / p;
                lu[i * n + c] = factor;
                for j in c + 1..n {
                    lu[i * n + j] -= factor * lu[c * n + j];
                }
            }
        }
        Some(Self { n, lu, perm })
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[i * n + j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[i * n + j] * x[j];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }
}

/// Solves `a x = b`; `None` if `a` is singular.
#[cfg(test)]
pub(crate) fn solve(n: usize, a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    SquareFactor::new(n, a).map(|f| f.solve(b))
}

/// 2-norm condition number; infinite for singular input.
pub(crate) fn condition_number(n: usize, a: &[f64]) -> f64 {
    if a.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let sv = to_matrix(n, n, a).singular_values();
    let max = sv.iter().fold(0.0f64, |m, v| m.max(*v));
    let min = sv.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Lower Cholesky factor (row-major) of a symmetric positive definite matrix.
pub(crate) fn cholesky(n: usize, a: &[f64]) -> Option<Vec<f64>> {
    let m = to_matrix(n, n, a);
    let c = m.cholesky()?;
    let l = c.l();
    let mut out = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = l[(i, j)];
        }
    }
    Some(out)
}

/// `a aᵀ` for a square row-major matrix.
pub(crate) fn outer_self(n: usize, a: &[f64]) -> Vec<f64> {
    let mut out = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum();
        }
    }
    out
}

/// Forward substitution `l y = b` for lower-triangular row-major `l`.
pub(crate) fn forward_solve(n: usize, l: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i * n + j] * out[j];
        }
        out[i] = s / l[i * n + i];
    }
}

/// `y = a x` for row-major `a` with `rows × x.len()`.
pub(crate) fn mat_vec(a: &[f64], x: &[f64], y: &mut [f64]) {
    let m = x.len();
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = crate::math::dot(&a[i * m..(i + 1) * m], x);
    }
}

/// Solves the symmetric system `g x = rhs` (each column of `rhs` separately)
/// by Cholesky, adding a ridge `1e-8 · trace(g) / m` when `g` is not
/// numerically positive definite. Returns the solutions and the ridge used.
pub(crate) fn solve_normal_equations(
    m: usize,
    gram: &[f64],
    rhs: &[Vec<f64>],
) -> crate::Result<(Vec<Vec<f64>>, Option<f64>)> {
    if m == 0 {
        return Ok((rhs.iter().map(|_| Vec::new()).collect(), None));
    }
    let g = to_matrix(m, m, gram);
    let trace: f64 = (0..m).map(|i| gram[i * m + i]).sum();
    let diag_max = (0..m).fold(0.0f64, |d, i| d.max(gram[i * m + i]));
    let well_posed = g.clone().cholesky().filter(|c| {
        let l = c.l_dirty();
        let min = (0..m).fold(f64::INFINITY, |p, i| p.min(l[(i, i)] * l[(i, i)]));
        min > 1e-12 * diag_max
    });
    let (factor, ridge) = match well_posed {
        Some(c) => (c, None),
        None => {
            let lambda = 1e-8 * trace / m as f64;
            let lambda = if lambda > 0.0 { lambda } else { 1e-12 };
            let mut r = g;
            for i in 0..m {
                r[(i, i)] += lambda;
            }
            let c = r.cholesky().ok_or(crate::Error::RankDeficientRegression)?;
            (c, Some(lambda))
        }
    };
    let sols = rhs
        .iter()
        .map(|b| {
            let v = factor.solve(&DVector::from_column_slice(b));
            v.as_slice().to_vec()
        })
        .collect();
    Ok((sols, ridge))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_lower_triangular_two_by_two() {
        let x = solve(2, &[2.0, 0.0, 1.0, 1.0], &[2.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_rank_deficient() {
        assert!(solve(2, &[0.0, 0.0, 0.0, 1.0], &[1.0, 1.0]).is_none());
        assert!(solve(1, &[0.0], &[1.0]).is_none());
        assert!(condition_number(2, &[0.0, 0.0, 0.0, 1.0]).is_infinite());
    }

    #[test]
    fn ridge_kicks_in_on_duplicate_columns() {
        // two identical regressors
        let gram = [1.0, 1.0, 1.0, 1.0];
        let (sol, ridge) = solve_normal_equations(2, &gram, &[alloc::vec![2.0, 2.0]]).unwrap();
        assert!(ridge.is_some());
        assert!((sol[0][0] + sol[0][1] - 2.0).abs() < 1e-6);
    }
}
