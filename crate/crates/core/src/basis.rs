//! Regressor expansions of feature or state vectors.

use alloc::vec::Vec;

use crate::math::tanh;

/// Maps an input vector `z ∈ ℝᵈ` to regressors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// `[1]`
    Constant,
    /// `[z₁, …, z_d]` (no intercept)
    Linear,
    /// All monomials of total degree `≤ p`, graded: `1, z₁…z_d, z₁², z₁z₂, …`.
    Polynomial(u32),
    /// `[tanh z₁, …, tanh z_d]`
    Tanh,
}

impl Basis {
    pub const AFFINE: Basis = Basis::Polynomial(1);
    pub const QUADRATIC: Basis = Basis::Polynomial(2);

    pub fn len(&self, dim: usize) -> usize {
        match *self {
            Basis::Constant => 1,
            Basis::Linear | Basis::Tanh => dim,
            Basis::Polynomial(p) => {
                // C(dim + p, p)
                let mut c: usize = 1;
                for i in 1..=p as usize {
                    c = c * (dim + i) / i;
                }
                c
            }
        }
    }

    pub fn expand(&self, z: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match *self {
            Basis::Constant => out.push(1.0),
            Basis::Linear => out.extend_from_slice(z),
            Basis::Tanh => out.extend(z.iter().map(|v| tanh(*v))),
            Basis::Polynomial(p) => {
                out.push(1.0);
                // monomials of degree d are products of the degree-(d-1) block
                // with z_j, j ≥ largest index already in the monomial
                let mut prev: Vec<(usize, usize)> = Vec::new(); // (position in out, last index)
                prev.push((0, 0));
                for _deg in 1..=p {
                    let mut next = Vec::new();
                    for &(pos, last) in &prev {
                        for (j, zj) in z.iter().enumerate().skip(last) {
                            let v = out[pos] * zj;
                            next.push((out.len(), j));
                            out.push(v);
                        }
                    }
                    prev = next;
                }
            }
        }
    }

    pub fn expanded(&self, z: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len(z.len()));
        self.expand(z, &mut out);
        out
    }

    /// Span of `self` contains the span of `other` for every input dimension.
    pub fn contains(&self, other: &Basis) -> bool {
        match (*self, *other) {
            (a, b) if a == b => true,
            (Basis::Polynomial(_), Basis::Constant) => true,
            (Basis::Polynomial(p), Basis::Linear) => p >= 1,
            (Basis::Polynomial(p), Basis::Polynomial(q)) => p >= q,
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_lengths_and_order() {
        assert_eq!(Basis::QUADRATIC.len(1), 3);
        assert_eq!(Basis::QUADRATIC.len(2), 6);
        assert_eq!(Basis::Polynomial(3).len(2), 10);
        assert_eq!(Basis::QUADRATIC.len(0), 1);
        let v = Basis::QUADRATIC.expanded(&[2.0, 3.0]);
        assert_eq!(v, alloc::vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        let v = Basis::Polynomial(3).expanded(&[2.0, 3.0]);
        assert_eq!(v.len(), 10);
        assert_eq!(&v[6..], &[8.0, 12.0, 18.0, 27.0]);
    }

    #[test]
    fn empty_features() {
        assert!(Basis::Linear.expanded(&[]).is_empty());
        assert_eq!(Basis::AFFINE.expanded(&[]), alloc::vec![1.0]);
    }
}
