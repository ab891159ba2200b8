//! Gauss–Hermite rules for expectations against standard normal vectors.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, sqrt};
use crate::{Error, Result};

/// Default limit on the number of Gaussian dimensions integrated by tensor
/// quadrature.
pub const DEFAULT_DIMENSION_CAP: usize = 6;

/// Nodes and weights of the `order`-point rule for `E[g(ξ)]`, `ξ ~ N(0,1)`.
/// Weights are positive and sum to one; the rule is exact for polynomials
/// of degree `≤ 2·order − 1`.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let n = order;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    // physicists' rule by Newton iteration on the orthonormal recurrence
    let pim4 = 0.751_125_544_464_942_5;
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => sqrt(2.0 * nf + 1.0) - 1.85575 * libm::pow(2.0 * nf + 1.0, -0.16667),
            1 => z - 1.14 * libm::pow(nf, 0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * sqrt(2.0 / (jf + 1.0)) * p2 - sqrt(jf / (jf + 1.0)) * p3;
            }
            pp = sqrt(2.0 * nf) * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if abs(z - z1) <= 1e-15 * (1.0 + abs(z)) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let scale = sqrt(2.0);
    let nodes: Vec<f64> = x.iter().rev().map(|v| v * scale).collect();
    let total: f64 = w.iter().sum();
    let weights: Vec<f64> = w.iter().rev().map(|v| v / total).collect();
    (nodes, weights)
}

/// Tensor-product rule on `ℝ^dims` for a standard normal vector. Nodes are
/// enumerated in lexicographic order with the last coordinate fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub order: usize,
    pub dims: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(order: usize, dims: usize, cap: usize) -> Result<Self> {
        if dims > cap {
            return Err(Error::DimensionCapExceeded { dims, cap });
        }
        if order == 0 {
            return Err(Error::InvalidSpec(
                "quadrature order must be positive".into(),
            ));
        }
        let (nodes, weights) = gauss_hermite(order);
        Ok(Self {
            order,
            dims,
            nodes,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.order.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Writes node `index` into `out` and returns its weight.
    pub fn node(&self, index: usize, out: &mut [f64]) -> f64 {
        let mut rest = index;
        let mut w = 1.0;
        for d in (0..self.dims).rev() {
            let j = rest % self.order;
            rest /= self.order;
            out[d] = self.nodes[j];
            w *= self.weights[j];
        }
        w
    }

    /// `Σ_j w_j g(ξ_j)`, evaluated in parallel and summed in node order.
    pub fn integrate<F>(&self, g: F) -> f64
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        let values = crate::par::map_indexed(self.len(), |j| {
            let mut xi = vec![0.0; self.dims];
            let w = self.node(j, &mut xi);
            w * g(&xi)
        });
        values.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_rules() {
        let (x, w) = gauss_hermite(1);
        assert_eq!(x, vec![0.0]);
        assert_eq!(w, vec![1.0]);
        let (x, w) = gauss_hermite(2);
        assert!((x[1] - 1.0).abs() < 1e-14 && (x[0] + 1.0).abs() < 1e-14);
        assert!((w[0] - 0.5).abs() < 1e-14);
        let (x, w) = gauss_hermite(3);
        assert!((x[2] - 3f64.sqrt()).abs() < 1e-13);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn moments_are_exact_to_degree_2n_minus_1() {
        for &n in &[5usize, 12, 40] {
            let (x, w) = gauss_hermite(n);
            let mut double_factorial = 1.0;
            for k in 0..n {
                let m2: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(x, w)| w * x.powi(2 * k as i32))
                    .sum();
                assert!(
                    (m2 - double_factorial).abs() <= 1e-10 * double_factorial,
                    "n={n} k={k} {m2}"
                );
                let odd: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(x, w)| w * x.powi(2 * k as i32 + 1))
                    .sum();
                assert!(odd.abs() < 1e-9 * double_factorial.max(1.0));
                double_factorial *= (2 * k + 1) as f64;
            }
            assert!(w.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn tensor_grid() {
        let g = QuadratureGrid::new(4, 2, 6).unwrap();
        assert_eq!(g.len(), 16);
        let v = g.integrate(|xi| xi[0] * xi[0] * xi[1] * xi[1] + xi[0]);
        assert!((v - 1.0).abs() < 1e-13);
        assert!(matches!(
            QuadratureGrid::new(3, 7, 6),
            Err(Error::DimensionCapExceeded { dims: 7, cap: 6 })
        ));
    }
}
