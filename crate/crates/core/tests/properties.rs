use proptest::prelude::*;
use teamopt_core::basis::Basis;
use teamopt_core::girsanov::effective_sample_size;
use teamopt_core::model::ActionBox;
use teamopt_core::quadrature::{gauss_hermite, QuadratureGrid};

fn double_factorial_odd(k: u32) -> f64 {
    (1..=k).map(|i| (2 * i - 1) as f64).product()
}

fn binomial(n: usize, k: usize) -> usize {
    (1..=k).fold(1, |c, i| c * (n + 1 - i) / i)
}

#[test]
fn gauss_hermite_reproduces_normal_moments() {
    for order in 1..=12u32 {
        let (x, w) = gauss_hermite(order as usize);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        for deg in 0..2 * order {
            let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            let scale: f64 = x
                .iter()
                .zip(&w)
                .map(|(x, w)| w * x.abs().powi(deg as i32))
                .sum();
            let exact = if deg % 2 == 1 {
                0.0
            } else {
                double_factorial_odd(deg / 2)
            };
            assert!(
                (m - exact).abs() <= 1e-11 * scale.max(1.0),
                "order {order} degree {deg}: {m} vs {exact}"
            );
        }
    }
}

#[test]
fn tensor_rule_integrates_products() {
    let grid = QuadratureGrid::new(5, 3, 6).unwrap();
    assert_eq!(grid.len(), 125);
    // E[ξ₁² ξ₂⁴ (1 + ξ₃)] = 1 · 3 · 1
    let v = grid.integrate(|z| z[0] * z[0] * z[1].powi(4) * (1.0 + z[2]));
    assert!((v - 3.0).abs() < 1e-12);
    assert!(QuadratureGrid::new(5, 7, 6).is_err());
}

#[test]
fn ess_of_equal_weights_is_the_sample_size() {
    assert!((effective_sample_size(&[0.3; 40]) - 40.0).abs() < 1e-12);
    let mut logs = vec![-1e3; 10];
    logs[4] = 0.0;
    assert!((effective_sample_size(&logs) - 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn projection_is_feasible_idempotent_and_nonexpansive(
        half in prop::collection::vec(0.0f64..5.0, 1..4),
        a in prop::collection::vec(-20.0f64..20.0, 4),
        b in prop::collection::vec(-20.0f64..20.0, 4),
    ) {
        let d = half.len();
        let bx = ActionBox::new(half.iter().map(|h| -h).collect(), half.clone());
        let (mut pa, mut pb) = (a[..d].to_vec(), b[..d].to_vec());
        bx.project(&mut pa);
        bx.project(&mut pb);
        prop_assert!(bx.contains(&pa));
        let mut again = pa.clone();
        bx.project(&mut again);
        prop_assert_eq!(&again, &pa);
        let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        prop_assert!(dist(&pa, &pb) <= dist(&a[..d], &b[..d]) + 1e-12);
    }

    #[test]
    fn polynomial_basis_has_binomial_size(dim in 1usize..5, p in 0u32..4, z in prop::collection::vec(-3.0f64..3.0, 5)) {
        let basis = Basis::Polynomial(p);
        let feats = basis.expanded(&z[..dim]);
        prop_assert_eq!(basis.len(dim), binomial(dim + p as usize, p as usize));
        prop_assert_eq!(feats.len(), basis.len(dim));
        prop_assert_eq!(feats[0], 1.0);
        if p >= 1 {
            prop_assert_eq!(&feats[1..=dim], &z[..dim]);
        }
    }

    #[test]
    fn box_vertices_are_extreme_and_distinct(half in prop::collection::vec(0.1f64..5.0, 1..4)) {
        let bx = ActionBox::symmetric(half.len(), half[0]);
        let v = bx.vertices();
        prop_assert_eq!(v.len(), 1 << half.len());
        for u in &v {
            prop_assert!(u.iter().all(|c| c.abs() == half[0]));
        }
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                prop_assert_ne!(&v[i], &v[j]);
            }
        }
    }
}
