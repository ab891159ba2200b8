//! `f64` transcendental functions that work without `std`.

pub(crate) use libm::{exp, fabs as abs, log as ln, sqrt, tanh};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}
