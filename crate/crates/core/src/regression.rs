//! Least-squares estimates of conditional expectations `Ê[Y | z]`, the
//! workhorse behind every `E[· | information]` in the crate.

use alloc::vec;
use alloc::vec::Vec;

use crate::basis::Basis;
use crate::linalg;
use crate::math::sqrt;
use crate::par;
use crate::{Error, Result};

const CHUNK: usize = 2048;

/// A design matrix `X` (one row of regressors per sample) with its Gram
/// matrix `XᵀX`, reusable for several targets.
#[derive(Debug, Clone)]
pub struct Design {
    basis: Basis,
    input_dim: usize,
    width: usize,
    rows: Vec<f64>,
    gram: Vec<f64>,
}

impl Design {
    /// `features` holds one `input_dim`-vector per sample, concatenated.
    pub fn new(features: &[f64], input_dim: usize, basis: Basis) -> Result<Self> {
        let samples = if input_dim == 0 {
            return Err(Error::DimensionMismatch(
                "use Design::with_samples for empty feature vectors".into(),
            ));
        } else {
            features.len() / input_dim
        };
        Self::with_samples(features, input_dim, samples, basis)
    }

    /// As [`Design::new`], but with an explicit sample count so that empty
    /// feature vectors are allowed.
    pub fn with_samples(
        features: &[f64],
        input_dim: usize,
        samples: usize,
        basis: Basis,
    ) -> Result<Self> {
        if features.len() != samples * input_dim {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} feature values for {} samples of dimension {}",
                features.len(),
                samples,
                input_dim
            )));
        }
        let width = basis.len(input_dim);
        let chunks = samples.div_ceil(CHUNK);
        let parts = par::map_indexed(chunks, |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(samples);
            let mut rows = Vec::with_capacity((hi - lo) * width);
            let mut gram = vec![0.0; width * width];
            let mut buf = Vec::with_capacity(width);
            for s in lo..hi {
                basis.expand(&features[s * input_dim..(s + 1) * input_dim], &mut buf);
                for a in 0..width {
                    for b in a..width {
                        gram[a * width + b] += buf[a] * buf[b];
                    }
                }
                rows.extend_from_slice(&buf);
            }
            (rows, gram)
        });
        let mut rows = Vec::with_capacity(samples * width);
        let mut gram = vec![0.0; width * width];
        for (r, g) in parts {
            rows.extend(r);
            for (acc, v) in gram.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        for a in 0..width {
            for b in 0..a {
                gram[a * width + b] = gram[b * width + a];
            }
        }
        Ok(Self {
            basis,
            input_dim,
            width,
            rows,
            gram,
        })
    }

    pub fn num_samples(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.rows.len() / self.width
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.rows[s * self.width..(s + 1) * self.width]
    }

    /// `Xᵀ y` accumulated in fixed chunk order.
    fn cross(&self, values: &[f64]) -> Vec<f64> {
        let w = self.width;
        let samples = values.len();
        let parts = par::map_indexed(samples.div_ceil(CHUNK), |c| {
            let mut acc = vec![0.0; w];
            for s in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                let row = &self.rows[s * w..(s + 1) * w];
                for (a, r) in acc.iter_mut().zip(row) {
                    *a += r * values[s];
                }
            }
            acc
        });
        let mut out = vec![0.0; w];
        for part in parts {
            for (o, v) in out.iter_mut().zip(&part) {
                *o += v;
            }
        }
        out
    }

    pub fn fit(&self, values: &[f64]) -> Result<Regressor> {
        Ok(self.fit_many(&[values])?.pop().expect("one target"))
    }

    /// Fits each target on the shared design.
    pub fn fit_many(&self, targets: &[&[f64]]) -> Result<Vec<Regressor>> {
        let samples = if self.width == 0 {
            targets.first().map_or(0, |t| t.len())
        } else {
            self.num_samples()
        };
        if samples == 0 {
            return Err(Error::RankDeficientRegression);
        }
        for t in targets {
            if t.len() != samples {
                return Err(Error::DimensionMismatch(alloc::format!(
                    "{} targets for {} samples",
                    t.len(),
                    samples
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::RankDeficientRegression);
            }
        }
        let w = self.width;
        let rhs: Vec<Vec<f64>> = targets.iter().map(|t| self.cross(t)).collect();
        let (coefs, ridge) = linalg::solve_normal_equations(w, &self.gram, &rhs)?;
        let mut inv_diag = vec![0.0; w];
        if w > 0 {
            let units: Vec<Vec<f64>> = (0..w)
                .map(|i| {
                    let mut e = vec![0.0; w];
                    e[i] = 1.0;
                    e
                })
                .collect();
            let mut g = self.gram.clone();
            if let Some(l) = ridge {
                for i in 0..w {
                    g[i * w + i] += l;
                }
            }
            let (cols, _) = linalg::solve_normal_equations(w, &g, &units)?;
            for i in 0..w {
                inv_diag[i] = cols[i][i];
            }
        }
        Ok(targets
            .iter()
            .zip(coefs)
            .map(|(t, c)| {
                let fitted = self.fitted_values(&c, samples);
                let sse: f64 = t.iter().zip(&fitted).map(|(y, f)| (y - f) * (y - f)).sum();
                let dof = samples.saturating_sub(w).max(1);
                let residual_variance = sse / dof as f64;
                Regressor {
                    basis: self.basis,
                    input_dim: self.input_dim,
                    standard_errors: inv_diag
                        .iter()
                        .map(|d| sqrt((d * residual_variance).max(0.0)))
                        .collect(),
                    coefficients: c,
                    residual_variance,
                    ridge,
                    num_samples: samples,
                }
            })
            .collect())
    }

    fn fitted_values(&self, coefficients: &[f64], samples: usize) -> Vec<f64> {
        if self.width == 0 {
            return vec![0.0; samples];
        }
        (0..samples)
            .map(|s| crate::math::dot(self.row(s), coefficients))
            .collect()
    }

    /// In-sample predictions of a regressor fitted on this design.
    pub fn fitted(&self, reg: &Regressor) -> Vec<f64> {
        self.fitted_values(&reg.coefficients, self.num_samples())
    }
}

/// Fitted `Ê[Y | z] = βᵀ basis(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub basis: Basis,
    pub input_dim: usize,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub residual_variance: f64,
    /// Ridge added to the normal equations, if the design was degenerate.
    pub ridge: Option<f64>,
    pub num_samples: usize,
}

impl Regressor {
    pub fn predict(&self, z: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.coefficients.len());
        self.basis.expand(z, &mut buf);
        crate::math::dot(&buf, &self.coefficients)
    }

    pub fn predict_expanded(&self, regressors: &[f64]) -> f64 {
        crate::math::dot(regressors, &self.coefficients)
    }
}

/// One-shot `Ê[values | features]`.
pub fn cond_expectation(
    values: &[f64],
    features: &[f64],
    input_dim: usize,
    basis: Basis,
) -> Result<Regressor> {
    Design::with_samples(features, input_dim, values.len(), basis)?.fit(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{path_rng, standard_normal};

    #[test]
    fn exact_linear_fit() {
        let z: Vec<f64> = (0..50).map(|i| i as f64 * 0.1 - 2.0).collect();
        let y: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        let r = cond_expectation(&y, &z, 1, Basis::AFFINE).unwrap();
        assert!(r.coefficients[0].abs() < 1e-10);
        assert!((r.coefficients[1] - 2.0).abs() < 1e-10);
        assert!(r.ridge.is_none());
    }

    #[test]
    fn independent_values_give_the_mean() {
        let mut rng = path_rng(1, 0);
        let z: Vec<f64> = (0..4000).map(|_| standard_normal(&mut rng)).collect();
        let y: Vec<f64> = (0..4000).map(|_| 3.0 + standard_normal(&mut rng)).collect();
        let r = cond_expectation(&y, &z, 1, Basis::AFFINE).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((r.predict(&[0.0]) - mean).abs() < 4.0 * r.standard_errors[0] + 1e-3);
        assert!(r.coefficients[1].abs() < 4.0 * r.standard_errors[1]);
        let blind = cond_expectation(&y, &[], 0, Basis::Constant).unwrap();
        assert!((blind.coefficients[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn duplicate_regressor_uses_ridge() {
        let z: Vec<f64> = (0..20).flat_map(|i| [i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let r = cond_expectation(&y, &z, 2, Basis::Linear).unwrap();
        assert!(r.ridge.is_some());
        assert!((r.predict(&[3.0, 3.0]) - 3.0).abs() < 1e-6);
    }
}
