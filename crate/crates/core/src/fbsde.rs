//! Hamiltonians, the adjoint backward equation and the variational process.
//!
//! The adjoint pair `(Ψ, Q)` is computed by least-squares Monte Carlo: going
//! backwards from `Ψ_M = φ(x_M)`, the conditional expectation
//! `c_k = Ê[Ψ_{k+1} | x_k]` comes from a regression on a polynomial basis of
//! the state and `Q_k = Ê[(Ψ_{k+1} − c_k) ΔW_kᵀ | x_k] / Δ` from a second
//! regression on the same design. Under the original measure
//! `Ψ_k = c_k + ℓ_k Δ`; on a reference bundle the extra drift `Q_k b_k`
//! appears, `Ψ_k = c_k + (ℓ_k + Q_k b_k) Δ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::basis::Basis;
use crate::girsanov;
use crate::info::FeatureMap;
use crate::math::{dot, exp, norm, sqrt};
use crate::model::{ActionBox, ProblemSpec};
use crate::par;
use crate::paths::{Measure, PathBundle};
use crate::policy::TeamPolicy;
use crate::regression::Design;
use crate::{Error, Result};

/// `ℍ = ℓ(t, x, u) + Q·σ⁻¹(t, x) f(t, x, u)`.
pub fn hamiltonian(spec: &ProblemSpec, t: f64, x: &[f64], q: &[f64], u: &[f64]) -> Result<f64> {
    let b = crate::model::sigma_inv_drift(spec, t, x, u)?;
    Ok((spec.running_cost)(t, x, u) + dot(q, &b))
}

/// `𝓗 = Λ·ℓ + Λ·Q·σ⁻¹f`, the Hamiltonian of the system augmented by `Λ`.
/// It does not depend on `Ψ`, which is accepted for symmetry with the
/// adjoint pair.
pub fn hamiltonian_augmented(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    lambda: f64,
    _psi: f64,
    q: &[f64],
    u: &[f64],
) -> Result<f64> {
    let b = crate::model::sigma_inv_drift(spec, t, x, u)?;
    Ok(lambda * dot(q, &b) + lambda * (spec.running_cost)(t, x, u))
}

/// Solution `(Ψ, Q)` of the adjoint equation along a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointPath {
    pub num_paths: usize,
    pub num_steps: usize,
    pub state_dim: usize,
    /// `P × (M+1)`
    pub psi: Vec<f64>,
    /// `P × M × n`
    pub q: Vec<f64>,
    pub basis: Basis,
    /// RMS of `Ψ_{k+1} − Ê[Ψ_{k+1}|x_k] − Q_k ΔW_k` per step.
    pub residual_norms: Vec<f64>,
    /// Steps whose regression needed a ridge.
    pub ridge_steps: Vec<usize>,
    pub measure: Measure,
}

impl AdjointPath {
    pub fn psi(&self, p: usize, k: usize) -> f64 {
        self.psi[p * (self.num_steps + 1) + k]
    }

    pub fn q(&self, p: usize, k: usize) -> &[f64] {
        let n = self.state_dim;
        let off = (p * self.num_steps + k) * n;
        &self.q[off..off + n]
    }

    pub fn psi_column(&self, k: usize) -> Vec<f64> {
        (0..self.num_paths).map(|p| self.psi(p, k)).collect()
    }

    /// `Ê[Ψ_0]`.
    pub fn initial_value(&self) -> f64 {
        self.psi_column(0).iter().sum::<f64>() / self.num_paths as f64
    }
}

fn backward(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    dw: &[f64],
    ratios: Option<&[f64]>,
    basis: Basis,
) -> Result<AdjointPath> {
    let np = bundle.num_paths;
    let m = bundle.num_steps();
    let n = bundle.state_dim;
    let dt = bundle.grid.step();
    let mut psi = vec![0.0; np * (m + 1)];
    let mut q = vec![0.0; np * m * n];
    let mut residual_norms = vec![0.0; m];
    let mut ridge_steps = Vec::new();
    for p in 0..np {
        psi[p * (m + 1) + m] = (spec.terminal_cost)(bundle.state(p, m));
    }
    let mut states = vec![0.0; np * n];
    let mut next = vec![0.0; np];
    for k in (0..m).rev() {
        for p in 0..np {
            states[p * n..(p + 1) * n].copy_from_slice(bundle.state(p, k));
            next[p] = psi[p * (m + 1) + k + 1];
        }
        let design = Design::with_samples(&states, n, np, basis)?;
        let cond = design.fit(&next)?;
        let fitted = design.fitted(&cond);
        let mut targets = vec![vec![0.0; np]; n];
        for p in 0..np {
            let inc = &dw[(p * m + k) * n..(p * m + k + 1) * n];
            for j in 0..n {
                targets[j][p] = (next[p] - fitted[p]) * inc[j] / dt;
            }
        }
        let views: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
        let q_regs = design.fit_many(&views)?;
        if cond.ridge.is_some() {
            ridge_steps.push(k);
        }
        let q_fitted: Vec<Vec<f64>> = q_regs.iter().map(|r| design.fitted(r)).collect();
        let mut sq_resid = 0.0;
        for p in 0..np {
            let inc = &dw[(p * m + k) * n..(p * m + k + 1) * n];
            let mut qdw = 0.0;
            let mut qb = 0.0;
            for j in 0..n {
                let qj = q_fitted[j][p];
                q[(p * m + k) * n + j] = qj;
                qdw += qj * inc[j];
                if let Some(b) = ratios {
                    qb += qj * b[(p * m + k) * n + j];
                }
            }
            let l = (spec.running_cost)(
                bundle.grid.time(k),
                bundle.state(p, k),
                bundle.control(p, k),
            );
            let value = fitted[p] + (l + qb) * dt;
            if !value.is_finite() {
                return Err(Error::NonConvergentFixedPoint { step: k });
            }
            psi[p * (m + 1) + k] = value;
            let e = next[p] - fitted[p] - qdw;
            sq_resid += e * e;
        }
        residual_norms[k] = sqrt(sq_resid / np as f64);
    }
    ridge_steps.reverse();
    Ok(AdjointPath {
        num_paths: np,
        num_steps: m,
        state_dim: n,
        psi,
        q,
        basis,
        residual_norms,
        ridge_steps,
        measure: bundle.measure,
    })
}

/// Adjoint pair along a controlled bundle, `dΨ = −ℓ dt + Q dW^u`.
pub fn solve_bsde(spec: &ProblemSpec, bundle: &PathBundle, basis: Basis) -> Result<AdjointPath> {
    if bundle.measure != Measure::Original {
        return Err(Error::WrongMeasure {
            expected: "original",
        });
    }
    backward(spec, bundle, &bundle.noise, None, basis)
}

/// Adjoint pair along a reference bundle whose controls were filled by
/// [`girsanov::accumulate_likelihood`], `dΨ = −(ℓ + Q σ⁻¹f) dt + Q dW`.
/// `Q_k` comes from the same step's regression, so a single sweep per step
/// settles the implicit dependence of the drift on `Q_k`.
pub fn solve_bsde_reference(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    basis: Basis,
) -> Result<AdjointPath> {
    if bundle.measure != Measure::Reference {
        return Err(Error::WrongMeasure {
            expected: "reference",
        });
    }
    let b = girsanov::drift_ratios(spec, bundle, &bundle.controls)?;
    backward(spec, bundle, &bundle.noise, Some(&b), basis)
}

/// `∂/∂ε σ⁻¹ f(t, x, u + ε du)` at `ε = 0`: analytic when the problem has
/// a drift Jacobian, otherwise a central difference with step
/// `1e-5·(1 + |u|)/|du|`.
pub fn drift_ratio_derivative(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    u: &[f64],
    du: &[f64],
) -> Result<Vec<f64>> {
    let n = spec.state_dim;
    let scale = norm(du);
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let df = if let Some(jac) = &spec.drift_jacobian {
        let d = u.len();
        let mut j = vec![0.0; n * d];
        jac(t, x, u, &mut j);
        let mut out = vec![0.0; n];
        crate::linalg::mat_vec(&j, du, &mut out);
        out
    } else {
        let h = 1e-5 * (1.0 + norm(u)) / scale;
        let up: Vec<f64> = u.iter().zip(du).map(|(a, b)| a + h * b).collect();
        let down: Vec<f64> = u.iter().zip(du).map(|(a, b)| a - h * b).collect();
        let fu = spec.drift_at(t, x, &up);
        let fd = spec.drift_at(t, x, &down);
        fu.iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect()
    };
    Ok(spec.diffusion_factor(t, x)?.solve(&df))
}

/// Joint actions of `policy` along a bundle, optionally projected.
pub(crate) fn replay_actions(
    bundle: &PathBundle,
    policy: &dyn TeamPolicy,
    fm: &FeatureMap,
    dims: &[usize],
    boxes: Option<&[ActionBox]>,
) -> Vec<f64> {
    let m = bundle.num_steps();
    let d: usize = dims.iter().sum();
    par::map_indexed(bundle.num_paths, |p| {
        let views = bundle.obs_views(p);
        let mut feats = Vec::new();
        let mut out = vec![0.0; m * d];
        for k in 0..m {
            let mut start = k * d;
            for (agent, &da) in dims.iter().enumerate() {
                fm.extract_into(&views, agent, k, &mut feats);
                let slot = &mut out[start..start + da];
                policy.act(agent, k, &feats, slot);
                if let Some(b) = boxes {
                    b[agent].project(slot);
                }
                start += da;
            }
        }
        out
    })
    .concat()
}

/// Directional derivative `Z` of `Λ` along a policy perturbation, with the
/// finite-difference companion `Λ^ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPath {
    pub num_paths: usize,
    pub num_steps: usize,
    /// `P × (M+1)`, `Z(0) = 0`.
    pub z: Vec<f64>,
    /// `log Λ°`, `P × (M+1)`.
    pub log_likelihood_base: Vec<f64>,
    /// `log Λ^ε` for `u^ε = proj(u° + ε·direction)`, `P × (M+1)`.
    pub log_likelihood_eps: Vec<f64>,
    pub epsilon_used: f64,
}

impl VariationalPath {
    pub fn z(&self, p: usize, k: usize) -> f64 {
        self.z[p * (self.num_steps + 1) + k]
    }

    /// `(Λ^ε(t_k) − Λ°(t_k)) / ε` per path.
    pub fn finite_difference(&self, k: usize) -> Vec<f64> {
        let w = self.num_steps + 1;
        (0..self.num_paths)
            .map(|p| {
                let a = exp(self.log_likelihood_eps[p * w + k]);
                let b = exp(self.log_likelihood_base[p * w + k]);
                (a - b) / self.epsilon_used
            })
            .collect()
    }

    pub fn terminal(&self) -> Vec<f64> {
        (0..self.num_paths)
            .map(|p| self.z(p, self.num_steps))
            .collect()
    }
}

/// Simulates `Z` on a reference bundle for the base policy `base` and the
/// (unprojected) perturbation direction `direction`. The recursion is the
/// exact derivative of the discretized log-likelihood,
/// `Z_{k+1} = E_k Z_k + Λ_{k+1} (ΔW_k − b_k Δ)·δb_k` with
/// `E_k = exp(b_k·ΔW_k − ½|b_k|²Δ)` and `δb_k` the derivative of `σ⁻¹f`
/// along the direction.
pub fn simulate_variational(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    base: &dyn TeamPolicy,
    direction: &dyn TeamPolicy,
    fm: &FeatureMap,
    epsilon: f64,
) -> Result<VariationalPath> {
    if bundle.measure != Measure::Reference {
        return Err(Error::WrongMeasure {
            expected: "reference",
        });
    }
    crate::policy::check_binding(base, fm, bundle.num_steps())?;
    crate::policy::check_binding(direction, fm, bundle.num_steps())?;
    let np = bundle.num_paths;
    let m = bundle.num_steps();
    let n = bundle.state_dim;
    let d = bundle.action_dim;
    let dt = bundle.grid.step();
    let u0 = replay_actions(
        bundle,
        base,
        fm,
        &spec.action_dims,
        Some(&spec.action_boxes),
    );
    let du = replay_actions(bundle, direction, fm, &spec.action_dims, None);
    let mut ueps: Vec<f64> = u0.iter().zip(&du).map(|(a, b)| a + epsilon * b).collect();
    for row in ueps.chunks_mut(d) {
        spec.project_actions(row);
    }
    let dw = girsanov::whitened_increments(spec, bundle)?;
    let b0 = girsanov::drift_ratios(spec, bundle, &u0)?;
    let log_base = girsanov::log_likelihood_from_ratios(bundle, &b0, &dw);
    let beps = girsanov::drift_ratios(spec, bundle, &ueps)?;
    let log_eps = girsanov::log_likelihood_from_ratios(bundle, &beps, &dw);
    let rows = par::try_map_indexed(np, |p| {
        let mut z = vec![0.0; m + 1];
        for k in 0..m {
            let off = (p * m + k) * n;
            let uoff = (p * m + k) * d;
            let t = bundle.grid.time(k);
            let x = bundle.state(p, k);
            let db = drift_ratio_derivative(spec, t, x, &u0[uoff..uoff + d], &du[uoff..uoff + d])?;
            let b = &b0[off..off + n];
            let w = &dw[off..off + n];
            let e = exp(dot(b, w) - 0.5 * dot(b, b) * dt);
            let lam_next = exp(log_base[p * (m + 1) + k + 1]);
            let mut drive = 0.0;
            for j in 0..n {
                drive += (w[j] - b[j] * dt) * db[j];
            }
            z[k + 1] = e * z[k] + lam_next * drive;
        }
        Ok(z)
    })?;
    Ok(VariationalPath {
        num_paths: np,
        num_steps: m,
        z: rows.concat(),
        log_likelihood_base: log_base,
        log_likelihood_eps: log_eps,
        epsilon_used: epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::{compile, InformationStructure};
    use crate::model::{ObservationMap, TimeGrid};
    use crate::paths::{simulate_controlled, simulate_reference};
    use crate::policy::FnPolicy;

    fn scalar(drift: bool) -> crate::model::ProblemBuilder {
        let b = ProblemSpec::builder(1, 1.0)
            .agent(ActionBox::symmetric(1, 1.0), ObservationMap::full_state(1));
        if drift {
            b.drift(|_, _, u, out| out[0] = u[0])
        } else {
            b
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let spec = scalar(true)
            .running_cost(|_, _, u| u[0] * u[0])
            .build()
            .unwrap();
        let q = 0.8;
        let h = |u: f64| hamiltonian(&spec, 0.0, &[0.0], &[q], &[u]).unwrap();
        assert!((h(0.3) - (0.09 + 0.24)).abs() < 1e-15);
        // minimizer over [-1, 1] is clamp(-q/2)
        let best = (-100..=100)
            .map(|i| i as f64 / 100.0)
            .min_by(|a, b| h(*a).total_cmp(&h(*b)))
            .unwrap();
        assert!((best - (-q / 2.0)).abs() < 1e-12);
        assert_eq!(
            hamiltonian(&spec, 0.0, &[1.0], &[0.0], &[0.5]).unwrap(),
            0.25
        );
        let no_drift = scalar(false).running_cost(|_, x, _| x[0]).build().unwrap();
        assert_eq!(
            hamiltonian(&no_drift, 0.0, &[2.0], &[7.0], &[0.5]).unwrap(),
            2.0
        );
    }

    #[test]
    fn augmented_factorizes() {
        let spec = scalar(true)
            .running_cost(|_, x, u| x[0] * u[0] + 1.0)
            .build()
            .unwrap();
        let h = hamiltonian(&spec, 0.1, &[0.3], &[1.5], &[0.2]).unwrap();
        let a = hamiltonian_augmented(&spec, 0.1, &[0.3], 2.0, 0.0, &[1.5], &[0.2]).unwrap();
        assert!((a - 2.0 * h).abs() < 1e-12);
        let one = hamiltonian_augmented(&spec, 0.1, &[0.3], 1.0, 0.0, &[1.5], &[0.2]).unwrap();
        assert_eq!(one, h);
    }

    fn markov(grid: &TimeGrid) -> FeatureMap {
        compile(&InformationStructure::all_markov(1), grid, &[1]).unwrap()
    }

    #[test]
    fn constant_terminal_cost_gives_constant_adjoint() {
        let spec = scalar(true).terminal_cost(|_| 2.5).build().unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let pol = FnPolicy::new(vec![1], |_, _, z, out| out[0] = -z[0]);
        let b = simulate_controlled(&spec, &pol, &markov(&grid), &grid, 500, 1).unwrap();
        let adj = solve_bsde(&spec, &b, Basis::QUADRATIC).unwrap();
        // x(0) is a point mass, so step 0 regresses on a degenerate design
        // and carries the relative ridge bias
        assert!(adj.psi.iter().all(|v| (v - 2.5).abs() < 1e-7));
        assert!(adj.q.iter().all(|v| v.abs() < 1e-7));
        let mut r = simulate_reference(&spec, &grid, 500, 1).unwrap();
        girsanov::accumulate_likelihood(&spec, &mut r, &pol, &markov(&grid)).unwrap();
        let adj = solve_bsde_reference(&spec, &r, Basis::QUADRATIC).unwrap();
        assert!(adj.psi.iter().all(|v| (v - 2.5).abs() < 1e-7));
    }

    #[test]
    fn unit_running_cost_counts_remaining_time() {
        let spec = scalar(false).running_cost(|_, _, _| 1.0).build().unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let pol = FnPolicy::zero(vec![1]);
        let b = simulate_controlled(&spec, &pol, &markov(&grid), &grid, 400, 2).unwrap();
        let adj = solve_bsde(&spec, &b, Basis::QUADRATIC).unwrap();
        for k in 0..=10 {
            let expect = (10 - k) as f64 * 0.1;
            assert!((adj.psi(7, k) - expect).abs() < 1e-7);
        }
        assert!(adj.q.iter().all(|v| v.abs() < 1e-7));
    }

    #[test]
    fn zero_drift_reference_solver_matches_original_solver() {
        let spec = scalar(true)
            .drift(|_, _, _, out| out[0] = 0.0)
            .running_cost(|_, x, u| x[0] * x[0] + u[0])
            .terminal_cost(|x| x[0].abs())
            .build()
            .unwrap();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let fm = markov(&grid);
        let pol = FnPolicy::new(vec![1], |_, _, z, out| out[0] = 0.5 * z[0]);
        let o = simulate_controlled(&spec, &pol, &fm, &grid, 300, 4).unwrap();
        let mut r = simulate_reference(&spec, &grid, 300, 4).unwrap();
        girsanov::accumulate_likelihood(&spec, &mut r, &pol, &fm).unwrap();
        let a = solve_bsde(&spec, &o, Basis::QUADRATIC).unwrap();
        let b = solve_bsde_reference(&spec, &r, Basis::QUADRATIC).unwrap();
        assert_eq!(a.psi, b.psi);
        assert_eq!(a.q, b.q);
    }

    #[test]
    fn variational_process_for_control_drift() {
        let spec = scalar(true).build().unwrap();
        let grid = TimeGrid::new(1.0, 12).unwrap();
        let fm = markov(&grid);
        let r = simulate_reference(&spec, &grid, 50, 3).unwrap();
        let zero = FnPolicy::zero(vec![1]);
        let dir = FnPolicy::new(vec![1], |_, _, z, out| out[0] = z[0].sin());
        let v = simulate_variational(&spec, &r, &zero, &dir, &fm, 1e-3).unwrap();
        for p in 0..50 {
            let mut acc = 0.0;
            for k in 0..12 {
                acc += r.state(p, k)[0].sin() * r.noise(p, k)[0];
            }
            assert!((v.z(p, 12) - acc).abs() < 1e-8, "{} vs {acc}", v.z(p, 12));
            assert_eq!(v.z(p, 0), 0.0);
        }
        let none = simulate_variational(&spec, &r, &zero, &zero, &fm, 1e-3).unwrap();
        assert!(none.z.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn variational_process_is_linear_in_the_direction() {
        let spec = scalar(true)
            .drift(|_, x, u, out| out[0] = u[0] * x[0].cos() + 0.2 * u[0] * u[0])
            .build()
            .unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let fm = markov(&grid);
        let r = simulate_reference(&spec, &grid, 40, 5).unwrap();
        let base = FnPolicy::new(vec![1], |_, _, z, out| out[0] = 0.3 * z[0].tanh());
        let v1 = FnPolicy::new(vec![1], |_, _, z, out| out[0] = 1.0 - z[0]);
        let v2 = FnPolicy::new(vec![1], |_, _, z, out| out[0] = 2.0 * (1.0 - z[0]));
        let a = simulate_variational(&spec, &r, &base, &v1, &fm, 1e-3).unwrap();
        let b = simulate_variational(&spec, &r, &base, &v2, &fm, 1e-3).unwrap();
        for (x, y) in a.z.iter().zip(&b.z) {
            assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
}
