//! Static reformulation of discrete-time teams.
//!
//! Under the reference measure `x(1), …, x(T)` are independent draws from
//! `λ_k = N(0, G(k-1) G(k-1)ᵀ)`, so every agent's information is a fixed
//! function of the noise and no longer depends on anybody's decisions. The
//! dynamics move entirely into the weight `Λ_{0,T}` and the pay-off becomes
//! `E[Λ_{0,T}·(Σ_k ℓ(k, x(k), u(k)) + φ(x(T)))]` under a product measure.
//! At small dimension that expectation is computed exactly (up to rule
//! order) by tensor Gauss–Hermite quadrature.

use alloc::vec;
use alloc::vec::Vec;

use crate::girsanov;
use crate::info::FeatureMap;
use crate::math::{exp, sqrt};
use crate::model::{DiscreteTeamSpec, GaussianStep, History};
use crate::paths::{self, Measure};
use crate::policy::{self, PolicyProfile, TeamPolicy};
use crate::quadrature::{QuadratureGrid, DEFAULT_DIMENSION_CAP};
use crate::stats::MeanSe;
use crate::{Error, Result};

/// A discrete-time team viewed as a static team under the reference
/// product measure.
#[derive(Debug, Clone)]
pub struct StaticTeamProblem {
    pub dspec: DiscreteTeamSpec,
    pub reference_densities: Vec<GaussianStep>,
    pub feature_map: FeatureMap,
}

/// One sampled trajectory with its weight and cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(T+1) × n`
    pub states: Vec<f64>,
    /// `T × d`
    pub controls: Vec<f64>,
    /// per agent, `(T+1) × kᵢ`
    pub observations: Vec<Vec<f64>>,
    pub log_weight: f64,
    /// `Σ ℓ + φ`
    pub cost: f64,
}

pub fn to_static(dspec: &DiscreteTeamSpec, fm: &FeatureMap) -> Result<StaticTeamProblem> {
    let reference_densities = dspec.validate()?;
    if fm.num_steps() != dspec.horizon_steps || fm.num_agents() != dspec.num_agents() {
        return Err(Error::DimensionMismatch(
            "feature map does not match the discrete problem".into(),
        ));
    }
    Ok(StaticTeamProblem {
        dspec: dspec.clone(),
        reference_densities,
        feature_map: fm.clone(),
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Law {
    /// `x(k+1) = w(k+1)`, weight accumulated.
    Reference,
    /// `x(k+1) = f + w(k+1)`, unit weight.
    Transition,
}

fn rollout(
    dspec: &DiscreteTeamSpec,
    densities: &[GaussianStep],
    fm: &FeatureMap,
    policy: &dyn TeamPolicy,
    xi: &[f64],
    law: Law,
) -> Trajectory {
    let n = dspec.state_dim;
    let d = dspec.total_action_dim();
    let steps = dspec.horizon_steps;
    let r0 = dspec.initial_law.random_dim();
    let mut states = vec![0.0; (steps + 1) * n];
    let mut controls = vec![0.0; steps * d];
    let mut observations: Vec<Vec<f64>> = dspec.observations.iter().map(|_| Vec::new()).collect();
    dspec.initial_law.transform(&xi[..r0], &mut states[..n]);
    let mut feats = Vec::new();
    let mut f = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut log_weight = 0.0;
    let mut cost = 0.0;
    let observe = |k: usize, states: &[f64], obs: &mut Vec<Vec<f64>>| {
        let h = History {
            step: k,
            time: k as f64,
            dim: n,
            states,
        };
        for (map, o) in dspec.observations.iter().zip(obs.iter_mut()) {
            let start = o.len();
            o.resize(start + map.dim(), 0.0);
            map.eval(&h, &mut o[start..]);
        }
    };
    for k in 0..steps {
        observe(k, &states[..(k + 1) * n], &mut observations);
        let views: Vec<&[f64]> = observations.iter().map(|o| o.as_slice()).collect();
        let u = &mut controls[k * d..(k + 1) * d];
        let mut start = 0;
        for (agent, &da) in dspec.action_dims.iter().enumerate() {
            fm.extract_into(&views, agent, k, &mut feats);
            let slot = &mut u[start..start + da];
            policy.act(agent, k, &feats, slot);
            dspec.action_boxes[agent].project(slot);
            start += da;
        }
        let (head, tail) = states.split_at_mut((k + 1) * n);
        let h = History {
            step: k,
            time: k as f64,
            dim: n,
            states: head,
        };
        (dspec.drift)(k, &h, u, &mut f);
        cost += (dspec.running_cost)(k, &head[k * n..], u);
        let off = r0 + k * n;
        densities[k].color(&xi[off..off + n], &mut w);
        let next = &mut tail[..n];
        match law {
            Law::Reference => {
                next.copy_from_slice(&w);
                let resid: Vec<f64> = w.iter().zip(&f).map(|(a, b)| a - b).collect();
                log_weight +=
                    0.5 * (densities[k].mahalanobis_sq(&w) - densities[k].mahalanobis_sq(&resid));
            }
            Law::Transition => {
                for i in 0..n {
                    next[i] = f[i] + w[i];
                }
            }
        }
    }
    observe(steps, &states, &mut observations);
    cost += (dspec.terminal_cost)(&states[steps * n..]);
    Trajectory {
        states,
        controls,
        observations,
        log_weight,
        cost,
    }
}

impl StaticTeamProblem {
    /// Number of Gaussian coordinates: random part of `x(0)` plus `T·n`.
    pub fn dims(&self) -> usize {
        self.dspec.initial_law.random_dim() + self.dspec.horizon_steps * self.dspec.state_dim
    }

    /// Trajectory generated by standard normal coordinates `xi` under the
    /// reference product measure.
    pub fn trajectory(&self, policy: &dyn TeamPolicy, xi: &[f64]) -> Trajectory {
        rollout(
            &self.dspec,
            &self.reference_densities,
            &self.feature_map,
            policy,
            xi,
            Law::Reference,
        )
    }

    /// `Λ_{0,T}` of a reference trajectory `states` with joint controls
    /// `controls`.
    pub fn weight_functional(&self, states: &[f64], controls: &[f64]) -> f64 {
        let n = self.dspec.state_dim;
        let d = self.dspec.total_action_dim();
        let mut f = vec![0.0; n];
        let mut log_w = 0.0;
        for k in 0..self.dspec.horizon_steps {
            let h = History {
                step: k,
                time: k as f64,
                dim: n,
                states: &states[..(k + 1) * n],
            };
            (self.dspec.drift)(k, &h, &controls[k * d..(k + 1) * d], &mut f);
            let next = &states[(k + 1) * n..(k + 2) * n];
            let resid: Vec<f64> = next.iter().zip(&f).map(|(a, b)| a - b).collect();
            let dens = &self.reference_densities[k];
            log_w += 0.5 * (dens.mahalanobis_sq(next) - dens.mahalanobis_sq(&resid));
        }
        exp(log_w)
    }

    /// `L = Λ_{0,T}·(Σℓ + φ)` at the node `xi`.
    pub fn integrand(&self, policy: &dyn TeamPolicy, xi: &[f64]) -> f64 {
        let t = self.trajectory(policy, xi);
        exp(t.log_weight) * t.cost
    }
}

/// Tensor Gauss–Hermite value of the static pay-off with the default
/// dimension cap.
pub fn quadrature_payoff(
    sp: &StaticTeamProblem,
    policy: &dyn TeamPolicy,
    order: usize,
) -> Result<f64> {
    quadrature_payoff_capped(sp, policy, order, DEFAULT_DIMENSION_CAP)
}

pub fn quadrature_payoff_capped(
    sp: &StaticTeamProblem,
    policy: &dyn TeamPolicy,
    order: usize,
    cap: usize,
) -> Result<f64> {
    policy::check_binding(policy, &sp.feature_map, sp.dspec.horizon_steps)?;
    let grid = QuadratureGrid::new(order, sp.dims(), cap)?;
    Ok(grid.integrate(|xi| sp.integrand(policy, xi)))
}

/// The dynamic pay-off integrated directly against the transition densities
/// `x(k+1) = f(k, ·, u(k)) + w(k+1)`, without any change of measure.
pub fn transition_quadrature_payoff(
    dspec: &DiscreteTeamSpec,
    policy: &dyn TeamPolicy,
    fm: &FeatureMap,
    order: usize,
    cap: usize,
) -> Result<f64> {
    let densities = dspec.validate()?;
    policy::check_binding(policy, fm, dspec.horizon_steps)?;
    let dims = dspec.initial_law.random_dim() + dspec.horizon_steps * dspec.state_dim;
    let grid = QuadratureGrid::new(order, dims, cap)?;
    Ok(grid.integrate(|xi| rollout(dspec, &densities, fm, policy, xi, Law::Transition).cost))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StaticMethod {
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticPayoff {
    pub value: f64,
    /// Zero for quadrature.
    pub se: f64,
    pub method: StaticMethod,
}

/// Quadrature when the dimension fits under `cap`, otherwise Λ-weighted
/// Monte Carlo under the reference measure.
pub fn static_payoff(
    sp: &StaticTeamProblem,
    policy: &dyn TeamPolicy,
    order: usize,
    cap: usize,
    mc_paths: usize,
    seed: u64,
) -> Result<StaticPayoff> {
    match quadrature_payoff_capped(sp, policy, order, cap) {
        Ok(value) => Ok(StaticPayoff {
            value,
            se: 0.0,
            method: StaticMethod::Quadrature,
        }),
        Err(Error::DimensionCapExceeded { .. }) => {
            let mut b = paths::simulate_discrete(
                &sp.dspec,
                policy,
                &sp.feature_map,
                mc_paths,
                seed,
                Measure::Reference,
            )?;
            girsanov::discrete_likelihood(&sp.dspec, &mut b, policy, &sp.feature_map)?;
            let est = girsanov::discrete_payoff_reference(&sp.dspec, &b)?;
            Ok(StaticPayoff {
                value: est.value,
                se: est.se,
                method: StaticMethod::MonteCarlo,
            })
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub agent: usize,
    /// Central-difference gradient of the quadrature pay-off in `θⁱ`.
    pub gradient: Vec<f64>,
    pub norm: f64,
}

/// `∂J/∂θⁱ` of the quadrature pay-off by central differences with step
/// `1e-5·(1 + |θ_j|)`.
pub fn static_stationarity(
    sp: &StaticTeamProblem,
    profile: &PolicyProfile,
    agent: usize,
    order: usize,
) -> Result<StationarityReport> {
    let base = profile.params(agent).to_vec();
    let mut probe = profile.clone();
    let mut gradient = Vec::with_capacity(base.len());
    for j in 0..base.len() {
        let h = 1e-5 * (1.0 + base[j].abs());
        let mut theta = base.clone();
        theta[j] = base[j] + h;
        probe.set_params(agent, &theta)?;
        let up = quadrature_payoff(sp, &probe, order)?;
        theta[j] = base[j] - h;
        probe.set_params(agent, &theta)?;
        let down = quadrature_payoff(sp, &probe, order)?;
        gradient.push((up - down) / (2.0 * h));
    }
    let norm = sqrt(gradient.iter().map(|g| g * g).sum());
    Ok(StationarityReport {
        agent,
        gradient,
        norm,
    })
}

/// Quadrature of the static problem against a direct Monte Carlo estimate
/// under the original measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticComparison {
    pub quadrature: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub gap: f64,
    /// `|gap| ≤ 3·SE`.
    pub pass: bool,
}

pub fn static_compare(
    sp: &StaticTeamProblem,
    policy: &dyn TeamPolicy,
    order: usize,
    mc_paths: usize,
    seed: u64,
) -> Result<StaticComparison> {
    let quadrature = quadrature_payoff(sp, policy, order)?;
    let b = paths::simulate_discrete(
        &sp.dspec,
        policy,
        &sp.feature_map,
        mc_paths,
        seed,
        Measure::Original,
    )?;
    let mc = girsanov::discrete_payoff_original(&sp.dspec, &b)?;
    let gap = quadrature - mc.value;
    Ok(StaticComparison {
        quadrature,
        mc_mean: mc.value,
        mc_se: mc.se,
        gap,
        pass: gap.abs() <= 3.0 * mc.se,
    })
}

/// Sample mean and SE of the static integrand at `num_samples` random
/// normal vectors; a quadrature-free check used in tests.
pub fn integrand_monte_carlo(
    sp: &StaticTeamProblem,
    policy: &dyn TeamPolicy,
    num_samples: usize,
    seed: u64,
) -> MeanSe {
    let dims = sp.dims();
    let values = crate::par::map_indexed(num_samples, |p| {
        let mut rng = crate::rng::path_rng(seed, p);
        let xi: Vec<f64> = (0..dims)
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        sp.integrand(policy, &xi)
    });
    MeanSe::of(&values)
}
