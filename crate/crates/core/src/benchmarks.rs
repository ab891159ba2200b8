//! Built-in test problems with independently known answers.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::basis::Basis;
use crate::info::{AgentInformation, InformationStructure};
use crate::math::{sqrt, tanh};
use crate::model::{ActionBox, DiscreteTeamSpec, InitialLaw, ObservationMap, ProblemSpec};
use crate::policy::{AgentPolicySpec, Segmentation};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkInfo {
    pub name: &'static str,
    pub description: &'static str,
    /// How the reference answer is obtained.
    pub oracle: &'static str,
}

const CATALOG: &[BenchmarkInfo] = &[
    BenchmarkInfo {
        name: "lq-scalar",
        description: "scalar linear-quadratic regulator dx = u dt + dW, cost x² + u², terminal x²",
        oracle: "riccati",
    },
    BenchmarkInfo {
        name: "one-step-gaussian",
        description: "one-step discrete team x(1) = u(0) + w, terminal cost x²",
        oracle: "gaussian-moments",
    },
    BenchmarkInfo {
        name: "toy3-two-step",
        description: "two-step scalar discrete team with affine drift and polynomial costs",
        oracle: "transition-quadrature",
    },
    BenchmarkInfo {
        name: "radner-quadratic",
        description: "two agents observing correlated Gaussian signals, quadratic team cost",
        oracle: "normal-equations",
    },
    BenchmarkInfo {
        name: "delayed-sharing-lq",
        description: "two coupled scalar LQ agents sharing observations with a delay",
        oracle: "decoupled-riccati",
    },
];

pub fn list_benchmarks() -> &'static [BenchmarkInfo] {
    CATALOG
}

/// Scalar LQ regulator: `dx = u dt + σ dW` on `[0, T]`, running cost
/// `q x² + r u²`, terminal cost `s x²`, `u ∈ [−bound, bound]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqScalar {
    pub horizon: f64,
    pub x0: f64,
    pub sigma: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub bound: f64,
}

impl Default for LqScalar {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            x0: 0.0,
            sigma: 1.0,
            q: 1.0,
            r: 1.0,
            s: 1.0,
            bound: 5.0,
        }
    }
}

pub fn lq_scalar(p: &LqScalar) -> Result<ProblemSpec> {
    let (q, r, s) = (p.q, p.r, p.s);
    ProblemSpec::builder(1, p.horizon)
        .agent(
            ActionBox::symmetric(1, p.bound),
            ObservationMap::full_state(1),
        )
        .drift(|_, _, u, out| out[0] = u[0])
        .drift_jacobian(|_, _, _, out| out[0] = 1.0)
        .constant_diffusion(vec![p.sigma])
        .running_cost(move |_, x, u| q * x[0] * x[0] + r * u[0] * u[0])
        .terminal_cost(move |x| s * x[0] * x[0])
        .initial_law(InitialLaw::Point(vec![p.x0]))
        .build()
}

/// Affine state feedback `u = θ₀ + θ₁ x` on the scalar LQ problem.
pub fn lq_policy_spec(bound: f64, segmentation: Segmentation) -> Vec<AgentPolicySpec> {
    vec![AgentPolicySpec {
        basis: Basis::AFFINE,
        segmentation,
        action_box: ActionBox::symmetric(1, bound),
    }]
}

/// `u = gain·tanh(x)`, the smooth bounded drift used for martingale checks.
pub fn tanh_policy_spec(bound: f64) -> Vec<AgentPolicySpec> {
    vec![AgentPolicySpec {
        basis: Basis::Tanh,
        segmentation: Segmentation::Stationary,
        action_box: ActionBox::symmetric(1, bound),
    }]
}

/// `u = gain·tanh(x)` evaluated directly.
pub fn tanh_feedback(gain: f64, x: f64) -> f64 {
    gain * tanh(x)
}

/// Two agents facing `(u₁ + u₂ − x₁ − x₂)² + r₁u₁² + r₂u₂²` where
/// `x ~ N(0, S)` and agent `i` observes `xᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadnerQuadratic {
    pub s11: f64,
    pub s12: f64,
    pub s22: f64,
    pub r1: f64,
    pub r2: f64,
    pub bound: f64,
}

impl Default for RadnerQuadratic {
    fn default() -> Self {
        Self {
            s11: 1.0,
            s12: 0.5,
            s22: 2.0,
            r1: 0.5,
            r2: 1.0,
            bound: 50.0,
        }
    }
}

impl RadnerQuadratic {
    /// Lower Cholesky factor of `S`, row-major.
    pub fn factor(&self) -> Result<Vec<f64>> {
        let l11 = sqrt(self.s11);
        let l21 = self.s12 / l11;
        let d = self.s22 - l21 * l21;
        if !(self.s11 > 0.0) || !(d > 0.0) {
            return Err(Error::NonPDCovariance { step: 0 });
        }
        Ok(vec![l11, 0.0, l21, sqrt(d)])
    }

    fn cost(&self) -> impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static {
        let (r1, r2) = (self.r1, self.r2);
        move |x, u| {
            let e = u[0] + u[1] - x[0] - x[1];
            e * e + r1 * u[0] * u[0] + r2 * u[1] * u[1]
        }
    }
}

/// Continuous-time embedding on one unit step: `x` frozen at its initial
/// value for the decision, no drift, no terminal cost, so `J = E[ℓ(x(0), u)]`.
pub fn radner_quadratic(p: &RadnerQuadratic) -> Result<ProblemSpec> {
    let cost = p.cost();
    ProblemSpec::builder(2, 1.0)
        .agent(
            ActionBox::symmetric(1, p.bound),
            ObservationMap::projected(vec![0]),
        )
        .agent(
            ActionBox::symmetric(1, p.bound),
            ObservationMap::projected(vec![1]),
        )
        .running_cost(move |_, x, u| cost(x, u))
        .initial_law(InitialLaw::Gaussian {
            mean: vec![0.0, 0.0],
            factor: p.factor()?,
        })
        .build()
}

/// The same team as a one-step discrete problem (for quadrature).
pub fn radner_discrete(p: &RadnerQuadratic) -> Result<DiscreteTeamSpec> {
    let cost = p.cost();
    Ok(DiscreteTeamSpec {
        state_dim: 2,
        action_dims: vec![1, 1],
        action_boxes: vec![
            ActionBox::symmetric(1, p.bound),
            ActionBox::symmetric(1, p.bound),
        ],
        horizon_steps: 1,
        drift: Arc::new(|_, _, _, out: &mut [f64]| out.iter_mut().for_each(|o| *o = 0.0)),
        noise_factors: vec![vec![1.0, 0.0, 0.0, 1.0]],
        observations: vec![
            ObservationMap::projected(vec![0]),
            ObservationMap::projected(vec![1]),
        ],
        running_cost: Arc::new(move |_, x, u| cost(x, u)),
        terminal_cost: Arc::new(|_| 0.0),
        initial_law: InitialLaw::Gaussian {
            mean: vec![0.0, 0.0],
            factor: p.factor()?,
        },
    })
}

/// Linear rules `uᵢ = aᵢ xᵢ` without intercept.
pub fn radner_policy_spec(p: &RadnerQuadratic) -> Vec<AgentPolicySpec> {
    (0..2)
        .map(|_| AgentPolicySpec {
            basis: Basis::Linear,
            segmentation: Segmentation::Stationary,
            action_box: ActionBox::symmetric(1, p.bound),
        })
        .collect()
}

/// One-step scalar team `x(1) = u(0) + w`, `w ~ N(0, 1)`, terminal cost
/// `x(1)²`, `x(0) = x0`.
pub fn one_step_gaussian(x0: f64, bound: f64) -> DiscreteTeamSpec {
    DiscreteTeamSpec {
        state_dim: 1,
        action_dims: vec![1],
        action_boxes: vec![ActionBox::symmetric(1, bound)],
        horizon_steps: 1,
        drift: Arc::new(|_, _, u, out: &mut [f64]| out[0] = u[0]),
        noise_factors: vec![vec![1.0]],
        observations: vec![ObservationMap::full_state(1)],
        running_cost: Arc::new(|_, _, _| 0.0),
        terminal_cost: Arc::new(|x| x[0] * x[0]),
        initial_law: InitialLaw::Point(vec![x0]),
    }
}

/// Two-step scalar team with `x(0) ~ N(0.2, 0.5²)`,
/// `x(1) = 0.5 x(0) + u(0) + w(1)`, `x(2) = 0.3 x(0) + 0.6 x(1) + u(1) + w(2)`,
/// running cost `x² + 0.5 u²` and terminal cost `x² + 0.1 x³`.
pub fn toy3_two_step(bound: f64) -> DiscreteTeamSpec {
    DiscreteTeamSpec {
        state_dim: 1,
        action_dims: vec![1],
        action_boxes: vec![ActionBox::symmetric(1, bound)],
        horizon_steps: 2,
        drift: Arc::new(|k, h, u, out: &mut [f64]| {
            out[0] = if k == 0 {
                0.5 * h.at(0)[0] + u[0]
            } else {
                0.3 * h.at(0)[0] + 0.6 * h.at(1)[0] + u[0]
            };
        }),
        noise_factors: vec![vec![1.0], vec![1.0]],
        observations: vec![ObservationMap::full_state(1)],
        running_cost: Arc::new(|_, x, u| x[0] * x[0] + 0.5 * u[0] * u[0]),
        terminal_cost: Arc::new(|x| x[0] * x[0] + 0.1 * x[0] * x[0] * x[0]),
        initial_law: InitialLaw::Gaussian {
            mean: vec![0.2],
            factor: vec![0.5],
        },
    }
}

/// Two scalar LQ subsystems `dxᵢ = uᵢ dt + dWᵢ` with running cost
/// `x₁² + x₂² + 2ρ x₁x₂ + u₁² + u₂²` and terminal cost `x₁² + x₂²`. Agent
/// `i` observes `xᵢ` and receives the other agent's observation after
/// `delay`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedSharingLq {
    pub horizon: f64,
    pub coupling: f64,
    pub delay: f64,
    pub bound: f64,
}

impl Default for DelayedSharingLq {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            coupling: 0.3,
            delay: 0.1,
            bound: 5.0,
        }
    }
}

pub fn delayed_sharing_lq(p: &DelayedSharingLq) -> Result<(ProblemSpec, InformationStructure)> {
    let rho = p.coupling;
    let spec = ProblemSpec::builder(2, p.horizon)
        .agent(
            ActionBox::symmetric(1, p.bound),
            ObservationMap::projected(vec![0]),
        )
        .agent(
            ActionBox::symmetric(1, p.bound),
            ObservationMap::projected(vec![1]),
        )
        .drift(|_, _, u, out| {
            out[0] = u[0];
            out[1] = u[1];
        })
        .drift_jacobian(|_, _, _, out| {
            out.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        })
        .running_cost(move |_, x, u| {
            x[0] * x[0] + x[1] * x[1] + 2.0 * rho * x[0] * x[1] + u[0] * u[0] + u[1] * u[1]
        })
        .terminal_cost(|x| x[0] * x[0] + x[1] * x[1])
        .build()?;
    let info = InformationStructure::new(vec![
        AgentInformation::markov().with_signal(1, p.delay),
        AgentInformation::markov().with_signal(0, p.delay),
    ]);
    Ok((spec, info))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_entries() {
        let c = list_benchmarks();
        assert!(!c.is_empty());
        assert!(c
            .iter()
            .any(|b| b.name == "lq-scalar" && b.oracle == "riccati"));
        assert!(c
            .iter()
            .any(|b| b.name == "radner-quadratic" && b.oracle == "normal-equations"));
    }

    #[test]
    fn builders_validate() {
        use crate::model::{validate_spec, ProbePlan};
        validate_spec(
            lq_scalar(&LqScalar::default()).unwrap(),
            &ProbePlan::default(),
        )
        .unwrap();
        validate_spec(
            radner_quadratic(&RadnerQuadratic::default()).unwrap(),
            &ProbePlan::default(),
        )
        .unwrap();
        let (spec, _) = delayed_sharing_lq(&DelayedSharingLq::default()).unwrap();
        validate_spec(spec, &ProbePlan::default()).unwrap();
        toy3_two_step(10.0).validate().unwrap();
        one_step_gaussian(0.0, 5.0).validate().unwrap();
        radner_discrete(&RadnerQuadratic::default())
            .unwrap()
            .validate()
            .unwrap();
    }
}
