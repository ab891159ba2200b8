//! Decentralized feedback laws `uⁱ_k = μⁱ_k(Iⁱ_k)`.
//!
//! A policy never sees states; it is handed the agent's feature vector for
//! the current step (see [`crate::info::FeatureMap`]).

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::basis::Basis;
use crate::info::FeatureMap;
use crate::model::ActionBox;
use crate::{Error, Result};

pub trait TeamPolicy: Sync {
    fn num_agents(&self) -> usize;

    fn action_dim(&self, agent: usize) -> usize;

    /// Writes `uⁱ_step` for the given features into `out`.
    fn act(&self, agent: usize, step: usize, features: &[f64], out: &mut [f64]);

    /// Number of features the policy was built for, when it is bound to one.
    fn feature_dim(&self, _agent: usize, _step: usize) -> Option<usize> {
        None
    }
}

/// Rejects a policy whose declared feature dimensions disagree with `fm`.
pub fn check_binding(
    policy: &dyn TeamPolicy,
    fm: &FeatureMap,
    decision_steps: usize,
) -> Result<()> {
    if policy.num_agents() != fm.num_agents() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "policy has {} agents, information structure {}",
            policy.num_agents(),
            fm.num_agents()
        )));
    }
    for agent in 0..fm.num_agents() {
        for step in 0..decision_steps {
            if let Some(expected) = policy.feature_dim(agent, step) {
                let provided = fm.dim(agent, step);
                if expected != provided {
                    return Err(Error::PolicyNotMeasurable {
                        agent,
                        step,
                        expected,
                        provided,
                    });
                }
            }
        }
    }
    Ok(())
}

/// How decision steps share parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segmentation {
    /// One block for all steps.
    Stationary,
    /// `n` blocks of (nearly) equal length.
    Uniform(usize),
    /// One block per step.
    PerStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPolicySpec {
    pub basis: Basis,
    pub segmentation: Segmentation,
    pub action_box: ActionBox,
}

#[derive(Debug, Clone, PartialEq)]
struct AgentPolicy {
    basis: Basis,
    action_box: ActionBox,
    step_segment: Vec<usize>,
    /// feature dimension of each segment
    segment_dims: Vec<usize>,
    /// start of each segment's block in `params`
    offsets: Vec<usize>,
    params: Vec<f64>,
}

impl AgentPolicy {
    fn action_dim(&self) -> usize {
        self.action_box.dim()
    }

    fn basis_len(&self, segment: usize) -> usize {
        self.basis.len(self.segment_dims[segment])
    }
}

/// Per-agent parametric laws `uⁱ = proj_{𝔸ⁱ}(Θⁱ_s · basis(features))`,
/// where `s` is the parameter segment of the step and `Θⁱ_s` is a row-major
/// `dᵢ × basis_len` block.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyProfile {
    agents: Vec<AgentPolicy>,
}

impl PolicyProfile {
    /// Zero-initialized profile for decision steps `0..fm.num_steps()`.
    pub fn new(fm: &FeatureMap, specs: Vec<AgentPolicySpec>) -> Result<Self> {
        if specs.len() != fm.num_agents() {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} policy blocks for {} agents",
                specs.len(),
                fm.num_agents()
            )));
        }
        let steps = fm.num_steps();
        let mut agents = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            if !spec.action_box.is_valid() || spec.action_box.dim() == 0 {
                return Err(Error::EmptyActionBox { agent: i });
            }
            let num_segments = match spec.segmentation {
                Segmentation::Stationary => 1,
                Segmentation::Uniform(n) => n.clamp(1, steps),
                Segmentation::PerStep => steps,
            };
            let step_segment: Vec<usize> = (0..steps).map(|k| k * num_segments / steps).collect();
            let mut segment_dims = vec![usize::MAX; num_segments];
            for (k, &s) in step_segment.iter().enumerate() {
                let d = fm.dim(i, k);
                if segment_dims[s] == usize::MAX {
                    segment_dims[s] = d;
                } else if segment_dims[s] != d {
                    return Err(Error::PolicyNotMeasurable {
                        agent: i,
                        step: k,
                        expected: segment_dims[s],
                        provided: d,
                    });
                }
            }
            let mut offsets = Vec::with_capacity(num_segments);
            let mut total = 0;
            for &d in &segment_dims {
                offsets.push(total);
                total += spec.action_box.dim() * spec.basis.len(d);
            }
            agents.push(AgentPolicy {
                basis: spec.basis,
                action_box: spec.action_box,
                step_segment,
                segment_dims,
                offsets,
                params: vec![0.0; total],
            });
        }
        Ok(Self { agents })
    }

    pub fn params(&self, agent: usize) -> &[f64] {
        &self.agents[agent].params
    }

    pub fn set_params(&mut self, agent: usize, params: &[f64]) -> Result<()> {
        let a = &mut self.agents[agent];
        if params.len() != a.params.len() {
            return Err(Error::DimensionMismatch(alloc::format!(
                "agent {agent} has {} parameters, got {}",
                a.params.len(),
                params.len()
            )));
        }
        a.params.copy_from_slice(params);
        Ok(())
    }

    /// Sets every segment of `agent` to the same block.
    pub fn set_all_segments(&mut self, agent: usize, block: &[f64]) -> Result<()> {
        let a = &mut self.agents[agent];
        for s in 0..a.offsets.len() {
            let len = a.action_dim() * a.basis_len(s);
            if block.len() != len {
                return Err(Error::DimensionMismatch(alloc::format!(
                    "segment block of agent {agent} has {len} entries, got {}",
                    block.len()
                )));
            }
            a.params[a.offsets[s]..a.offsets[s] + len].copy_from_slice(block);
        }
        Ok(())
    }

    pub fn num_segments(&self, agent: usize) -> usize {
        self.agents[agent].offsets.len()
    }

    pub fn segment_of(&self, agent: usize, step: usize) -> usize {
        self.agents[agent].step_segment[step]
    }

    pub fn segment_range(&self, agent: usize, segment: usize) -> core::ops::Range<usize> {
        let a = &self.agents[agent];
        let start = a.offsets[segment];
        start..start + a.action_dim() * a.basis_len(segment)
    }

    pub fn segment_params(&self, agent: usize, segment: usize) -> &[f64] {
        &self.agents[agent].params[self.segment_range(agent, segment)]
    }

    pub fn basis(&self, agent: usize) -> Basis {
        self.agents[agent].basis
    }

    pub fn basis_len(&self, agent: usize, segment: usize) -> usize {
        self.agents[agent].basis_len(segment)
    }

    pub fn action_box(&self, agent: usize) -> &ActionBox {
        &self.agents[agent].action_box
    }

    /// Action and its sensitivity data: `basis` receives the regressors and
    /// `clamped[c]` tells whether coordinate `c` sits on the box boundary
    /// after projection (zero derivative in the parameters).
    pub fn act_detailed(
        &self,
        agent: usize,
        step: usize,
        features: &[f64],
        basis: &mut Vec<f64>,
        out: &mut [f64],
        clamped: &mut [bool],
    ) {
        let a = &self.agents[agent];
        let s = a.step_segment[step];
        a.basis.expand(features, basis);
        let block = &a.params[a.offsets[s]..];
        let m = basis.len();
        for (c, o) in out.iter_mut().enumerate() {
            let raw = crate::math::dot(&block[c * m..(c + 1) * m], basis);
            let v = raw.clamp(a.action_box.lo[c], a.action_box.hi[c]);
            clamped[c] = v != raw;
            *o = v;
        }
    }
}

impl TeamPolicy for PolicyProfile {
    fn num_agents(&self) -> usize {
        self.agents.len()
    }

    fn action_dim(&self, agent: usize) -> usize {
        self.agents[agent].action_dim()
    }

    fn act(&self, agent: usize, step: usize, features: &[f64], out: &mut [f64]) {
        let mut basis = Vec::new();
        let mut clamped = [false; 8];
        if out.len() <= clamped.len() {
            self.act_detailed(
                agent,
                step,
                features,
                &mut basis,
                out,
                &mut clamped[..out.len()],
            );
        } else {
            let mut c = vec![false; out.len()];
            self.act_detailed(agent, step, features, &mut basis, out, &mut c);
        }
    }

    fn feature_dim(&self, agent: usize, step: usize) -> Option<usize> {
        let a = &self.agents[agent];
        a.step_segment.get(step).map(|&s| a.segment_dims[s])
    }
}

type ActFn = dyn Fn(usize, usize, &[f64], &mut [f64]) + Send + Sync;

/// Policy given by a closure `(agent, step, features, out)`.
pub struct FnPolicy {
    action_dims: Vec<usize>,
    f: Box<ActFn>,
}

impl FnPolicy {
    pub fn new<F>(action_dims: Vec<usize>, f: F) -> Self
    where
        F: Fn(usize, usize, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            action_dims,
            f: Box::new(f),
        }
    }

    /// Every agent plays zero.
    pub fn zero(action_dims: Vec<usize>) -> Self {
        Self::new(action_dims, |_, _, _, out| {
            out.iter_mut().for_each(|o| *o = 0.0)
        })
    }
}

impl TeamPolicy for FnPolicy {
    fn num_agents(&self) -> usize {
        self.action_dims.len()
    }

    fn action_dim(&self, agent: usize) -> usize {
        self.action_dims[agent]
    }

    fn act(&self, agent: usize, step: usize, features: &[f64], out: &mut [f64]) {
        (self.f)(agent, step, features, out)
    }
}

/// `Σ_j c_j μ_j`, unprojected. Used for the perturbations `u° + ε(u − u°)`.
pub struct LinearCombination<'a> {
    terms: Vec<(f64, &'a dyn TeamPolicy)>,
}

impl<'a> LinearCombination<'a> {
    pub fn new(terms: Vec<(f64, &'a dyn TeamPolicy)>) -> Self {
        assert!(!terms.is_empty(), "empty linear combination");
        Self { terms }
    }

    /// `base + ε (target − base)`.
    pub fn blend(base: &'a dyn TeamPolicy, target: &'a dyn TeamPolicy, eps: f64) -> Self {
        Self::new(vec![(1.0 - eps, base), (eps, target)])
    }

    /// `target − base`.
    pub fn difference(target: &'a dyn TeamPolicy, base: &'a dyn TeamPolicy) -> Self {
        Self::new(vec![(1.0, target), (-1.0, base)])
    }
}

impl TeamPolicy for LinearCombination<'_> {
    fn num_agents(&self) -> usize {
        self.terms[0].1.num_agents()
    }

    fn action_dim(&self, agent: usize) -> usize {
        self.terms[0].1.action_dim(agent)
    }

    fn act(&self, agent: usize, step: usize, features: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, p) in &self.terms {
            p.act(agent, step, features, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += c * t;
            }
        }
    }
}

/// `base` for every agent except `agent`, which plays `other`'s law.
pub struct Deviation<'a> {
    pub base: &'a dyn TeamPolicy,
    pub other: &'a dyn TeamPolicy,
    pub agent: usize,
    /// `other` is used only from this step on.
    pub from_step: usize,
}

impl TeamPolicy for Deviation<'_> {
    fn num_agents(&self) -> usize {
        self.base.num_agents()
    }

    fn action_dim(&self, agent: usize) -> usize {
        self.base.action_dim(agent)
    }

    fn act(&self, agent: usize, step: usize, features: &[f64], out: &mut [f64]) {
        if agent == self.agent && step >= self.from_step {
            self.other.act(agent, step, features, out)
        } else {
            self.base.act(agent, step, features, out)
        }
    }

    fn feature_dim(&self, agent: usize, step: usize) -> Option<usize> {
        self.base.feature_dim(agent, step)
    }
}
