//! Team problem definitions and the sampled assumption audit.
//!
//! A continuous-time team problem is the controlled Itô system
//! `dx = f(t,x,u) dt + σ(t,x) dW` with running cost `ℓ`, terminal cost `φ`
//! and per-agent observation functionals `hⁱ` of the state history. The
//! diffusion is square and must be invertible: the change of measure uses
//! `σ⁻¹f` everywhere.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Deref, Range};

use crate::linalg::{self, SquareFactor};
use crate::math::{abs, ln, norm, sqrt};
use crate::rng::{self, PathRng};
use crate::{Error, Result};

pub type DriftFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type DiffusionFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type RunningCostFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalCostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `∂f/∂u` as a row-major `n × d` matrix.
pub type DriftJacobianFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type DiscreteDriftFn = Arc<dyn Fn(usize, &History<'_>, &[f64], &mut [f64]) + Send + Sync>;
pub type DiscreteCostFn = Arc<dyn Fn(usize, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type ObservationFn = Arc<dyn Fn(&History<'_>, &mut [f64]) + Send + Sync>;

/// State history `x(t₀), …, x(t_step)` of one path, row-major.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub step: usize,
    pub time: f64,
    pub dim: usize,
    pub states: &'a [f64],
}

impl<'a> History<'a> {
    pub fn at(&self, k: usize) -> &'a [f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn current(&self) -> &'a [f64] {
        self.at(self.step)
    }
}

/// Observation functional `hⁱ(t, x[0..t]) ∈ ℝᵏ`.
#[derive(Clone)]
pub struct ObservationMap {
    dim: usize,
    eval: ObservationFn,
}

impl fmt::Debug for ObservationMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObservationMap")
            .field("dim", &self.dim)
            .finish()
    }
}

impl ObservationMap {
    pub fn new<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&History<'_>, &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            dim,
            eval: Arc::new(eval),
        }
    }

    /// `h(t, x) = x(t)`.
    pub fn full_state(n: usize) -> Self {
        Self::projected((0..n).collect())
    }

    /// `h(t, x) = (x_c(t))_{c ∈ coords}`.
    pub fn projected(coords: Vec<usize>) -> Self {
        Self::new(coords.len(), move |h, out| {
            let x = h.current();
            for (o, &c) in out.iter_mut().zip(&coords) {
                *o = x[c];
            }
        })
    }

    /// `h(t, x) = (x_c(t − lag·Δ))`, zero before the first available time.
    pub fn lagged(coords: Vec<usize>, lag: usize) -> Self {
        Self::new(coords.len(), move |h, out| {
            if h.step < lag {
                out.iter_mut().for_each(|o| *o = 0.0);
            } else {
                let x = h.at(h.step - lag);
                for (o, &c) in out.iter_mut().zip(&coords) {
                    *o = x[c];
                }
            }
        })
    }

    /// `h(t, x) = C x(t) + c`, with `C` row-major `k × n`.
    pub fn affine(k: usize, matrix: Vec<f64>, offset: Vec<f64>) -> Self {
        Self::new(k, move |h, out| {
            linalg::mat_vec(&matrix, h.current(), out);
            for (o, c) in out.iter_mut().zip(&offset) {
                *o += c;
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, history: &History<'_>, out: &mut [f64]) {
        (self.eval)(history, out)
    }
}

/// Closed box `[lo, hi]` of admissible actions for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActionBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    pub fn symmetric(dim: usize, radius: f64) -> Self {
        Self::new(vec![-radius; dim], vec![radius; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_valid(&self) -> bool {
        self.lo.len() == self.hi.len()
            && self
                .lo
                .iter()
                .zip(&self.hi)
                .all(|(l, h)| l.is_finite() && h.is_finite() && l <= h)
    }

    pub fn project(&self, u: &mut [f64]) {
        for ((v, l), h) in u.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter()
            .zip(&self.lo)
            .zip(&self.hi)
            .all(|((v, l), h)| *l <= *v && *v <= *h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    /// All `2^d` vertices, in binary counting order (bit `j` set selects `hi[j]`).
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|j| {
                        if mask >> j & 1 == 1 {
                            self.hi[j]
                        } else {
                            self.lo[j]
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Law of `x(0)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Point(Vec<f64>),
    /// `x(0) = mean + L ξ`, `ξ ~ N(0, I)`, with `L` row-major `n × n`.
    Gaussian {
        mean: Vec<f64>,
        factor: Vec<f64>,
    },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point(x) => x.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// Number of random coordinates (0 for a point mass).
    pub fn random_dim(&self) -> usize {
        match self {
            InitialLaw::Point(_) => 0,
            InitialLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// Maps standard normal coordinates to a sample of `x(0)`.
    pub fn transform(&self, xi: &[f64], out: &mut [f64]) {
        match self {
            InitialLaw::Point(x) => out.copy_from_slice(x),
            InitialLaw::Gaussian { mean, factor } => {
                linalg::mat_vec(factor, xi, out);
                for (o, m) in out.iter_mut().zip(mean) {
                    *o += m;
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut PathRng, out: &mut [f64]) {
        match self {
            InitialLaw::Point(x) => out.copy_from_slice(x),
            InitialLaw::Gaussian { mean, .. } => {
                let xi: Vec<f64> = (0..mean.len()).map(|_| rng::standard_normal(rng)).collect();
                self.transform(&xi, out);
            }
        }
    }
}

/// Uniform grid `t_k = kΔ`, `k = 0..=M`, with `t_M = T` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    num_steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, num_steps: usize) -> Result<Self> {
        if num_steps == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "time grid needs T > 0 and M ≥ 1, got T = {horizon}, M = {num_steps}"
            )));
        }
        Ok(Self { num_steps, horizon })
    }

    /// Integer grid `0, 1, …, T` used by discrete-time problems.
    pub fn unit(steps: usize) -> Result<Self> {
        Self::new(steps as f64, steps)
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.num_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k >= self.num_steps {
            self.horizon
        } else {
            k as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.num_steps).map(|k| self.time(k)).collect()
    }

    /// Nearest grid index to `t`, clamped to `0..=M`.
    pub fn index_of(&self, t: f64) -> usize {
        let k = libm::round(t / self.step());
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.num_steps)
        }
    }
}

/// Continuous-time team problem.
#[derive(Clone)]
pub struct ProblemSpec {
    pub state_dim: usize,
    pub action_dims: Vec<usize>,
    pub action_boxes: Vec<ActionBox>,
    pub drift: DriftFn,
    pub drift_jacobian: Option<DriftJacobianFn>,
    pub diffusion: DiffusionFn,
    pub running_cost: RunningCostFn,
    pub terminal_cost: TerminalCostFn,
    pub observations: Vec<ObservationMap>,
    pub initial_law: InitialLaw,
    pub horizon: f64,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("state_dim", &self.state_dim)
            .field("action_dims", &self.action_dims)
            .field("action_boxes", &self.action_boxes)
            .field("observations", &self.observations)
            .field("initial_law", &self.initial_law)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// Starts a problem with zero drift, identity diffusion, zero costs and
    /// no agents.
    pub fn builder(state_dim: usize, horizon: f64) -> ProblemBuilder {
        ProblemBuilder {
            spec: ProblemSpec {
                state_dim,
                action_dims: Vec::new(),
                action_boxes: Vec::new(),
                drift: Arc::new(|_, _, _, out: &mut [f64]| out.iter_mut().for_each(|o| *o = 0.0)),
                drift_jacobian: None,
                diffusion: Arc::new(move |_, _, out: &mut [f64]| {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    for i in 0..state_dim {
                        out[i * state_dim + i] = 1.0;
                    }
                }),
                running_cost: Arc::new(|_, _, _| 0.0),
                terminal_cost: Arc::new(|_| 0.0),
                observations: Vec::new(),
                initial_law: InitialLaw::Point(vec![0.0; state_dim]),
                horizon,
            },
        }
    }

    pub fn num_agents(&self) -> usize {
        self.action_dims.len()
    }

    pub fn total_action_dim(&self) -> usize {
        self.action_dims.iter().sum()
    }

    pub fn action_range(&self, agent: usize) -> Range<usize> {
        let start: usize = self.action_dims[..agent].iter().sum();
        start..start + self.action_dims[agent]
    }

    pub fn obs_dims(&self) -> Vec<usize> {
        self.observations.iter().map(|o| o.dim()).collect()
    }

    pub fn project_actions(&self, u: &mut [f64]) {
        for (i, b) in self.action_boxes.iter().enumerate() {
            b.project(&mut u[self.action_range(i)]);
        }
    }

    pub fn drift_at(&self, t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim];
        (self.drift)(t, x, u, &mut out);
        out
    }

    pub fn diffusion_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim * self.state_dim];
        (self.diffusion)(t, x, &mut out);
        out
    }

    pub fn diffusion_factor(&self, t: f64, x: &[f64]) -> Result<SigmaFactor> {
        let sigma = self.diffusion_at(t, x);
        SquareFactor::new(self.state_dim, &sigma)
            .map(|lu| SigmaFactor { lu })
            .ok_or_else(|| Error::SingularDiffusion { t, x: x.to_vec() })
    }

    pub(crate) fn check_dims(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::InvalidSpec(
                "state dimension must be positive".into(),
            ));
        }
        if self.num_agents() == 0 {
            return Err(Error::InvalidSpec("at least one agent is required".into()));
        }
        if self.action_boxes.len() != self.num_agents()
            || self.observations.len() != self.num_agents()
        {
            return Err(Error::InvalidSpec(
                "every agent needs an action box and an observation map".into(),
            ));
        }
        for (i, (b, &d)) in self.action_boxes.iter().zip(&self.action_dims).enumerate() {
            if d == 0 || b.dim() != d || !b.is_valid() {
                return Err(Error::EmptyActionBox { agent: i });
            }
        }
        if self.initial_law.dim() != self.state_dim {
            return Err(Error::InvalidSpec(
                "initial law dimension differs from state dimension".into(),
            ));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidSpec(
                "horizon must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// LU factor of `σ(t, x)`, reused for several solves at one point.
pub struct SigmaFactor {
    lu: SquareFactor,
}

impl SigmaFactor {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.lu.solve(b)
    }
}

pub struct ProblemBuilder {
    spec: ProblemSpec,
}

impl ProblemBuilder {
    pub fn agent(mut self, action_box: ActionBox, observation: ObservationMap) -> Self {
        self.spec.action_dims.push(action_box.dim());
        self.spec.action_boxes.push(action_box);
        self.spec.observations.push(observation);
        self
    }

    pub fn drift<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.spec.drift = Arc::new(f);
        self
    }

    pub fn drift_jacobian<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.spec.drift_jacobian = Some(Arc::new(f));
        self
    }

    pub fn diffusion<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.spec.diffusion = Arc::new(f);
        self
    }

    /// Constant diffusion matrix, row-major.
    pub fn constant_diffusion(self, sigma: Vec<f64>) -> Self {
        self.diffusion(move |_, _, out| out.copy_from_slice(&sigma))
    }

    pub fn running_cost<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.spec.running_cost = Arc::new(f);
        self
    }

    pub fn terminal_cost<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.spec.terminal_cost = Arc::new(f);
        self
    }

    pub fn initial_law(mut self, law: InitialLaw) -> Self {
        self.spec.initial_law = law;
        self
    }

    pub fn build(self) -> Result<ProblemSpec> {
        self.spec.check_dims()?;
        Ok(self.spec)
    }
}

/// `σ(t,x)⁻¹ f(t,x,u)` by LU solve.
pub fn sigma_inv_drift(spec: &ProblemSpec, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let factor = spec.diffusion_factor(t, x)?;
    Ok(factor.solve(&spec.drift_at(t, x, u)))
}

/// Where the audit evaluates the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePlan {
    /// Number of equally spaced probe times in `[0, T]`.
    pub times: usize,
    /// Probe states lie in the cube `[-r, r]ⁿ`; the axis points `±r eᵢ` are
    /// always included.
    pub state_radius: f64,
    pub random_states: usize,
    pub random_actions: usize,
    pub seed: u64,
    /// Declared bound `K` on `|σ⁻¹f|`; `None` only reports the maximum.
    pub drift_ratio_bound: Option<f64>,
}

impl Default for ProbePlan {
    fn default() -> Self {
        Self {
            times: 5,
            state_radius: 3.0,
            random_states: 16,
            random_actions: 8,
            seed: 0,
            drift_ratio_bound: None,
        }
    }
}

/// Sampled evidence for the standing assumptions.
#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub probes: usize,
    pub max_drift_ratio: f64,
    pub drift_ratio_bound: Option<f64>,
    pub worst_condition: f64,
    /// Sampled `sup |σ(t,x) − σ(t,z)|_F / |x − z|`.
    pub sigma_lipschitz: f64,
    /// Sampled `sup |σ⁻¹f(x,u) − σ⁻¹f(z,v)| / (|x − z| + |u − v|)`.
    pub drift_ratio_lipschitz: f64,
}

/// A problem that passed [`validate_spec`].
#[derive(Debug, Clone)]
pub struct ValidatedSpec {
    spec: ProblemSpec,
    audit: Audit,
}

impl ValidatedSpec {
    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn audit(&self) -> &Audit {
        &self.audit
    }

    pub fn into_inner(self) -> ProblemSpec {
        self.spec
    }
}

impl Deref for ValidatedSpec {
    type Target = ProblemSpec;
    fn deref(&self) -> &ProblemSpec {
        &self.spec
    }
}

fn probe_states(spec: &ProblemSpec, plan: &ProbePlan, rng: &mut PathRng) -> Vec<Vec<f64>> {
    let n = spec.state_dim;
    let r = plan.state_radius;
    let mut states = vec![vec![0.0; n]];
    for i in 0..n {
        for s in [-r, r] {
            let mut x = vec![0.0; n];
            x[i] = s;
            states.push(x);
        }
    }
    for _ in 0..plan.random_states {
        states.push((0..n).map(|_| rng::uniform(rng, -r, r)).collect());
    }
    states
}

fn probe_actions(spec: &ProblemSpec, plan: &ProbePlan, rng: &mut PathRng) -> Vec<Vec<f64>> {
    let boxes = &spec.action_boxes;
    let joint_center: Vec<f64> = boxes.iter().flat_map(|b| b.center()).collect();
    let joint = ActionBox::new(
        boxes.iter().flat_map(|b| b.lo.clone()).collect(),
        boxes.iter().flat_map(|b| b.hi.clone()).collect(),
    );
    let mut actions = vec![joint_center];
    if joint.dim() <= 8 {
        actions.extend(joint.vertices());
    }
    for _ in 0..plan.random_actions {
        actions.push(
            joint
                .lo
                .iter()
                .zip(&joint.hi)
                .map(|(l, h)| rng::uniform(rng, *l, *h))
                .collect(),
        );
    }
    actions
}

fn check_purity(spec: &ProblemSpec, t: f64, x: &[f64], u: &[f64]) -> Result<()> {
    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits());
    if !same(&spec.drift_at(t, x, u), &spec.drift_at(t, x, u)) {
        return Err(Error::ImpureEvaluator { what: "drift" });
    }
    if !same(&spec.diffusion_at(t, x), &spec.diffusion_at(t, x)) {
        return Err(Error::ImpureEvaluator { what: "diffusion" });
    }
    if (spec.running_cost)(t, x, u).to_bits() != (spec.running_cost)(t, x, u).to_bits() {
        return Err(Error::ImpureEvaluator {
            what: "running_cost",
        });
    }
    if (spec.terminal_cost)(x).to_bits() != (spec.terminal_cost)(x).to_bits() {
        return Err(Error::ImpureEvaluator {
            what: "terminal_cost",
        });
    }
    Ok(())
}

/// Sampled audit of invertibility, boundedness and Lipschitz behaviour of
/// `σ` and `σ⁻¹f`. Deterministic in `(spec, plan)`.
pub fn validate_spec(spec: ProblemSpec, plan: &ProbePlan) -> Result<ValidatedSpec> {
    spec.check_dims()?;
    let n = spec.state_dim;
    let mut rng = rng::path_rng(plan.seed, 0);
    let states = probe_states(&spec, plan, &mut rng);
    let actions = probe_actions(&spec, plan, &mut rng);
    let times: Vec<f64> = if plan.times <= 1 {
        vec![0.0]
    } else {
        (0..plan.times)
            .map(|i| spec.horizon * i as f64 / (plan.times - 1) as f64)
            .collect()
    };
    check_purity(&spec, times[0], &states[0], &actions[0])?;

    let mut audit = Audit {
        probes: 0,
        max_drift_ratio: 0.0,
        drift_ratio_bound: plan.drift_ratio_bound,
        worst_condition: 1.0,
        sigma_lipschitz: 0.0,
        drift_ratio_lipschitz: 0.0,
    };
    for &t in &times {
        let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
        for x in &states {
            let sigma = spec.diffusion_at(t, x);
            let cond = linalg::condition_number(n, &sigma);
            let factor = SquareFactor::new(n, &sigma)
                .filter(|_| cond.is_finite() && cond < 1e14)
                .ok_or_else(|| Error::SingularDiffusion { t, x: x.clone() })?;
            audit.worst_condition = audit.worst_condition.max(cond);
            for u in &actions {
                audit.probes += 1;
                let ratio_vec = factor.solve(&spec.drift_at(t, x, u));
                let ratio = norm(&ratio_vec);
                if !ratio.is_finite() || plan.drift_ratio_bound.is_some_and(|k| ratio > k) {
                    return Err(Error::UnboundedDriftRatio {
                        t,
                        x: x.clone(),
                        u: u.clone(),
                        ratio,
                        bound: plan.drift_ratio_bound.unwrap_or(f64::INFINITY),
                    });
                }
                audit.max_drift_ratio = audit.max_drift_ratio.max(ratio);
                if let Some((px, pu, psigma, pratio)) = &prev {
                    let dx = distance(x, px);
                    let du = distance(u, pu);
                    if dx > 0.0 {
                        audit.sigma_lipschitz =
                            audit.sigma_lipschitz.max(distance(&sigma, psigma) / dx);
                    }
                    if dx + du > 0.0 {
                        audit.drift_ratio_lipschitz = audit
                            .drift_ratio_lipschitz
                            .max(distance(&ratio_vec, pratio) / (dx + du));
                    }
                }
                prev = Some((x.clone(), u.clone(), sigma.clone(), ratio_vec));
            }
        }
    }
    Ok(ValidatedSpec { spec, audit })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    sqrt(a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum())
}

/// Gaussian reference density `N(0, G Gᵀ)` of one discrete-time transition.
#[derive(Debug, Clone)]
pub struct GaussianStep {
    dim: usize,
    factor: Vec<f64>,
    chol: Vec<f64>,
    log_norm: f64,
}

impl GaussianStep {
    pub fn new(dim: usize, factor: Vec<f64>, step: usize) -> Result<Self> {
        if factor.len() != dim * dim || factor.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonPDCovariance { step });
        }
        let cov = linalg::outer_self(dim, &factor);
        let chol = linalg::cholesky(dim, &cov).ok_or(Error::NonPDCovariance { step })?;
        let scale = (0..dim).fold(0.0f64, |s, i| s.max(cov[i * dim + i]));
        if (0..dim).any(|i| chol[i * dim + i] * chol[i * dim + i] <= 1e-14 * scale) {
            return Err(Error::NonPDCovariance { step });
        }
        let log_det: f64 = (0..dim).map(|i| 2.0 * ln(abs(chol[i * dim + i]))).sum();
        let log_norm = -0.5 * (dim as f64 * ln(2.0 * core::f64::consts::PI) + log_det);
        Ok(Self {
            dim,
            factor,
            chol,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `w = G ξ`.
    pub fn color(&self, xi: &[f64], out: &mut [f64]) {
        linalg::mat_vec(&self.factor, xi, out);
    }

    /// `|L⁻¹ w|²` with `L Lᵀ = G Gᵀ`.
    pub fn mahalanobis_sq(&self, w: &[f64]) -> f64 {
        let mut y = vec![0.0; self.dim];
        linalg::forward_solve(self.dim, &self.chol, w, &mut y);
        y.iter().map(|v| v * v).sum()
    }

    pub fn log_density(&self, w: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(w)
    }
}

/// Discrete-time team problem `x(k+1) = f(k, x[0..k], u(k)) + w(k+1)`,
/// `w(k+1) ~ N(0, G(k) G(k)ᵀ)`.
#[derive(Clone)]
pub struct DiscreteTeamSpec {
    pub state_dim: usize,
    pub action_dims: Vec<usize>,
    pub action_boxes: Vec<ActionBox>,
    pub horizon_steps: usize,
    pub drift: DiscreteDriftFn,
    /// `G(k)` for `k = 0..T`, row-major `n × n`; generates `x(k+1)`.
    pub noise_factors: Vec<Vec<f64>>,
    pub observations: Vec<ObservationMap>,
    pub running_cost: DiscreteCostFn,
    pub terminal_cost: TerminalCostFn,
    pub initial_law: InitialLaw,
}

impl fmt::Debug for DiscreteTeamSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteTeamSpec")
            .field("state_dim", &self.state_dim)
            .field("action_dims", &self.action_dims)
            .field("horizon_steps", &self.horizon_steps)
            .field("noise_factors", &self.noise_factors)
            .field("initial_law", &self.initial_law)
            .finish_non_exhaustive()
    }
}

impl DiscreteTeamSpec {
    pub fn num_agents(&self) -> usize {
        self.action_dims.len()
    }

    pub fn total_action_dim(&self) -> usize {
        self.action_dims.iter().sum()
    }

    pub fn action_range(&self, agent: usize) -> Range<usize> {
        let start: usize = self.action_dims[..agent].iter().sum();
        start..start + self.action_dims[agent]
    }

    pub fn obs_dims(&self) -> Vec<usize> {
        self.observations.iter().map(|o| o.dim()).collect()
    }

    pub fn project_actions(&self, u: &mut [f64]) {
        for (i, b) in self.action_boxes.iter().enumerate() {
            b.project(&mut u[self.action_range(i)]);
        }
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            num_steps: self.horizon_steps,
            horizon: self.horizon_steps as f64,
        }
    }

    /// The reference densities `λ₁ … λ_T`, checking positive definiteness.
    pub fn reference_densities(&self) -> Result<Vec<GaussianStep>> {
        if self.noise_factors.len() != self.horizon_steps {
            return Err(Error::InvalidSpec(format!(
                "{} noise factors for {} steps",
                self.noise_factors.len(),
                self.horizon_steps
            )));
        }
        self.noise_factors
            .iter()
            .enumerate()
            .map(|(k, g)| GaussianStep::new(self.state_dim, g.clone(), k))
            .collect()
    }

    pub fn validate(&self) -> Result<Vec<GaussianStep>> {
        if self.state_dim == 0 || self.horizon_steps == 0 || self.num_agents() == 0 {
            return Err(Error::InvalidSpec(
                "discrete problem needs n ≥ 1, T ≥ 1 and at least one agent".into(),
            ));
        }
        if self.action_boxes.len() != self.num_agents()
            || self.observations.len() != self.num_agents()
        {
            return Err(Error::InvalidSpec(
                "every agent needs an action box and an observation map".into(),
            ));
        }
        for (i, (b, &d)) in self.action_boxes.iter().zip(&self.action_dims).enumerate() {
            if d == 0 || b.dim() != d || !b.is_valid() {
                return Err(Error::EmptyActionBox { agent: i });
            }
        }
        if self.initial_law.dim() != self.state_dim {
            return Err(Error::InvalidSpec(
                "initial law dimension differs from state dimension".into(),
            ));
        }
        self.reference_densities()
    }
}
