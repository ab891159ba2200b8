//! Turns a validated [`ExperimentConfig`] into core problem objects.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use teamopt_core::basis::Basis;
use teamopt_core::benchmarks::{self, DelayedSharingLq, LqScalar, RadnerQuadratic};
use teamopt_core::info::{
    self, AgentInformation, FeatureMap, InformationStructure, Recall, Signal,
};
use teamopt_core::model::{
    ActionBox, DiscreteTeamSpec, InitialLaw, ObservationMap, ProblemSpec, TimeGrid,
};
use teamopt_core::policy::{AgentPolicySpec, PolicyProfile, Segmentation};

use crate::config::{from_tree, ExperimentConfig, Family};
use crate::error::{CliError, CoreContext};

pub fn parse_basis(name: &str) -> Result<Basis, String> {
    match name {
        "constant" => Ok(Basis::Constant),
        "linear" => Ok(Basis::Linear),
        "affine" => Ok(Basis::AFFINE),
        "quadratic" => Ok(Basis::QUADRATIC),
        "tanh" => Ok(Basis::Tanh),
        _ => match name.strip_prefix("polynomial-").map(str::parse::<u32>) {
            Some(Ok(p)) if p <= 6 => Ok(Basis::Polynomial(p)),
            _ => Err(format!(
                "unknown basis `{name}` (constant, linear, affine, quadratic, tanh, polynomial-P with P ≤ 6)"
            )),
        },
    }
}

pub fn parse_segmentation(name: &str) -> Result<Segmentation, String> {
    match name {
        "stationary" => Ok(Segmentation::Stationary),
        "per-step" => Ok(Segmentation::PerStep),
        _ => match name.strip_prefix("uniform-").map(str::parse::<usize>) {
            Some(Ok(n)) if n > 0 => Ok(Segmentation::Uniform(n)),
            _ => Err(format!(
                "unknown segmentation `{name}` (stationary, per-step, uniform-N)"
            )),
        },
    }
}

pub fn parse_recall(name: &str) -> Result<Recall, String> {
    match name {
        "markov" => Ok(Recall::Markov),
        "perfect" => Ok(Recall::Perfect),
        _ => match name.strip_prefix("window-").map(str::parse::<usize>) {
            Some(Ok(w)) => Ok(Recall::Window(w)),
            _ => Err(format!(
                "unknown recall `{name}` (markov, perfect, window-W)"
            )),
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LqParams {
    x0: f64,
    sigma: f64,
    q: f64,
    r: f64,
    s: f64,
    bound: f64,
}

impl Default for LqParams {
    fn default() -> Self {
        let d = LqScalar::default();
        Self {
            x0: d.x0,
            sigma: d.sigma,
            q: d.q,
            r: d.r,
            s: d.s,
            bound: d.bound,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RadnerParams {
    s11: f64,
    s12: f64,
    s22: f64,
    r1: f64,
    r2: f64,
    bound: f64,
}

impl Default for RadnerParams {
    fn default() -> Self {
        let d = RadnerQuadratic::default();
        Self {
            s11: d.s11,
            s12: d.s12,
            s22: d.s22,
            r1: d.r1,
            r2: d.r2,
            bound: d.bound,
        }
    }
}

impl RadnerParams {
    fn core(&self) -> RadnerQuadratic {
        RadnerQuadratic {
            s11: self.s11,
            s12: self.s12,
            s22: self.s22,
            r1: self.r1,
            r2: self.r2,
            bound: self.bound,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DelayedParams {
    coupling: f64,
    delay: f64,
    bound: f64,
}

impl Default for DelayedParams {
    fn default() -> Self {
        let d = DelayedSharingLq::default();
        Self {
            coupling: d.coupling,
            delay: d.delay,
            bound: d.bound,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OneStepParams {
    x0: f64,
    bound: f64,
}

impl Default for OneStepParams {
    fn default() -> Self {
        Self {
            x0: 0.0,
            bound: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Toy3Params {
    bound: f64,
}

impl Default for Toy3Params {
    fn default() -> Self {
        Self { bound: 10.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearAgent {
    #[serde(default = "one")]
    action_dim: usize,
    bound: f64,
    /// State coordinates the agent observes.
    observe: Vec<usize>,
}

fn one() -> usize {
    1
}

/// `dx = (A x + B u) dt + Σ dW` (continuous) or `x(k+1) = A x(k) + B u(k) + G w`
/// (discrete), cost `xᵀQx + Σ rⱼ uⱼ²`, terminal `xᵀSx`. Matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearParams {
    x0: Vec<f64>,
    /// Lower factor of the initial covariance; point mass when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0_factor: Option<Vec<f64>>,
    agents: Vec<LinearAgent>,
    a: Vec<f64>,
    b: Vec<f64>,
    /// Σ (continuous) or G (discrete); identity when absent.
    #[serde(default)]
    noise: Vec<f64>,
    #[serde(default)]
    q: Vec<f64>,
    #[serde(default)]
    r: Vec<f64>,
    #[serde(default)]
    s: Vec<f64>,
    /// Number of steps of the discrete family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
}

impl LinearParams {
    /// Fills defaults and checks shapes; errors name the offending key.
    fn resolve(&mut self, discrete: bool) -> Result<(), String> {
        let n = self.x0.len();
        if n == 0 {
            return Err("x0: state dimension must be positive".into());
        }
        if self.agents.is_empty() {
            return Err("agents: at least one agent is required".into());
        }
        let d: usize = self.agents.iter().map(|a| a.action_dim).sum();
        let identity: Vec<f64> = (0..n * n)
            .map(|i| if i / n == i % n { 1.0 } else { 0.0 })
            .collect();
        if self.noise.is_empty() {
            self.noise = identity;
        }
        if self.q.is_empty() {
            self.q = vec![0.0; n * n];
        }
        if self.s.is_empty() {
            self.s = vec![0.0; n * n];
        }
        if self.r.is_empty() {
            self.r = vec![1.0; d];
        }
        for (key, v, len) in [
            ("a", &self.a, n * n),
            ("b", &self.b, n * d),
            ("noise", &self.noise, n * n),
            ("q", &self.q, n * n),
            ("s", &self.s, n * n),
            ("r", &self.r, d),
        ] {
            if v.len() != len {
                return Err(format!("{key}: expected {len} entries, got {}", v.len()));
            }
        }
        if let Some(f) = &self.x0_factor {
            if f.len() != n * n {
                return Err(format!(
                    "x0_factor: expected {} entries, got {}",
                    n * n,
                    f.len()
                ));
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.action_dim == 0 || !(a.bound > 0.0) {
                return Err(format!(
                    "agents[{i}]: action_dim and bound must be positive"
                ));
            }
            if a.observe.iter().any(|c| *c >= n) {
                return Err(format!("agents[{i}].observe: coordinate out of range"));
            }
        }
        match (discrete, self.steps) {
            (true, None) | (true, Some(0)) => {
                return Err("steps: missing key (required by family discrete-linear)".into())
            }
            (false, Some(_)) => {
                return Err("steps: not used by family linear (use run.steps)".into())
            }
            _ => {}
        }
        Ok(())
    }

    fn initial_law(&self) -> InitialLaw {
        match &self.x0_factor {
            Some(f) => InitialLaw::Gaussian {
                mean: self.x0.clone(),
                factor: f.clone(),
            },
            None => InitialLaw::Point(self.x0.clone()),
        }
    }

    fn boxes(&self) -> Vec<ActionBox> {
        self.agents
            .iter()
            .map(|a| ActionBox::symmetric(a.action_dim, a.bound))
            .collect()
    }

    fn observations(&self) -> Vec<ObservationMap> {
        self.agents
            .iter()
            .map(|a| ObservationMap::projected(a.observe.clone()))
            .collect()
    }

    fn drift(&self) -> impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static {
        let (a, b, n) = (self.a.clone(), self.b.clone(), self.x0.len());
        move |x, u, out| {
            let d = u.len();
            for i in 0..n {
                let ax: f64 = (0..n).map(|j| a[i * n + j] * x[j]).sum();
                let bu: f64 = (0..d).map(|j| b[i * d + j] * u[j]).sum();
                out[i] = ax + bu;
            }
        }
    }

    fn running_cost(&self) -> impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static {
        let (q, r, n) = (self.q.clone(), self.r.clone(), self.x0.len());
        move |x, u| quadratic_form(&q, n, x) + u.iter().zip(&r).map(|(v, w)| w * v * v).sum::<f64>()
    }

    fn terminal_cost(&self) -> impl Fn(&[f64]) -> f64 + Send + Sync + 'static {
        let (s, n) = (self.s.clone(), self.x0.len());
        move |x| quadratic_form(&s, n, x)
    }
}

fn quadratic_form(m: &[f64], n: usize, x: &[f64]) -> f64 {
    (0..n)
        .map(|i| x[i] * (0..n).map(|j| m[i * n + j] * x[j]).sum::<f64>())
        .sum()
}

pub enum Model {
    Continuous { spec: ProblemSpec, grid: TimeGrid },
    Discrete { dspec: DiscreteTeamSpec },
}

/// Everything a subcommand needs, plus the fully resolved configuration.
pub struct Problem {
    pub model: Model,
    pub feature_map: FeatureMap,
    pub profile: PolicyProfile,
    pub resolved: ExperimentConfig,
}

impl Problem {
    pub fn grid(&self) -> TimeGrid {
        match &self.model {
            Model::Continuous { grid, .. } => *grid,
            Model::Discrete { dspec } => dspec.grid(),
        }
    }

    pub fn num_agents(&self) -> usize {
        self.feature_map.num_agents()
    }
}

fn params<T>(cfg: &ExperimentConfig, source: &Path) -> Result<T, CliError>
where
    T: for<'de> Deserialize<'de>,
{
    from_tree(cfg.problem.params.clone(), "problem.params", source)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("parameter structs serialize")
}

pub fn build(cfg: &ExperimentConfig, source: &Path) -> Result<Problem, CliError> {
    let invalid = |reason: String| CliError::invalid(source, reason);
    let mut resolved = cfg.clone();
    let horizon = cfg.problem.horizon;
    let mut default_info = None;
    let mut default_segmentation = "stationary";
    let model = match cfg.problem.family {
        Family::LqScalar => {
            let p: LqParams = params(cfg, source)?;
            resolved.problem.params = to_value(&p);
            let spec = benchmarks::lq_scalar(&LqScalar {
                horizon: horizon.unwrap_or(1.0),
                x0: p.x0,
                sigma: p.sigma,
                q: p.q,
                r: p.r,
                s: p.s,
                bound: p.bound,
            })
            .context("building lq-scalar")?;
            continuous(spec, cfg.run.steps)?
        }
        Family::RadnerQuadratic => {
            let p: RadnerParams = params(cfg, source)?;
            resolved.problem.params = to_value(&p);
            resolved.run.steps = 1;
            let spec =
                benchmarks::radner_quadratic(&p.core()).context("building radner-quadratic")?;
            continuous(spec, 1)?
        }
        Family::DelayedSharingLq => {
            let p: DelayedParams = params(cfg, source)?;
            resolved.problem.params = to_value(&p);
            let (spec, info) = benchmarks::delayed_sharing_lq(&DelayedSharingLq {
                horizon: horizon.unwrap_or(1.0),
                coupling: p.coupling,
                delay: p.delay,
                bound: p.bound,
            })
            .context("building delayed-sharing-lq")?;
            default_info = Some(info);
            default_segmentation = "per-step";
            continuous(spec, cfg.run.steps)?
        }
        Family::Linear => {
            let mut p: LinearParams = params(cfg, source)?;
            p.resolve(false)
                .map_err(|e| invalid(format!("problem.params.{e}")))?;
            resolved.problem.params = to_value(&p);
            let horizon = horizon.unwrap_or(1.0);
            let n = p.x0.len();
            let mut b = ProblemSpec::builder(n, horizon);
            for (bx, obs) in p.boxes().into_iter().zip(p.observations()) {
                b = b.agent(bx, obs);
            }
            let drift = p.drift();
            let cost = p.running_cost();
            let jac = p.b.clone();
            let spec = b
                .drift(move |_, x, u, out| drift(x, u, out))
                .drift_jacobian(move |_, _, _, out| out.copy_from_slice(&jac))
                .constant_diffusion(p.noise.clone())
                .running_cost(move |_, x, u| cost(x, u))
                .terminal_cost(p.terminal_cost())
                .initial_law(p.initial_law())
                .build()
                .context("building linear problem")?;
            continuous(spec, cfg.run.steps)?
        }
        Family::OneStepGaussian => {
            let p: OneStepParams = params(cfg, source)?;
            resolved.problem.params = to_value(&p);
            Model::Discrete {
                dspec: benchmarks::one_step_gaussian(p.x0, p.bound),
            }
        }
        Family::Toy3TwoStep => {
            let p: Toy3Params = params(cfg, source)?;
            resolved.problem.params = to_value(&p);
            Model::Discrete {
                dspec: benchmarks::toy3_two_step(p.bound),
            }
        }
        Family::DiscreteLinear => {
            let mut p: LinearParams = params(cfg, source)?;
            p.resolve(true)
                .map_err(|e| invalid(format!("problem.params.{e}")))?;
            resolved.problem.params = to_value(&p);
            let drift = p.drift();
            let cost = p.running_cost();
            let steps = p.steps.unwrap_or(1);
            let dspec = DiscreteTeamSpec {
                state_dim: p.x0.len(),
                action_dims: p.agents.iter().map(|a| a.action_dim).collect(),
                action_boxes: p.boxes(),
                horizon_steps: steps,
                drift: Arc::new(move |_, h, u, out: &mut [f64]| drift(h.current(), u, out)),
                noise_factors: vec![p.noise.clone(); steps],
                observations: p.observations(),
                running_cost: Arc::new(move |_, x, u| cost(x, u)),
                terminal_cost: Arc::new(p.terminal_cost()),
                initial_law: p.initial_law(),
            };
            dspec
                .validate()
                .context("validating discrete-linear problem")?;
            Model::Discrete { dspec }
        }
    };
    let (num_agents, obs_dims, boxes) = match &model {
        Model::Continuous { spec, .. } => (
            spec.num_agents(),
            spec.obs_dims(),
            spec.action_boxes.clone(),
        ),
        Model::Discrete { dspec } => (
            dspec.num_agents(),
            dspec.obs_dims(),
            dspec.action_boxes.clone(),
        ),
    };
    let info = if cfg.info.agents.is_empty() {
        default_info.unwrap_or_else(|| InformationStructure::all_markov(num_agents))
    } else {
        if cfg.info.agents.len() != num_agents {
            return Err(invalid(format!(
                "info.agents: {} entries for {num_agents} agents",
                cfg.info.agents.len()
            )));
        }
        InformationStructure::new(
            cfg.info
                .agents
                .iter()
                .map(|a| AgentInformation {
                    own_observation: a.own,
                    signals: a
                        .signals
                        .iter()
                        .map(|s| Signal {
                            from: s.from,
                            delay: s.delay,
                        })
                        .collect(),
                    recall: parse_recall(&a.recall).expect("checked"),
                    projection: a.projection.clone(),
                })
                .collect(),
        )
    };
    let grid = match &model {
        Model::Continuous { grid, .. } => *grid,
        Model::Discrete { dspec } => dspec.grid(),
    };
    let fm =
        info::compile(&info, &grid, &obs_dims).context("compiling the information structure")?;

    let seg_name = cfg
        .run
        .segmentation
        .clone()
        .unwrap_or_else(|| default_segmentation.to_string());
    resolved.run.segmentation = Some(seg_name.clone());
    resolved.run.mc_paths = Some(cfg.run.mc_paths.unwrap_or(cfg.run.paths));
    let segmentation =
        parse_segmentation(&seg_name).map_err(|e| invalid(format!("run.segmentation: {e}")))?;
    let basis = parse_basis(&cfg.run.policy_basis)
        .map_err(|e| invalid(format!("run.policy_basis: {e}")))?;
    let specs = boxes
        .into_iter()
        .map(|action_box| AgentPolicySpec {
            basis,
            segmentation,
            action_box,
        })
        .collect();
    let mut profile = PolicyProfile::new(&fm, specs).context("building the policy profile")?;
    if let Some(init) = &cfg.run.init {
        if init.len() != num_agents {
            return Err(invalid(format!(
                "run.init: {} entries for {num_agents} agents",
                init.len()
            )));
        }
        for (agent, values) in init.iter().enumerate() {
            let full = profile.params(agent).len();
            let result = if values.len() == full {
                profile.set_params(agent, values)
            } else {
                profile.set_all_segments(agent, values)
            };
            result.map_err(|e| {
                invalid(format!(
                    "run.init[{agent}]: {e} (full vector has {full} entries)"
                ))
            })?;
        }
    }
    resolved.run.init = Some(
        (0..num_agents)
            .map(|a| profile.params(a).to_vec())
            .collect(),
    );
    Ok(Problem {
        model,
        feature_map: fm,
        profile,
        resolved,
    })
}

fn continuous(spec: ProblemSpec, steps: usize) -> Result<Model, CliError> {
    let grid = TimeGrid::new(spec.horizon, steps).context("building the time grid")?;
    Ok(Model::Continuous { spec, grid })
}
