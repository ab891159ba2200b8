//! Monte Carlo path ensembles.
//!
//! Continuous-time problems are stepped with Euler–Maruyama,
//! `x_{k+1} = x_k + f(t_k, x_k, u_k) Δ + σ(t_k, x_k) ΔW_k`; under the
//! reference measure the drift term is dropped. Discrete-time problems are
//! sampled exactly. Path `p` only ever draws from its own random stream, so
//! a bundle is a deterministic function of its inputs and the seed, whatever
//! the number of workers.

use alloc::vec;
use alloc::vec::Vec;

use crate::info::FeatureMap;
use crate::math::sqrt;
use crate::model::{ActionBox, DiscreteTeamSpec, History, ObservationMap, ProblemSpec, TimeGrid};
use crate::par;
use crate::policy::{self, TeamPolicy};
use crate::rng::{self, PathRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// Driftless (continuous) or i.i.d. (discrete) dynamics.
    Reference,
    /// Controlled dynamics.
    Original,
}

impl Measure {
    pub fn name(&self) -> &'static str {
        match self {
            Measure::Reference => "reference",
            Measure::Original => "original",
        }
    }
}

/// Ensemble of `P` paths on a grid with `M` steps.
///
/// Layouts (row-major): `states` `P × (M+1) × n`; `noise` `P × M × n`
/// (Brownian increments `ΔW_k` for continuous models, `w(k+1)` for discrete
/// ones); `observations[i]` `P × (M+1) × kᵢ`; `controls` `P × M × d` (joint
/// action, zero until a policy has been applied); `log_likelihood`
/// `P × (M+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub num_paths: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub grid: TimeGrid,
    pub obs_dims: Vec<usize>,
    pub states: Vec<f64>,
    pub noise: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub controls: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub measure: Measure,
    pub seed: u64,
}

impl PathBundle {
    pub fn num_steps(&self) -> usize {
        self.grid.num_steps()
    }

    pub fn path_states(&self, p: usize) -> &[f64] {
        let len = (self.num_steps() + 1) * self.state_dim;
        &self.states[p * len..(p + 1) * len]
    }

    pub fn state(&self, p: usize, k: usize) -> &[f64] {
        let n = self.state_dim;
        &self.path_states(p)[k * n..(k + 1) * n]
    }

    pub fn noise(&self, p: usize, k: usize) -> &[f64] {
        let n = self.state_dim;
        let off = (p * self.num_steps() + k) * n;
        &self.noise[off..off + n]
    }

    pub fn control(&self, p: usize, k: usize) -> &[f64] {
        let d = self.action_dim;
        let off = (p * self.num_steps() + k) * d;
        &self.controls[off..off + d]
    }

    pub fn obs_path(&self, agent: usize, p: usize) -> &[f64] {
        let len = (self.num_steps() + 1) * self.obs_dims[agent];
        &self.observations[agent][p * len..(p + 1) * len]
    }

    /// All agents' observation histories of path `p`.
    pub fn obs_views(&self, p: usize) -> Vec<&[f64]> {
        (0..self.obs_dims.len())
            .map(|i| self.obs_path(i, p))
            .collect()
    }

    pub fn log_likelihood(&self, p: usize, k: usize) -> f64 {
        self.log_likelihood[p * (self.num_steps() + 1) + k]
    }

    pub fn history(&self, p: usize, k: usize) -> History<'_> {
        History {
            step: k,
            time: self.grid.time(k),
            dim: self.state_dim,
            states: self.path_states(p),
        }
    }

    /// Features of `agent` at step `k` on path `p`.
    pub fn features(&self, fm: &FeatureMap, p: usize, agent: usize, k: usize, out: &mut Vec<f64>) {
        fm.extract_into(&self.obs_views(p), agent, k, out);
    }
}

struct PathRecord {
    states: Vec<f64>,
    noise: Vec<f64>,
    observations: Vec<Vec<f64>>,
    controls: Vec<f64>,
}

fn assemble(
    records: Vec<PathRecord>,
    grid: TimeGrid,
    state_dim: usize,
    action_dim: usize,
    obs_dims: Vec<usize>,
    measure: Measure,
    seed: u64,
) -> PathBundle {
    let p = records.len();
    let m = grid.num_steps();
    let mut bundle = PathBundle {
        num_paths: p,
        state_dim,
        action_dim,
        grid,
        observations: obs_dims
            .iter()
            .map(|k| Vec::with_capacity(p * (m + 1) * k))
            .collect(),
        obs_dims,
        states: Vec::with_capacity(p * (m + 1) * state_dim),
        noise: Vec::with_capacity(p * m * state_dim),
        controls: Vec::with_capacity(p * m * action_dim),
        log_likelihood: vec![0.0; p * (m + 1)],
        measure,
        seed,
    };
    for r in records {
        bundle.states.extend_from_slice(&r.states);
        bundle.noise.extend_from_slice(&r.noise);
        bundle.controls.extend_from_slice(&r.controls);
        for (dst, src) in bundle.observations.iter_mut().zip(&r.observations) {
            dst.extend_from_slice(src);
        }
    }
    bundle
}

/// Per-path scratch shared by both simulators.
struct Stepper<'a> {
    observations: &'a [ObservationMap],
    fm: Option<&'a FeatureMap>,
    policy: Option<&'a dyn TeamPolicy>,
    boxes: &'a [ActionBox],
    action_dims: Vec<usize>,
    features: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn observe(&self, step: usize, time: f64, dim: usize, states: &[f64], obs: &mut [Vec<f64>]) {
        let h = History {
            step,
            time,
            dim,
            states,
        };
        for (map, hist) in self.observations.iter().zip(obs.iter_mut()) {
            let start = hist.len();
            hist.resize(start + map.dim(), 0.0);
            map.eval(&h, &mut hist[start..]);
        }
    }

    /// Joint projected action at `step`; zero when no policy is attached.
    fn act(&mut self, step: usize, obs: &[Vec<f64>], u: &mut [f64]) {
        let (Some(policy), Some(fm)) = (self.policy, self.fm) else {
            u.iter_mut().for_each(|v| *v = 0.0);
            return;
        };
        let views: Vec<&[f64]> = obs.iter().map(|v| v.as_slice()).collect();
        let mut start = 0;
        for (agent, &d) in self.action_dims.iter().enumerate() {
            fm.extract_into(&views, agent, step, &mut self.features);
            let slot = &mut u[start..start + d];
            policy.act(agent, step, &self.features, slot);
            self.boxes[agent].project(slot);
            start += d;
        }
    }
}

fn draw_normals(rng: &mut PathRng, out: &mut [f64], scale: f64) {
    for v in out.iter_mut() {
        *v = scale * rng::standard_normal(rng);
    }
}

fn simulate_continuous(
    spec: &ProblemSpec,
    policy: Option<(&dyn TeamPolicy, &FeatureMap)>,
    grid: &TimeGrid,
    num_paths: usize,
    seed: u64,
    measure: Measure,
) -> Result<PathBundle> {
    if num_paths == 0 {
        return Err(Error::InvalidSpec("at least one path is required".into()));
    }
    if let Some((pol, fm)) = policy {
        policy::check_binding(pol, fm, grid.num_steps())?;
        if fm.num_steps() != grid.num_steps() {
            return Err(Error::DimensionMismatch(
                "feature map and grid differ in length".into(),
            ));
        }
    }
    let n = spec.state_dim;
    let d = spec.total_action_dim();
    let m = grid.num_steps();
    let dt = grid.step();
    let sqrt_dt = sqrt(dt);
    let records = par::try_map_indexed(num_paths, |p| {
        let mut rng = rng::path_rng(seed, p);
        let mut stepper = Stepper {
            observations: &spec.observations,
            fm: policy.map(|x| x.1),
            policy: policy.map(|x| x.0),
            boxes: &spec.action_boxes,
            action_dims: spec.action_dims.clone(),
            features: Vec::new(),
        };
        let mut states = vec![0.0; (m + 1) * n];
        let mut noise = vec![0.0; m * n];
        let mut controls = vec![0.0; m * d];
        let mut obs: Vec<Vec<f64>> = spec
            .observations
            .iter()
            .map(|o| Vec::with_capacity((m + 1) * o.dim()))
            .collect();
        spec.initial_law.sample(&mut rng, &mut states[..n]);
        let mut f = vec![0.0; n];
        let mut sigma = vec![0.0; n * n];
        for k in 0..m {
            let t = grid.time(k);
            stepper.observe(k, t, n, &states[..(k + 1) * n], &mut obs);
            let u = &mut controls[k * d..(k + 1) * d];
            if measure == Measure::Original {
                stepper.act(k, &obs, u);
            }
            let dw = &mut noise[k * n..(k + 1) * n];
            draw_normals(&mut rng, dw, sqrt_dt);
            let (head, tail) = states.split_at_mut((k + 1) * n);
            let x = &head[k * n..];
            (spec.diffusion)(t, x, &mut sigma);
            let next = &mut tail[..n];
            crate::linalg::mat_vec(&sigma, dw, next);
            if measure == Measure::Original {
                (spec.drift)(t, x, u, &mut f);
                for i in 0..n {
                    next[i] += x[i] + f[i] * dt;
                }
            } else {
                for i in 0..n {
                    next[i] += x[i];
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    path: p,
                    step: k + 1,
                });
            }
        }
        stepper.observe(m, grid.time(m), n, &states, &mut obs);
        Ok(PathRecord {
            states,
            noise,
            observations: obs,
            controls,
        })
    })?;
    Ok(assemble(
        records,
        *grid,
        n,
        d,
        spec.obs_dims(),
        measure,
        seed,
    ))
}

/// Driftless paths `x_{k+1} = x_k + σ(t_k, x_k) ΔW_k`; no policy involved.
pub fn simulate_reference(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    num_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    simulate_continuous(spec, None, grid, num_paths, seed, Measure::Reference)
}

/// Controlled paths with `u_k` computed from the agents' features at `t_k`
/// and projected into the action boxes. Uses the same random draws as
/// [`simulate_reference`] for equal seeds.
pub fn simulate_controlled(
    spec: &ProblemSpec,
    policy: &dyn TeamPolicy,
    fm: &FeatureMap,
    grid: &TimeGrid,
    num_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    simulate_continuous(
        spec,
        Some((policy, fm)),
        grid,
        num_paths,
        seed,
        Measure::Original,
    )
}

/// Recomputes every agent's observation history from the stored states.
pub fn observe(spec: &ProblemSpec, bundle: &mut PathBundle) {
    observe_with(&spec.observations, bundle)
}

pub fn observe_with(maps: &[ObservationMap], bundle: &mut PathBundle) {
    let m = bundle.num_steps();
    let n = bundle.state_dim;
    let per_path: Vec<Vec<Vec<f64>>> = par::map_indexed(bundle.num_paths, |p| {
        let states = bundle.path_states(p);
        maps.iter()
            .map(|map| {
                let mut out = vec![0.0; (m + 1) * map.dim()];
                for k in 0..=m {
                    let h = History {
                        step: k,
                        time: bundle.grid.time(k),
                        dim: n,
                        states,
                    };
                    map.eval(&h, &mut out[k * map.dim()..(k + 1) * map.dim()]);
                }
                out
            })
            .collect()
    });
    bundle.obs_dims = maps.iter().map(|m| m.dim()).collect();
    bundle.observations = maps.iter().map(|_| Vec::new()).collect();
    for path in per_path {
        for (dst, src) in bundle.observations.iter_mut().zip(path) {
            dst.extend(src);
        }
    }
}

/// Joint projected controls `P × M × d` of `policy` along the bundle's
/// observations.
pub fn replay_controls(
    bundle: &PathBundle,
    policy: &dyn TeamPolicy,
    fm: &FeatureMap,
    boxes: &[ActionBox],
) -> Result<Vec<f64>> {
    let m = bundle.num_steps();
    policy::check_binding(policy, fm, m)?;
    let dims: Vec<usize> = boxes.iter().map(|b| b.dim()).collect();
    let d: usize = dims.iter().sum();
    let per_path = par::map_indexed(bundle.num_paths, |p| {
        let views = bundle.obs_views(p);
        let mut feats = Vec::new();
        let mut out = vec![0.0; m * d];
        for k in 0..m {
            let mut start = k * d;
            for (agent, &da) in dims.iter().enumerate() {
                fm.extract_into(&views, agent, k, &mut feats);
                let slot = &mut out[start..start + da];
                policy.act(agent, k, &feats, slot);
                boxes[agent].project(slot);
                start += da;
            }
        }
        out
    });
    Ok(per_path.concat())
}

/// Largest deviation between stored states and the Euler recursion replayed
/// from the stored increments (and controls, under the original measure).
pub fn replay_error(spec: &ProblemSpec, bundle: &PathBundle) -> f64 {
    let n = bundle.state_dim;
    let dt = bundle.grid.step();
    let errs = par::map_indexed(bundle.num_paths, |p| {
        let mut worst = 0.0f64;
        let mut x = bundle.state(p, 0).to_vec();
        for k in 0..bundle.num_steps() {
            let t = bundle.grid.time(k);
            let sigma = spec.diffusion_at(t, &x);
            let mut next = vec![0.0; n];
            crate::linalg::mat_vec(&sigma, bundle.noise(p, k), &mut next);
            let f = if bundle.measure == Measure::Original {
                spec.drift_at(t, &x, bundle.control(p, k))
            } else {
                vec![0.0; n]
            };
            for i in 0..n {
                next[i] += x[i] + f[i] * dt;
            }
            for (a, b) in next.iter().zip(bundle.state(p, k + 1)) {
                worst = worst.max(crate::math::abs(a - b));
            }
            x = next;
        }
        worst
    });
    errs.into_iter().fold(0.0, f64::max)
}

/// Exact sampling of a discrete-time team. Under the reference measure
/// `x(k+1) = w(k+1)` independently; under the original measure
/// `x(k+1) = f(k, x[0..k], u(k)) + w(k+1)`. Controls are recorded under both
/// measures (under the reference measure they do not act on the state).
pub fn simulate_discrete(
    dspec: &DiscreteTeamSpec,
    policy: &dyn TeamPolicy,
    fm: &FeatureMap,
    num_paths: usize,
    seed: u64,
    measure: Measure,
) -> Result<PathBundle> {
    let densities = dspec.validate()?;
    if num_paths == 0 {
        return Err(Error::InvalidSpec("at least one path is required".into()));
    }
    let grid = dspec.grid();
    policy::check_binding(policy, fm, grid.num_steps())?;
    let n = dspec.state_dim;
    let d = dspec.total_action_dim();
    let m = grid.num_steps();
    let records = par::try_map_indexed(num_paths, |p| {
        let mut rng = rng::path_rng(seed, p);
        let mut stepper = Stepper {
            observations: &dspec.observations,
            fm: Some(fm),
            policy: Some(policy),
            boxes: &dspec.action_boxes,
            action_dims: dspec.action_dims.clone(),
            features: Vec::new(),
        };
        let mut states = vec![0.0; (m + 1) * n];
        let mut noise = vec![0.0; m * n];
        let mut controls = vec![0.0; m * d];
        let mut obs: Vec<Vec<f64>> = dspec.observations.iter().map(|_| Vec::new()).collect();
        dspec.initial_law.sample(&mut rng, &mut states[..n]);
        let mut xi = vec![0.0; n];
        let mut f = vec![0.0; n];
        for k in 0..m {
            stepper.observe(k, k as f64, n, &states[..(k + 1) * n], &mut obs);
            let u = &mut controls[k * d..(k + 1) * d];
            stepper.act(k, &obs, u);
            draw_normals(&mut rng, &mut xi, 1.0);
            let w = &mut noise[k * n..(k + 1) * n];
            densities[k].color(&xi, w);
            let (head, tail) = states.split_at_mut((k + 1) * n);
            let next = &mut tail[..n];
            next.copy_from_slice(w);
            if measure == Measure::Original {
                let h = History {
                    step: k,
                    time: k as f64,
                    dim: n,
                    states: head,
                };
                (dspec.drift)(k, &h, u, &mut f);
                for i in 0..n {
                    next[i] += f[i];
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    path: p,
                    step: k + 1,
                });
            }
        }
        stepper.observe(m, m as f64, n, &states, &mut obs);
        Ok(PathRecord {
            states,
            noise,
            observations: obs,
            controls,
        })
    })?;
    Ok(assemble(
        records,
        grid,
        n,
        d,
        dspec.obs_dims(),
        measure,
        seed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::{compile, InformationStructure};
    use crate::model::InitialLaw;
    use crate::policy::FnPolicy;

    fn scalar(drift_c: f64) -> ProblemSpec {
        ProblemSpec::builder(1, 1.0)
            .agent(ActionBox::symmetric(1, 5.0), ObservationMap::full_state(1))
            .drift(move |_, _, u, out| out[0] = u[0] + 0.0 * drift_c)
            .build()
            .unwrap()
    }

    #[test]
    fn zero_diffusion_keeps_paths_constant() {
        let spec = ProblemSpec::builder(1, 1.0)
            .agent(ActionBox::symmetric(1, 1.0), ObservationMap::full_state(1))
            .constant_diffusion(vec![0.0])
            .initial_law(InitialLaw::Point(vec![1.0]))
            .build()
            .unwrap();
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let b = simulate_reference(&spec, &grid, 20, 3).unwrap();
        assert!(b.states.iter().all(|&x| x == 1.0));
        assert!(b.log_likelihood.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn repeat_runs_are_bit_identical() {
        let spec = scalar(0.0);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let a = simulate_reference(&spec, &grid, 50, 11).unwrap();
        let b = simulate_reference(&spec, &grid, 50, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_reference(&spec, &grid, 50, 12).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn zero_drift_controlled_equals_reference() {
        let spec = scalar(0.0);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let fm = compile(&InformationStructure::all_markov(1), &grid, &[1]).unwrap();
        let zero = FnPolicy::zero(vec![1]);
        let a = simulate_reference(&spec, &grid, 40, 5).unwrap();
        let b = simulate_controlled(&spec, &zero, &fm, &grid, 40, 5).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.noise, b.noise);
    }

    #[test]
    fn observations_match_states_and_observe_is_idempotent() {
        let spec = scalar(0.0);
        let grid = TimeGrid::new(1.0, 6).unwrap();
        let fm = compile(&InformationStructure::all_markov(1), &grid, &[1]).unwrap();
        let pol = FnPolicy::new(vec![1], |_, _, f, out| out[0] = -f[0]);
        let mut b = simulate_controlled(&spec, &pol, &fm, &grid, 30, 9).unwrap();
        assert_eq!(b.observations[0], b.states);
        let before = b.clone();
        observe(&spec, &mut b);
        assert_eq!(before, b);
        assert!(replay_error(&spec, &b) < 1e-12);
        let replayed = replay_controls(&b, &pol, &fm, &spec.action_boxes).unwrap();
        assert_eq!(replayed, b.controls);
    }

    #[test]
    fn projected_observation_slices_first_coordinate() {
        let spec = ProblemSpec::builder(2, 1.0)
            .agent(
                ActionBox::symmetric(1, 1.0),
                ObservationMap::projected(vec![0]),
            )
            .build()
            .unwrap();
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let b = simulate_reference(&spec, &grid, 4, 1).unwrap();
        assert_eq!(b.obs_dims, vec![1]);
        for p in 0..4 {
            for k in 0..=3 {
                assert_eq!(b.obs_path(0, p)[k], b.state(p, k)[0]);
            }
        }
    }
}
