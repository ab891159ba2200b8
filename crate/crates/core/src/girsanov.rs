//! Likelihood ratios between the controlled and the reference measure, and
//! the team pay-off under either measure.
//!
//! Continuous time: along a reference path the log-ratio grows by
//! `b·σ⁻¹Δx − ½|b|²Δ` per step with `b = σ⁻¹(t_k, x_k) f(t_k, x_k, u_k)`.
//! Accumulating the exponent rather than `Λ` itself keeps every weight
//! positive. Discrete time: `Λ` is the exact product of Gaussian density
//! ratios `λ(x(k+1) − f) / λ(x(k+1))`.

use alloc::vec;
use alloc::vec::Vec;

use crate::info::FeatureMap;
use crate::math::{dot, exp};
use crate::model::{DiscreteTeamSpec, GaussianStep, History, ProblemSpec, TimeGrid};
use crate::par;
use crate::paths::{self, Measure, PathBundle};
use crate::policy::TeamPolicy;
use crate::rng;
use crate::stats::MeanSe;
use crate::{Error, Result};

fn require(bundle: &PathBundle, measure: Measure) -> Result<()> {
    if bundle.measure == measure {
        Ok(())
    } else {
        Err(Error::WrongMeasure {
            expected: measure.name(),
        })
    }
}

/// `b_k = σ⁻¹ f` for every path and step of a bundle with the given joint
/// controls, laid out `P × M × n`.
pub fn drift_ratios(spec: &ProblemSpec, bundle: &PathBundle, controls: &[f64]) -> Result<Vec<f64>> {
    let n = bundle.state_dim;
    let m = bundle.num_steps();
    let d = bundle.action_dim;
    let rows = par::try_map_indexed(bundle.num_paths, |p| {
        let mut out = vec![0.0; m * n];
        let mut f = vec![0.0; n];
        for k in 0..m {
            let t = bundle.grid.time(k);
            let x = bundle.state(p, k);
            let u = &controls[(p * m + k) * d..(p * m + k + 1) * d];
            (spec.drift)(t, x, u, &mut f);
            let b = spec.diffusion_factor(t, x)?.solve(&f);
            out[k * n..(k + 1) * n].copy_from_slice(&b);
        }
        Ok(out)
    })?;
    Ok(rows.concat())
}

/// `σ⁻¹(t_k, x_k)(x_{k+1} − x_k)` for every path and step, `P × M × n`.
/// On a reference bundle this is the Brownian increment `ΔW_k`.
pub fn whitened_increments(spec: &ProblemSpec, bundle: &PathBundle) -> Result<Vec<f64>> {
    let n = bundle.state_dim;
    let m = bundle.num_steps();
    let rows = par::try_map_indexed(bundle.num_paths, |p| {
        let mut out = vec![0.0; m * n];
        let mut dx = vec![0.0; n];
        for k in 0..m {
            let t = bundle.grid.time(k);
            let x = bundle.state(p, k);
            for (i, v) in dx.iter_mut().enumerate() {
                *v = bundle.state(p, k + 1)[i] - x[i];
            }
            let y = spec.diffusion_factor(t, x)?.solve(&dx);
            out[k * n..(k + 1) * n].copy_from_slice(&y);
        }
        Ok(out)
    })?;
    Ok(rows.concat())
}

/// Log-likelihood paths `P × (M+1)` of a reference bundle for arbitrary
/// joint controls `P × M × d`.
pub fn log_likelihood_for_controls(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    controls: &[f64],
) -> Result<Vec<f64>> {
    require(bundle, Measure::Reference)?;
    let b = drift_ratios(spec, bundle, controls)?;
    let dw = whitened_increments(spec, bundle)?;
    Ok(log_likelihood_from_ratios(bundle, &b, &dw))
}

pub(crate) fn log_likelihood_from_ratios(bundle: &PathBundle, b: &[f64], dw: &[f64]) -> Vec<f64> {
    let n = bundle.state_dim;
    let m = bundle.num_steps();
    let dt = bundle.grid.step();
    let mut out = vec![0.0; bundle.num_paths * (m + 1)];
    for p in 0..bundle.num_paths {
        let mut acc = 0.0;
        for k in 0..m {
            let off = (p * m + k) * n;
            let bk = &b[off..off + n];
            acc += dot(bk, &dw[off..off + n]) - 0.5 * dot(bk, bk) * dt;
            out[p * (m + 1) + k + 1] = acc;
        }
    }
    out
}

/// Replays `policy` along a reference bundle, stores the resulting controls
/// and fills `log_likelihood` with `log Λ(t_k)`.
pub fn accumulate_likelihood(
    spec: &ProblemSpec,
    bundle: &mut PathBundle,
    policy: &dyn TeamPolicy,
    fm: &FeatureMap,
) -> Result<()> {
    require(bundle, Measure::Reference)?;
    let controls = paths::replay_controls(bundle, policy, fm, &spec.action_boxes)?;
    bundle.log_likelihood = log_likelihood_for_controls(spec, bundle, &controls)?;
    bundle.controls = controls;
    Ok(())
}

/// Exact discrete-time likelihood ratio along a reference bundle; stores
/// controls and fills `log_likelihood`.
pub fn discrete_likelihood(
    dspec: &DiscreteTeamSpec,
    bundle: &mut PathBundle,
    policy: &dyn TeamPolicy,
    fm: &FeatureMap,
) -> Result<()> {
    require(bundle, Measure::Reference)?;
    let densities = dspec.validate()?;
    let controls = paths::replay_controls(bundle, policy, fm, &dspec.action_boxes)?;
    bundle.log_likelihood =
        discrete_log_likelihood_for_controls(dspec, &densities, bundle, &controls);
    bundle.controls = controls;
    Ok(())
}

pub(crate) fn discrete_log_likelihood_for_controls(
    dspec: &DiscreteTeamSpec,
    densities: &[GaussianStep],
    bundle: &PathBundle,
    controls: &[f64],
) -> Vec<f64> {
    let n = bundle.state_dim;
    let m = bundle.num_steps();
    let d = bundle.action_dim;
    let rows = par::map_indexed(bundle.num_paths, |p| {
        let mut out = vec![0.0; m + 1];
        let mut f = vec![0.0; n];
        let mut resid = vec![0.0; n];
        for k in 0..m {
            let h = History {
                step: k,
                time: k as f64,
                dim: n,
                states: &bundle.path_states(p)[..(k + 1) * n],
            };
            let u = &controls[(p * m + k) * d..(p * m + k + 1) * d];
            (dspec.drift)(k, &h, u, &mut f);
            let next = bundle.state(p, k + 1);
            for i in 0..n {
                resid[i] = next[i] - f[i];
            }
            out[k + 1] = out[k]
                + 0.5 * (densities[k].mahalanobis_sq(next) - densities[k].mahalanobis_sq(&resid));
        }
        out
    });
    rows.concat()
}

/// `ρ = Λ⁻¹` pathwise, `P × (M+1)`.
pub fn inverse_likelihood(bundle: &PathBundle) -> Vec<f64> {
    bundle.log_likelihood.iter().map(|l| exp(-l)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointDiagnostics {
    pub step: usize,
    pub time: f64,
    pub mean: f64,
    pub se: f64,
    pub ess: f64,
    pub max_log_likelihood: f64,
    /// `|mean − 1| ≤ 3·SE`.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodDiagnostics {
    pub checkpoints: Vec<CheckpointDiagnostics>,
    pub num_paths: usize,
    /// Effective sample size `(ΣΛ)²/ΣΛ²` at the horizon.
    pub ess: f64,
    pub max_log_likelihood: f64,
    /// ESS at the horizon fell below `0.1·P`.
    pub degenerate: bool,
}

impl LikelihoodDiagnostics {
    pub fn pass(&self) -> bool {
        self.checkpoints.iter().all(|c| c.pass)
    }
}

/// Effective sample size of weights given by their logarithms.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let shift = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return 0.0;
    }
    let (s1, s2) = log_weights.iter().fold((0.0, 0.0), |(a, b), l| {
        let w = exp(l - shift);
        (a + w, b + w * w)
    });
    s1 * s1 / s2
}

/// Mean, SE and ESS of `Λ(t_k)` at the given steps.
pub fn martingale_check(bundle: &PathBundle, checkpoints: &[usize]) -> LikelihoodDiagnostics {
    let m = bundle.num_steps();
    let column = |k: usize| -> Vec<f64> {
        (0..bundle.num_paths)
            .map(|p| bundle.log_likelihood(p, k))
            .collect()
    };
    let checkpoints: Vec<CheckpointDiagnostics> = checkpoints
        .iter()
        .map(|&k| {
            let logs = column(k.min(m));
            let lam: Vec<f64> = logs.iter().map(|l| exp(*l)).collect();
            let s = MeanSe::of(&lam);
            CheckpointDiagnostics {
                step: k.min(m),
                time: bundle.grid.time(k.min(m)),
                mean: s.mean,
                se: s.se,
                ess: effective_sample_size(&logs),
                max_log_likelihood: logs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                pass: (s.mean - 1.0).abs() <= 3.0 * s.se,
            }
        })
        .collect();
    let last = column(m);
    let ess = effective_sample_size(&last);
    LikelihoodDiagnostics {
        checkpoints,
        num_paths: bundle.num_paths,
        ess,
        max_log_likelihood: bundle
            .log_likelihood
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
        degenerate: ess < 0.1 * bundle.num_paths as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayoffMeasure {
    ReferenceWeighted,
    OriginalDirect,
}

impl PayoffMeasure {
    pub fn name(&self) -> &'static str {
        match self {
            PayoffMeasure::ReferenceWeighted => "reference-weighted",
            PayoffMeasure::OriginalDirect => "original-direct",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffEstimate {
    pub value: f64,
    pub se: f64,
    pub measure_used: PayoffMeasure,
    pub num_paths: usize,
}

impl PayoffEstimate {
    fn from_samples(samples: &[f64], measure_used: PayoffMeasure) -> Self {
        let s = MeanSe::of(samples);
        Self {
            value: s.mean,
            se: s.se,
            measure_used,
            num_paths: samples.len(),
        }
    }
}

/// Realized cost `Σ_k ℓ(t_k, x_k, u_k) Δ + φ(x_M)` of every path.
pub fn path_costs(spec: &ProblemSpec, bundle: &PathBundle) -> Vec<f64> {
    let m = bundle.num_steps();
    let dt = bundle.grid.step();
    par::map_indexed(bundle.num_paths, |p| {
        let mut acc = 0.0;
        for k in 0..m {
            acc += (spec.running_cost)(
                bundle.grid.time(k),
                bundle.state(p, k),
                bundle.control(p, k),
            ) * dt;
        }
        acc + (spec.terminal_cost)(bundle.state(p, m))
    })
}

/// `Σ_k Λ(t_k) ℓ_k Δ + Λ(T) φ(x_M)` of every path.
pub fn weighted_path_costs(spec: &ProblemSpec, bundle: &PathBundle) -> Vec<f64> {
    let m = bundle.num_steps();
    let dt = bundle.grid.step();
    par::map_indexed(bundle.num_paths, |p| {
        let mut acc = 0.0;
        for k in 0..m {
            let l = (spec.running_cost)(
                bundle.grid.time(k),
                bundle.state(p, k),
                bundle.control(p, k),
            );
            acc += exp(bundle.log_likelihood(p, k)) * l * dt;
        }
        acc + exp(bundle.log_likelihood(p, m)) * (spec.terminal_cost)(bundle.state(p, m))
    })
}

/// Λ-weighted pay-off on a reference bundle whose controls and likelihood
/// were filled by [`accumulate_likelihood`].
pub fn payoff_reference(spec: &ProblemSpec, bundle: &PathBundle) -> Result<PayoffEstimate> {
    require(bundle, Measure::Reference)?;
    Ok(PayoffEstimate::from_samples(
        &weighted_path_costs(spec, bundle),
        PayoffMeasure::ReferenceWeighted,
    ))
}

/// Direct pay-off on a controlled bundle.
pub fn payoff_original(spec: &ProblemSpec, bundle: &PathBundle) -> Result<PayoffEstimate> {
    require(bundle, Measure::Original)?;
    Ok(PayoffEstimate::from_samples(
        &path_costs(spec, bundle),
        PayoffMeasure::OriginalDirect,
    ))
}

/// Realized discrete-time cost `Σ_{k<T} ℓ(k, x(k), u(k)) + φ(x(T))`.
pub fn discrete_path_costs(dspec: &DiscreteTeamSpec, bundle: &PathBundle) -> Vec<f64> {
    let m = bundle.num_steps();
    par::map_indexed(bundle.num_paths, |p| {
        let mut acc = 0.0;
        for k in 0..m {
            acc += (dspec.running_cost)(k, bundle.state(p, k), bundle.control(p, k));
        }
        acc + (dspec.terminal_cost)(bundle.state(p, m))
    })
}

/// `Λ_{0,T}·(Σℓ + φ)` averaged over a reference bundle filled by
/// [`discrete_likelihood`]; a single terminal weight multiplies the whole
/// cost.
pub fn discrete_payoff_reference(
    dspec: &DiscreteTeamSpec,
    bundle: &PathBundle,
) -> Result<PayoffEstimate> {
    require(bundle, Measure::Reference)?;
    let m = bundle.num_steps();
    let costs = discrete_path_costs(dspec, bundle);
    let weighted: Vec<f64> = costs
        .iter()
        .enumerate()
        .map(|(p, c)| exp(bundle.log_likelihood(p, m)) * c)
        .collect();
    Ok(PayoffEstimate::from_samples(
        &weighted,
        PayoffMeasure::ReferenceWeighted,
    ))
}

pub fn discrete_payoff_original(
    dspec: &DiscreteTeamSpec,
    bundle: &PathBundle,
) -> Result<PayoffEstimate> {
    require(bundle, Measure::Original)?;
    Ok(PayoffEstimate::from_samples(
        &discrete_path_costs(dspec, bundle),
        PayoffMeasure::OriginalDirect,
    ))
}

/// Simulates under the reference measure and returns the Λ-weighted pay-off
/// together with the filled bundle.
pub fn evaluate_reference(
    spec: &ProblemSpec,
    policy: &dyn TeamPolicy,
    fm: &FeatureMap,
    grid: &TimeGrid,
    num_paths: usize,
    seed: u64,
) -> Result<(PayoffEstimate, PathBundle)> {
    let mut bundle = paths::simulate_reference(spec, grid, num_paths, seed)?;
    accumulate_likelihood(spec, &mut bundle, policy, fm)?;
    Ok((payoff_reference(spec, &bundle)?, bundle))
}

pub fn evaluate_original(
    spec: &ProblemSpec,
    policy: &dyn TeamPolicy,
    fm: &FeatureMap,
    grid: &TimeGrid,
    num_paths: usize,
    seed: u64,
) -> Result<(PayoffEstimate, PathBundle)> {
    let bundle = paths::simulate_controlled(spec, policy, fm, grid, num_paths, seed)?;
    Ok((payoff_original(spec, &bundle)?, bundle))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    pub reference: PayoffEstimate,
    pub original: PayoffEstimate,
    pub gap: f64,
    pub combined_se: f64,
    /// `|gap| ≤ 3·combined SE`.
    pub pass: bool,
}

/// Pay-off of `policy` under both measures on independent ensembles (the
/// original-measure ensemble uses a seed derived from `seed`).
pub fn equivalence_test(
    spec: &ProblemSpec,
    policy: &dyn TeamPolicy,
    fm: &FeatureMap,
    grid: &TimeGrid,
    num_paths: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    equivalence_test_with(
        spec,
        (policy, seed),
        (policy, rng::derive_seed(seed, 1)),
        fm,
        grid,
        num_paths,
    )
}

/// General form: the reference-weighted estimate uses `reference.0` on
/// seed `reference.1`, the direct estimate `original.0` on seed
/// `original.1`.
pub fn equivalence_test_with(
    spec: &ProblemSpec,
    reference: (&dyn TeamPolicy, u64),
    original: (&dyn TeamPolicy, u64),
    fm: &FeatureMap,
    grid: &TimeGrid,
    num_paths: usize,
) -> Result<EquivalenceReport> {
    let (r, _) = evaluate_reference(spec, reference.0, fm, grid, num_paths, reference.1)?;
    let (o, _) = evaluate_original(spec, original.0, fm, grid, num_paths, original.1)?;
    let gap = r.value - o.value;
    let combined_se = crate::math::sqrt(r.se * r.se + o.se * o.se);
    Ok(EquivalenceReport {
        reference: r,
        original: o,
        gap,
        combined_se,
        pass: gap.abs() <= 3.0 * combined_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::{compile, InformationStructure};
    use crate::model::{ActionBox, InitialLaw, ObservationMap};
    use crate::policy::FnPolicy;

    fn constant_drift(c: f64) -> ProblemSpec {
        ProblemSpec::builder(1, 1.0)
            .agent(ActionBox::symmetric(1, 10.0), ObservationMap::full_state(1))
            .drift(move |_, _, _, out| out[0] = c)
            .build()
            .unwrap()
    }

    fn markov(grid: &TimeGrid) -> FeatureMap {
        compile(&InformationStructure::all_markov(1), grid, &[1]).unwrap()
    }

    #[test]
    fn zero_drift_gives_unit_ratio() {
        let spec = constant_drift(0.0);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let mut b = paths::simulate_reference(&spec, &grid, 30, 1).unwrap();
        accumulate_likelihood(&spec, &mut b, &FnPolicy::zero(vec![1]), &markov(&grid)).unwrap();
        assert!(b.log_likelihood.iter().all(|&l| l == 0.0));
        let diag = martingale_check(&b, &[5, 10]);
        assert!(diag.pass());
        assert_eq!(diag.checkpoints[0].se, 0.0);
        assert!(inverse_likelihood(&b).iter().all(|&r| r == 1.0));
    }

    #[test]
    fn constant_drift_single_step_closed_form() {
        let spec = constant_drift(1.0);
        let grid = TimeGrid::new(1.0, 1).unwrap();
        let mut b = paths::simulate_reference(&spec, &grid, 3, 2).unwrap();
        // overwrite to Δx = 0
        for p in 0..3 {
            b.states[p * 2 + 1] = b.states[p * 2];
        }
        accumulate_likelihood(&spec, &mut b, &FnPolicy::zero(vec![1]), &markov(&grid)).unwrap();
        for p in 0..3 {
            assert!((exp(b.log_likelihood(p, 1)) - (-0.5f64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_times_ratio_is_one() {
        let spec = ProblemSpec::builder(1, 1.0)
            .agent(ActionBox::symmetric(1, 10.0), ObservationMap::full_state(1))
            .drift(|_, x, _, out| out[0] = x[0].tanh())
            .build()
            .unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let mut b = paths::simulate_reference(&spec, &grid, 200, 3).unwrap();
        accumulate_likelihood(&spec, &mut b, &FnPolicy::zero(vec![1]), &markov(&grid)).unwrap();
        let rho = inverse_likelihood(&b);
        for (l, r) in b.log_likelihood.iter().zip(&rho) {
            assert!((exp(*l) * r - 1.0).abs() < 1e-12);
        }
        assert!(b.log_likelihood.iter().any(|&l| l != 0.0));
    }

    #[test]
    fn heavy_drift_triggers_degeneracy_warning() {
        let spec = constant_drift(5.0);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let mut b = paths::simulate_reference(&spec, &grid, 200, 4).unwrap();
        accumulate_likelihood(&spec, &mut b, &FnPolicy::zero(vec![1]), &markov(&grid)).unwrap();
        assert!(martingale_check(&b, &[10]).degenerate);
    }

    #[test]
    fn wrong_measure_is_rejected() {
        let spec = constant_drift(0.0);
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let fm = markov(&grid);
        let pol = FnPolicy::zero(vec![1]);
        let mut b = paths::simulate_controlled(&spec, &pol, &fm, &grid, 5, 1).unwrap();
        assert!(matches!(
            accumulate_likelihood(&spec, &mut b, &pol, &fm),
            Err(Error::WrongMeasure { .. })
        ));
        assert!(payoff_reference(&spec, &b).is_err());
    }

    #[test]
    fn payoff_conventions() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let fm = markov(&grid);
        let spec = ProblemSpec::builder(1, 1.0)
            .agent(ActionBox::symmetric(1, 10.0), ObservationMap::full_state(1))
            .drift(|_, _, u, out| out[0] = u[0])
            .running_cost(|_, _, u| u[0] * u[0])
            .terminal_cost(|_| 3.0)
            .build()
            .unwrap();
        let c = 0.7;
        let pol = FnPolicy::new(vec![1], move |_, _, _, out| out[0] = c);
        let (o, _) = evaluate_original(&spec, &pol, &fm, &grid, 50, 9).unwrap();
        assert!((o.value - (c * c + 3.0)).abs() < 1e-12);
        assert!(o.se < 1e-12);
        let unit = ProblemSpec::builder(1, 1.0)
            .agent(ActionBox::symmetric(1, 10.0), ObservationMap::full_state(1))
            .running_cost(|_, _, _| 1.0)
            .build()
            .unwrap();
        let (r, _) =
            evaluate_reference(&unit, &FnPolicy::zero(vec![1]), &fm, &grid, 20, 1).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_drift_equivalence_with_equal_seeds_has_no_gap() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let fm = markov(&grid);
        let spec = ProblemSpec::builder(1, 1.0)
            .agent(ActionBox::symmetric(1, 10.0), ObservationMap::full_state(1))
            .running_cost(|_, x, _| x[0] * x[0])
            .terminal_cost(|x| x[0].abs())
            .build()
            .unwrap();
        let pol = FnPolicy::zero(vec![1]);
        let r = equivalence_test_with(&spec, (&pol, 5), (&pol, 5), &fm, &grid, 100).unwrap();
        assert_eq!(r.gap, 0.0);
        assert!(r.pass);
    }

    fn scalar_discrete(
        steps: usize,
        drift: impl Fn(usize, &History<'_>, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> DiscreteTeamSpec {
        DiscreteTeamSpec {
            state_dim: 1,
            action_dims: vec![1],
            action_boxes: vec![ActionBox::symmetric(1, 10.0)],
            horizon_steps: steps,
            drift: alloc::sync::Arc::new(drift),
            noise_factors: vec![vec![1.0]; steps],
            observations: vec![ObservationMap::full_state(1)],
            running_cost: alloc::sync::Arc::new(|_, _, _| 0.0),
            terminal_cost: alloc::sync::Arc::new(|x| x[0] * x[0]),
            initial_law: InitialLaw::Point(vec![0.0]),
        }
    }

    #[test]
    fn discrete_ratio_closed_form() {
        let dspec = scalar_discrete(1, |_, _, _, out| out[0] = 1.0);
        let grid = dspec.grid();
        let fm = markov(&grid);
        let pol = FnPolicy::zero(vec![1]);
        let mut b = paths::simulate_discrete(&dspec, &pol, &fm, 4, 1, Measure::Reference).unwrap();
        b.states[1] = 1.0;
        discrete_likelihood(&dspec, &mut b, &pol, &fm).unwrap();
        assert!((b.log_likelihood(0, 1) - 0.5).abs() < 1e-15);
        for p in 1..4 {
            let x = b.state(p, 1)[0];
            assert!((b.log_likelihood(p, 1) - (x - 0.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn discrete_second_factor_is_unit_when_second_drift_vanishes() {
        let dspec = scalar_discrete(2, |k, _, _, out| out[0] = if k == 0 { 0.8 } else { 0.0 });
        let grid = dspec.grid();
        let fm = markov(&grid);
        let pol = FnPolicy::zero(vec![1]);
        let mut b = paths::simulate_discrete(&dspec, &pol, &fm, 50, 2, Measure::Reference).unwrap();
        discrete_likelihood(&dspec, &mut b, &pol, &fm).unwrap();
        for p in 0..50 {
            assert_eq!(b.log_likelihood(p, 1), b.log_likelihood(p, 2));
        }
    }

    #[test]
    fn discrete_ratio_times_reference_density_is_transition_density() {
        let dspec = scalar_discrete(3, |k, h, u, out| {
            out[0] = 0.5 * h.current()[0] + u[0] + 0.1 * k as f64
        });
        let grid = dspec.grid();
        let fm = markov(&grid);
        let pol = FnPolicy::new(vec![1], |_, _, z, out| out[0] = (z[0]).sin());
        let dens = dspec.reference_densities().unwrap();
        let mut b = paths::simulate_discrete(&dspec, &pol, &fm, 40, 3, Measure::Reference).unwrap();
        discrete_likelihood(&dspec, &mut b, &pol, &fm).unwrap();
        for p in 0..40 {
            let mut lhs = b.log_likelihood(p, 3);
            let mut rhs = 0.0;
            for k in 0..3 {
                let x = b.state(p, k)[0];
                let u = (x).sin();
                let f = 0.5 * x + u + 0.1 * k as f64;
                let next = b.state(p, k + 1)[0];
                lhs += dens[k].log_density(&[next]);
                rhs += dens[k].log_density(&[next - f]);
            }
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
