//! Person-by-person optimization and its certificates.
//!
//! Given the adjoint pair `(Ψ, Q)` of the current profile, the first-order
//! condition of agent `i` is that the conditional Hamiltonian gradient
//! `gⁱ = Ê[∂ℍ/∂uⁱ | agent-i features]` vanishes (or points out of the action
//! box). Best responses follow a curvature-scaled gradient in the agent's
//! policy parameters with a common-random-number line search, cycling
//! through the agents. Candidate optima are certified by Hamiltonian probe
//! gaps, value-process regressions and a comparison of conditional
//! cost-to-go under unilateral deviations.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::basis::Basis;
use crate::fbsde::{self, AdjointPath};
use crate::girsanov::{self, PayoffEstimate};
use crate::info::FeatureMap;
use crate::linalg;
use crate::math::sqrt;
use crate::model::{ProblemSpec, TimeGrid};
use crate::par;
use crate::paths::{self, PathBundle};
use crate::policy::{Deviation, FnPolicy, PolicyProfile, TeamPolicy};
use crate::regression::{Design, Regressor};
use crate::stats::{self, MeanSe};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PbpOptions {
    pub num_paths: usize,
    /// Seed of the common random numbers used by every evaluation.
    pub seed: u64,
    /// Regression basis on the state for the adjoint equation.
    pub bsde_basis: Basis,
    pub max_cycles: usize,
    /// Convergence threshold on every agent's integrated VI residual.
    pub tol: f64,
    /// Best-response steps per agent and cycle.
    pub inner_iterations: usize,
    pub initial_step: f64,
    pub max_backtracks: usize,
    /// Agent update order; `None` means `0..N`.
    pub agent_order: Option<Vec<usize>>,
    /// Size of the gradient-step probes in [`team_residual`].
    pub probe_step: f64,
}

impl Default for PbpOptions {
    fn default() -> Self {
        Self {
            num_paths: 20_000,
            seed: 0,
            bsde_basis: Basis::QUADRATIC,
            max_cycles: 20,
            tol: 1e-3,
            inner_iterations: 1,
            initial_step: 1.0,
            max_backtracks: 6,
            agent_order: None,
            probe_step: 0.25,
        }
    }
}

/// Pointwise `∂ℍ/∂uⁱ` and `∂²ℍ/∂(uⁱ_c)²` along a controlled bundle,
/// `P × M × dᵢ` each.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSensitivity {
    pub agent: usize,
    pub action_dim: usize,
    pub gradient: Vec<f64>,
    pub curvature: Vec<f64>,
}

/// Central differences of `ℍ(t_k, x_k, Q_k, ·)` in agent `agent`'s action
/// coordinates, holding the other agents' actions at their bundle values.
pub fn hamiltonian_sensitivity(
    spec: &ProblemSpec,
    adjoint: &AdjointPath,
    bundle: &PathBundle,
    agent: usize,
) -> Result<HamiltonianSensitivity> {
    let m = bundle.num_steps();
    let range = spec.action_range(agent);
    let di = range.len();
    let rows = par::try_map_indexed(bundle.num_paths, |p| {
        let mut g = vec![0.0; m * di];
        let mut c2 = vec![0.0; m * di];
        let mut u = vec![0.0; bundle.action_dim];
        let mut f = vec![0.0; bundle.state_dim];
        for k in 0..m {
            let t = bundle.grid.time(k);
            let x = bundle.state(p, k);
            let q = adjoint.q(p, k);
            let sigma = spec.diffusion_factor(t, x)?;
            let mut ham = |u: &[f64]| {
                (spec.drift)(t, x, u, &mut f);
                (spec.running_cost)(t, x, u) + crate::math::dot(q, &sigma.solve(&f))
            };
            u.copy_from_slice(bundle.control(p, k));
            let h0 = ham(&u);
            for c in 0..di {
                let j = range.start + c;
                let base = u[j];
                let h = 1e-5 * (1.0 + base.abs());
                u[j] = base + h;
                let up = ham(&u);
                u[j] = base - h;
                let down = ham(&u);
                let h2 = 1e-3 * (1.0 + base.abs());
                u[j] = base + h2;
                let up2 = ham(&u);
                u[j] = base - h2;
                let down2 = ham(&u);
                u[j] = base;
                g[k * di + c] = (up - down) / (2.0 * h);
                c2[k * di + c] = (up2 - 2.0 * h0 + down2) / (h2 * h2);
            }
        }
        Ok((g, c2))
    })?;
    let (mut gradient, mut curvature) = (Vec::new(), Vec::new());
    for (g, c) in rows {
        gradient.extend(g);
        curvature.extend(c);
    }
    Ok(HamiltonianSensitivity {
        agent,
        action_dim: di,
        gradient,
        curvature,
    })
}

/// Agent features at step `k` of every path, concatenated.
fn feature_column(bundle: &PathBundle, fm: &FeatureMap, agent: usize, k: usize) -> Vec<f64> {
    par::map_indexed(bundle.num_paths, |p| {
        let mut f = Vec::new();
        bundle.features(fm, p, agent, k, &mut f);
        f
    })
    .concat()
}

/// `ĝⁱ_k = Ê[∂ℍ/∂uⁱ | agent-i features at t_k]` for every decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGradient {
    pub agent: usize,
    pub basis: Basis,
    /// `regressors[k][c]` for step `k` and action coordinate `c`.
    pub regressors: Vec<Vec<Regressor>>,
    /// Fitted values `P × M × dᵢ`.
    pub fitted: Vec<f64>,
    pub raw: HamiltonianSensitivity,
}

pub fn conditional_hamiltonian_gradient(
    spec: &ProblemSpec,
    agent: usize,
    adjoint: &AdjointPath,
    bundle: &PathBundle,
    fm: &FeatureMap,
    basis: Basis,
) -> Result<ConditionalGradient> {
    let raw = hamiltonian_sensitivity(spec, adjoint, bundle, agent)?;
    let np = bundle.num_paths;
    let m = bundle.num_steps();
    let di = raw.action_dim;
    let mut regressors = Vec::with_capacity(m);
    let mut fitted = vec![0.0; np * m * di];
    for k in 0..m {
        let feats = feature_column(bundle, fm, agent, k);
        let design = Design::with_samples(&feats, fm.dim(agent, k), np, basis)?;
        let targets: Vec<Vec<f64>> = (0..di)
            .map(|c| {
                (0..np)
                    .map(|p| raw.gradient[(p * m + k) * di + c])
                    .collect()
            })
            .collect();
        let views: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
        let regs = design.fit_many(&views)?;
        for (c, r) in regs.iter().enumerate() {
            for (p, v) in design.fitted(r).into_iter().enumerate() {
                fitted[(p * m + k) * di + c] = v;
            }
        }
        regressors.push(regs);
    }
    Ok(ConditionalGradient {
        agent,
        basis,
        regressors,
        fitted,
        raw,
    })
}

/// `rⁱ_k = Ê[ĝ·(u − proj(u − ĝ))]` per step (nonnegative, zero exactly at
/// a projected stationary point) and its time integral `Σ_k rⁱ_k Δ`.
pub fn vi_residual(
    spec: &ProblemSpec,
    cg: &ConditionalGradient,
    bundle: &PathBundle,
) -> (f64, Vec<f64>) {
    let m = bundle.num_steps();
    let di = cg.raw.action_dim;
    let range = spec.action_range(cg.agent);
    let bx = &spec.action_boxes[cg.agent];
    let per_step: Vec<f64> = (0..m)
        .map(|k| {
            let total: f64 = (0..bundle.num_paths)
                .map(|p| {
                    let u = &bundle.control(p, k)[range.clone()];
                    (0..di)
                        .map(|c| {
                            let g = cg.fitted[(p * m + k) * di + c];
                            let moved = (u[c] - g).clamp(bx.lo[c], bx.hi[c]);
                            g * (u[c] - moved)
                        })
                        .sum::<f64>()
                })
                .sum();
            total / bundle.num_paths as f64
        })
        .collect();
    let integral = per_step.iter().sum::<f64>() * bundle.grid.step();
    (integral, per_step)
}

/// Gradient of the pay-off in agent `i`'s policy parameters and the
/// curvature-scaled descent direction.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub agent: usize,
    /// `∂J/∂θⁱ = E[Σ_k Δ ∂ℍ/∂uⁱ · ∂uⁱ/∂θⁱ]`.
    pub gradient: Vec<f64>,
    /// `−G⁻¹ ∂J/∂θⁱ` with `G = E[Σ_k Δ ∂²ℍ basis basisᵀ]` per block.
    pub direction: Vec<f64>,
}

fn assemble_policy_gradient(
    profile: &PolicyProfile,
    agent: usize,
    sens: &HamiltonianSensitivity,
    bundle: &PathBundle,
    fm: &FeatureMap,
) -> Result<PolicyGradient> {
    let m = bundle.num_steps();
    let np = bundle.num_paths;
    let di = sens.action_dim;
    let dt = bundle.grid.step();
    let nparams = profile.params(agent).len();
    let segments = profile.num_segments(agent);
    // block (s, c) of the preconditioner has side basis_len(s)
    let mut block_offsets = Vec::with_capacity(segments * di);
    let mut total = 0;
    for s in 0..segments {
        let w = profile.basis_len(agent, s);
        for _ in 0..di {
            block_offsets.push(total);
            total += w * w;
        }
    }
    // curvature weights are used only if the Hamiltonian is curved in uⁱ
    let mean_curv =
        sens.curvature.iter().map(|c| c.max(0.0)).sum::<f64>() / sens.curvature.len().max(1) as f64;
    let use_curv = mean_curv > 1e-8;
    let sums = par::sum_indexed(np, nparams + total, |p, acc| {
        let views = bundle.obs_views(p);
        let mut feats = Vec::new();
        let mut basis = Vec::new();
        let mut u = vec![0.0; di];
        let mut clamped = vec![false; di];
        let (grad, pre) = acc.split_at_mut(nparams);
        for k in 0..m {
            fm.extract_into(&views, agent, k, &mut feats);
            profile.act_detailed(agent, k, &feats, &mut basis, &mut u, &mut clamped);
            let s = profile.segment_of(agent, k);
            let range = profile.segment_range(agent, s);
            let w = basis.len();
            for c in 0..di {
                if clamped[c] {
                    continue;
                }
                let g = sens.gradient[(p * m + k) * di + c];
                let weight = if use_curv {
                    sens.curvature[(p * m + k) * di + c].max(0.0)
                } else {
                    1.0
                };
                let row = &mut grad[range.start + c * w..range.start + (c + 1) * w];
                for (r, b) in row.iter_mut().zip(&basis) {
                    *r += dt * g * b;
                }
                let blk = &mut pre[block_offsets[s * di + c]..block_offsets[s * di + c] + w * w];
                for a in 0..w {
                    for b in 0..w {
                        blk[a * w + b] += dt * weight * basis[a] * basis[b];
                    }
                }
            }
        }
    });
    let scale = 1.0 / np as f64;
    let gradient: Vec<f64> = sums[..nparams].iter().map(|v| v * scale).collect();
    let mut direction = vec![0.0; nparams];
    for s in 0..segments {
        let w = profile.basis_len(agent, s);
        let range = profile.segment_range(agent, s);
        for c in 0..di {
            let off = nparams + block_offsets[s * di + c];
            let gram: Vec<f64> = sums[off..off + w * w].iter().map(|v| v * scale).collect();
            let rhs = gradient[range.start + c * w..range.start + (c + 1) * w].to_vec();
            let trace: f64 = (0..w).map(|i| gram[i * w + i]).sum();
            if !(trace > 0.0) {
                continue;
            }
            let (sol, _) = linalg::solve_normal_equations(w, &gram, &[rhs])?;
            for (j, v) in sol[0].iter().enumerate() {
                direction[range.start + c * w + j] = -v;
            }
        }
    }
    Ok(PolicyGradient {
        agent,
        gradient,
        direction,
    })
}

/// Adjoint-based gradient of the pay-off in agent `i`'s parameters,
/// evaluated on a controlled bundle with seed `seed`.
pub fn policy_gradient(
    spec: &ProblemSpec,
    profile: &PolicyProfile,
    agent: usize,
    fm: &FeatureMap,
    grid: &TimeGrid,
    num_paths: usize,
    seed: u64,
    bsde_basis: Basis,
) -> Result<PolicyGradient> {
    let bundle = paths::simulate_controlled(spec, profile, fm, grid, num_paths, seed)?;
    let adjoint = fbsde::solve_bsde(spec, &bundle, bsde_basis)?;
    let sens = hamiltonian_sensitivity(spec, &adjoint, &bundle, agent)?;
    assemble_policy_gradient(profile, agent, &sens, &bundle, fm)
}

fn payoff(
    spec: &ProblemSpec,
    policy: &dyn TeamPolicy,
    fm: &FeatureMap,
    grid: &TimeGrid,
    opts: &PbpOptions,
) -> Result<PayoffEstimate> {
    Ok(girsanov::evaluate_original(spec, policy, fm, grid, opts.num_paths, opts.seed)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub agent: usize,
    /// Updated `θⁱ` (unchanged when the line search failed).
    pub params: Vec<f64>,
    pub payoff_before: PayoffEstimate,
    pub payoff_after: f64,
    pub step: f64,
    pub line_search_failed: bool,
    /// Integrated VI residual of the agent before the update.
    pub residual: f64,
    pub residual_per_step: Vec<f64>,
    pub gradient_norm: f64,
    pub evaluations: usize,
}

/// One best-response step of `agent` holding the other agents fixed.
pub fn pbp_best_response(
    agent: usize,
    spec: &ProblemSpec,
    profile: &PolicyProfile,
    fm: &FeatureMap,
    grid: &TimeGrid,
    opts: &PbpOptions,
) -> Result<BestResponse> {
    let bundle = paths::simulate_controlled(spec, profile, fm, grid, opts.num_paths, opts.seed)?;
    let before = girsanov::payoff_original(spec, &bundle)?;
    let adjoint = fbsde::solve_bsde(spec, &bundle, opts.bsde_basis)?;
    let cg =
        conditional_hamiltonian_gradient(spec, agent, &adjoint, &bundle, fm, profile.basis(agent))?;
    let (residual, residual_per_step) = vi_residual(spec, &cg, &bundle);
    let pg = assemble_policy_gradient(profile, agent, &cg.raw, &bundle, fm)?;
    let gradient_norm = sqrt(pg.gradient.iter().map(|g| g * g).sum());
    let theta0 = profile.params(agent).to_vec();
    let j0 = before.value;
    let mut trial = profile.clone();
    let mut evaluations = 0;
    let mut eval = |alpha: f64| -> Result<f64> {
        let theta: Vec<f64> = theta0
            .iter()
            .zip(&pg.direction)
            .map(|(t, d)| t + alpha * d)
            .collect();
        trial.set_params(agent, &theta)?;
        evaluations += 1;
        Ok(payoff(spec, &trial, fm, grid, opts)?.value)
    };
    let mut alpha = opts.initial_step;
    let mut accepted: Option<(f64, f64)> = None;
    if pg.direction.iter().any(|d| *d != 0.0) {
        for _ in 0..=opts.max_backtracks {
            let j1 = eval(alpha)?;
            if j1 < j0 {
                let j2 = eval(2.0 * alpha)?;
                let mut best = if j2 < j1 {
                    (2.0 * alpha, j2)
                } else {
                    (alpha, j1)
                };
                let curv = j0 - 2.0 * j1 + j2;
                if curv > 0.0 {
                    let vertex = alpha * (3.0 * j0 - 4.0 * j1 + j2) / (2.0 * curv);
                    if vertex > 0.0
                        && vertex <= 4.0 * alpha
                        && (vertex - alpha).abs() > 1e-12 * alpha
                    {
                        let jv = eval(vertex)?;
                        if jv < best.1 {
                            best = (vertex, jv);
                        }
                    }
                }
                accepted = Some(best);
                break;
            }
            alpha /= 4.0;
        }
    }
    let (params, step, payoff_after, failed) = match accepted {
        Some((a, j)) => (
            theta0
                .iter()
                .zip(&pg.direction)
                .map(|(t, d)| t + a * d)
                .collect(),
            a,
            j,
            false,
        ),
        None => (theta0.clone(), 0.0, j0, true),
    };
    Ok(BestResponse {
        agent,
        params,
        payoff_before: before,
        payoff_after,
        step,
        line_search_failed: failed,
        residual,
        residual_per_step,
        gradient_norm,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub cycle: usize,
    pub agent: usize,
    pub payoff: f64,
    pub residual: f64,
    pub step: f64,
    pub line_search_failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    /// Constant action at a vertex of the agent's box.
    Vertex(usize),
    /// `proj(u − s·ĝ/rms(ĝ))`.
    GradientDescent,
    /// `proj(u + s·ĝ/rms(ĝ))`.
    GradientAscent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGap {
    pub agent: usize,
    pub probe: ProbeKind,
    /// `Ê[Σ_k Δ (ℍ(u^{−i}, probe) − ℍ(u))]`
    pub gap: f64,
    pub se: f64,
    /// `gap ≥ −2·SE`
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentResidual {
    pub agent: usize,
    pub vi_residual: f64,
    pub per_step: Vec<f64>,
    pub probes: Vec<ProbeGap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub agents: Vec<AgentResidual>,
    /// `Σᵢ min(0, smallest probe gap of agent i)`.
    pub team_gap: f64,
    /// Probe with the smallest `gap / SE`.
    pub worst: Option<ProbeGap>,
    pub payoff_trace: Vec<f64>,
    pub iterations: usize,
    pub pass: bool,
}

impl ResidualReport {
    pub fn max_residual(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| a.vi_residual)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualOptions {
    pub probe_step: f64,
    /// Regression basis of `ĝⁱ` per agent; missing entries use the affine
    /// basis.
    pub gradient_basis: Vec<Basis>,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self {
            probe_step: 0.25,
            gradient_basis: Vec::new(),
        }
    }
}

/// Hamiltonian probe gaps of every agent at `policy`, whose controlled
/// bundle and adjoint are given.
pub fn team_residual(
    spec: &ProblemSpec,
    adjoint: &AdjointPath,
    bundle: &PathBundle,
    fm: &FeatureMap,
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    let m = bundle.num_steps();
    let dt = bundle.grid.step();
    let mut agents = Vec::with_capacity(spec.num_agents());
    let mut worst: Option<ProbeGap> = None;
    let mut team_gap = 0.0;
    for agent in 0..spec.num_agents() {
        let basis = opts
            .gradient_basis
            .get(agent)
            .copied()
            .unwrap_or(Basis::AFFINE);
        let cg = conditional_hamiltonian_gradient(spec, agent, adjoint, bundle, fm, basis)?;
        let (vi, per_step) = vi_residual(spec, &cg, bundle);
        let range = spec.action_range(agent);
        let di = range.len();
        let bx = &spec.action_boxes[agent];
        let rms: Vec<f64> = (0..m)
            .map(|k| {
                let s: f64 = (0..bundle.num_paths)
                    .map(|p| {
                        (0..di)
                            .map(|c| {
                                let v = cg.fitted[(p * m + k) * di + c];
                                v * v
                            })
                            .sum::<f64>()
                    })
                    .sum();
                sqrt(s / bundle.num_paths as f64)
            })
            .collect();
        let mut kinds: Vec<ProbeKind> = (0..bx.vertices().len()).map(ProbeKind::Vertex).collect();
        kinds.push(ProbeKind::GradientDescent);
        kinds.push(ProbeKind::GradientAscent);
        let vertices = bx.vertices();
        let mut probes = Vec::with_capacity(kinds.len());
        for kind in kinds {
            let diffs = par::try_map_indexed(bundle.num_paths, |p| {
                let mut acc = 0.0;
                let mut u = vec![0.0; bundle.action_dim];
                for k in 0..m {
                    let t = bundle.grid.time(k);
                    let x = bundle.state(p, k);
                    let q = adjoint.q(p, k);
                    let base = bundle.control(p, k);
                    u.copy_from_slice(base);
                    let slot = &mut u[range.clone()];
                    match kind {
                        ProbeKind::Vertex(v) => slot.copy_from_slice(&vertices[v]),
                        ProbeKind::GradientDescent | ProbeKind::GradientAscent => {
                            if rms[k] == 0.0 {
                                continue;
                            }
                            let sign = if kind == ProbeKind::GradientDescent {
                                -1.0
                            } else {
                                1.0
                            };
                            for c in 0..di {
                                slot[c] += sign * opts.probe_step * cg.fitted[(p * m + k) * di + c]
                                    / rms[k];
                            }
                            bx.project(slot);
                        }
                    }
                    let h_probe = fbsde::hamiltonian(spec, t, x, q, &u)?;
                    let h_base = fbsde::hamiltonian(spec, t, x, q, base)?;
                    acc += dt * (h_probe - h_base);
                }
                Ok(acc)
            })?;
            let s = MeanSe::of(&diffs);
            let gap = ProbeGap {
                agent,
                probe: kind,
                gap: s.mean,
                se: s.se,
                pass: s.mean >= -2.0 * s.se,
            };
            let z = |g: &ProbeGap| {
                if g.se > 0.0 {
                    g.gap / g.se
                } else if g.gap < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                }
            };
            if worst.as_ref().is_none_or(|w| z(&gap) < z(w)) {
                worst = Some(gap.clone());
            }
            probes.push(gap);
        }
        team_gap += probes.iter().map(|g| g.gap).fold(0.0, f64::min);
        agents.push(AgentResidual {
            agent,
            vi_residual: vi,
            per_step,
            probes,
        });
    }
    let pass = agents.iter().all(|a| a.probes.iter().all(|g| g.pass));
    Ok(ResidualReport {
        agents,
        team_gap,
        worst,
        payoff_trace: Vec::new(),
        iterations: 0,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PbpOutcome {
    pub profile: PolicyProfile,
    pub report: ResidualReport,
    pub payoff: PayoffEstimate,
    pub cycles: usize,
    pub converged: bool,
    pub history: Vec<StepRecord>,
}

/// Cyclic best responses until every agent's VI residual (measured before
/// its update) is at most `tol` within one cycle. Each agent's update
/// re-simulates the profile and re-solves the adjoint on the common random
/// numbers. Without convergence the best iterate is returned inside
/// [`Error::MaxCyclesExceeded`]; the loop also stops early when no agent can
/// improve in a full cycle.
pub fn pbp_iterate(
    spec: &ProblemSpec,
    init: &PolicyProfile,
    fm: &FeatureMap,
    grid: &TimeGrid,
    opts: &PbpOptions,
) -> Result<PbpOutcome> {
    let order: Vec<usize> = opts
        .agent_order
        .clone()
        .unwrap_or_else(|| (0..spec.num_agents()).collect());
    if order.iter().any(|&a| a >= spec.num_agents()) {
        return Err(Error::InvalidSpec(
            "agent order names an unknown agent".into(),
        ));
    }
    let mut profile = init.clone();
    let mut history = Vec::new();
    let mut trace = vec![payoff(spec, &profile, fm, grid, opts)?.value];
    let mut converged = false;
    let mut cycles = 0;
    for cycle in 1..=opts.max_cycles {
        cycles = cycle;
        let mut max_residual: f64 = 0.0;
        let mut any_step = false;
        for &agent in &order {
            for inner in 0..opts.inner_iterations.max(1) {
                let br = pbp_best_response(agent, spec, &profile, fm, grid, opts)?;
                if inner == 0 {
                    max_residual = max_residual.max(br.residual);
                }
                if !br.line_search_failed {
                    profile.set_params(agent, &br.params)?;
                    trace.push(br.payoff_after);
                    any_step = true;
                }
                history.push(StepRecord {
                    cycle,
                    agent,
                    payoff: if br.line_search_failed {
                        br.payoff_before.value
                    } else {
                        br.payoff_after
                    },
                    residual: br.residual,
                    step: br.step,
                    line_search_failed: br.line_search_failed,
                });
            }
        }
        if max_residual <= opts.tol {
            converged = true;
            break;
        }
        if !any_step {
            break;
        }
    }
    let bundle = paths::simulate_controlled(spec, &profile, fm, grid, opts.num_paths, opts.seed)?;
    let final_payoff = girsanov::payoff_original(spec, &bundle)?;
    let adjoint = fbsde::solve_bsde(spec, &bundle, opts.bsde_basis)?;
    let ropts = ResidualOptions {
        probe_step: opts.probe_step,
        gradient_basis: (0..spec.num_agents()).map(|i| profile.basis(i)).collect(),
    };
    let mut report = team_residual(spec, &adjoint, &bundle, fm, &ropts)?;
    report.payoff_trace = trace;
    report.iterations = history.len();
    let outcome = PbpOutcome {
        profile,
        report,
        payoff: final_payoff,
        cycles,
        converged,
        history,
    };
    if converged {
        Ok(outcome)
    } else {
        Err(Error::MaxCyclesExceeded {
            best: Box::new(outcome),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerCheck {
    pub step: usize,
    pub mean_value: f64,
    pub mean_psi: f64,
    pub se: f64,
    /// `|mean V − mean Ψ| ≤ 3·SE`
    pub pass: bool,
}

/// `Vⁱ(t_k) = Ê[Ψ_k | agent-i features]` for `k = 0..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    pub agent: usize,
    pub basis: Basis,
    pub regressors: Vec<Regressor>,
    /// RMS over paths of `Vⁱ − Ê[realized cost-to-go | features]` per step.
    pub cross_gap: Vec<f64>,
    pub tower: Vec<TowerCheck>,
}

impl ValueEstimate {
    pub fn predict(&self, k: usize, features: &[f64]) -> f64 {
        self.regressors[k].predict(features)
    }
}

/// Realized cost-to-go `Σ_{j≥k} ℓ_j Δ + φ(x_M)` of every path and step,
/// `P × (M+1)`.
pub fn cost_to_go(spec: &ProblemSpec, bundle: &PathBundle) -> Vec<f64> {
    let m = bundle.num_steps();
    let dt = bundle.grid.step();
    par::map_indexed(bundle.num_paths, |p| {
        let mut out = vec![0.0; m + 1];
        out[m] = (spec.terminal_cost)(bundle.state(p, m));
        for k in (0..m).rev() {
            out[k] = out[k + 1]
                + dt * (spec.running_cost)(
                    bundle.grid.time(k),
                    bundle.state(p, k),
                    bundle.control(p, k),
                );
        }
        out
    })
    .concat()
}

pub fn value_process(
    spec: &ProblemSpec,
    agent: usize,
    adjoint: &AdjointPath,
    bundle: &PathBundle,
    fm: &FeatureMap,
    basis: Basis,
) -> Result<ValueEstimate> {
    let np = bundle.num_paths;
    let m = bundle.num_steps();
    let ctg = cost_to_go(spec, bundle);
    let mut regressors = Vec::with_capacity(m + 1);
    let mut cross_gap = Vec::with_capacity(m + 1);
    let mut tower = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let feats = feature_column(bundle, fm, agent, k);
        let design = Design::with_samples(&feats, fm.dim(agent, k), np, basis)?;
        let psi = adjoint.psi_column(k);
        let realized: Vec<f64> = (0..np).map(|p| ctg[p * (m + 1) + k]).collect();
        let mut regs = design.fit_many(&[&psi, &realized])?;
        let alt = regs.pop().expect("two fits");
        let v = regs.pop().expect("two fits");
        let fitted_v = design.fitted(&v);
        let fitted_alt = design.fitted(&alt);
        cross_gap.push(stats::rmse(&fitted_v, &fitted_alt));
        let sv = MeanSe::of(&fitted_v);
        let sp = MeanSe::of(&psi);
        let se = sv.combined_se(&sp);
        tower.push(TowerCheck {
            step: k,
            mean_value: sv.mean,
            mean_psi: sp.mean,
            se,
            pass: (sv.mean - sp.mean).abs() <= 3.0 * se + 1e-12 * (1.0 + sp.mean.abs()),
        });
        regressors.push(v);
    }
    Ok(ValueEstimate {
        agent,
        basis,
        regressors,
        cross_gap,
        tower,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinComparison {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean of (deviation − candidate) conditional cost-to-go.
    pub mean_difference: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SufficiencyEntry {
    pub probe: usize,
    pub step: usize,
    pub bins: Vec<BinComparison>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SufficiencyReport {
    pub agent: usize,
    pub entries: Vec<SufficiencyEntry>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SufficiencyOptions {
    pub num_paths: usize,
    pub seed: u64,
    pub checkpoints: Vec<usize>,
    pub num_bins: usize,
    pub min_bin_count: usize,
}

/// For each probe law and checkpoint `t_k`, agent `agent` switches to the
/// probe from `t_k` on while everybody else keeps `policy`. Both runs share
/// the noise, so they coincide up to `t_k`; the paired difference of the
/// cost-to-go from `t_k` is compared within quantile bins of the agent's
/// first feature (a single bin when the agent has none).
pub fn sufficiency_check(
    spec: &ProblemSpec,
    policy: &dyn TeamPolicy,
    agent: usize,
    probes: &[&dyn TeamPolicy],
    fm: &FeatureMap,
    grid: &TimeGrid,
    opts: &SufficiencyOptions,
) -> Result<SufficiencyReport> {
    let m = grid.num_steps();
    let base = paths::simulate_controlled(spec, policy, fm, grid, opts.num_paths, opts.seed)?;
    let base_ctg = cost_to_go(spec, &base);
    let mut entries = Vec::new();
    for (pi, probe) in probes.iter().enumerate() {
        for &k in &opts.checkpoints {
            let k = k.min(m.saturating_sub(1));
            let dev = Deviation {
                base: policy,
                other: *probe,
                agent,
                from_step: k,
            };
            let alt = paths::simulate_controlled(spec, &dev, fm, grid, opts.num_paths, opts.seed)?;
            let alt_ctg = cost_to_go(spec, &alt);
            let diffs: Vec<f64> = (0..opts.num_paths)
                .map(|p| alt_ctg[p * (m + 1) + k] - base_ctg[p * (m + 1) + k])
                .collect();
            let keys: Vec<f64> = if fm.dim(agent, k) > 0 {
                (0..opts.num_paths)
                    .map(|p| {
                        let mut f = Vec::new();
                        base.features(fm, p, agent, k, &mut f);
                        f[0]
                    })
                    .collect()
            } else {
                vec![0.0; opts.num_paths]
            };
            let bins = binned_comparison(&keys, &diffs, opts.num_bins.max(1), opts.min_bin_count);
            let pass = bins.iter().all(|b| b.pass);
            entries.push(SufficiencyEntry {
                probe: pi,
                step: k,
                bins,
                pass,
            });
        }
    }
    let pass = entries.iter().all(|e| e.pass);
    Ok(SufficiencyReport {
        agent,
        entries,
        pass,
    })
}

fn binned_comparison(
    keys: &[f64],
    diffs: &[f64],
    num_bins: usize,
    min_count: usize,
) -> Vec<BinComparison> {
    let mut sorted = keys.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let edges: Vec<f64> = (0..=num_bins)
        .map(|b| stats::quantile_sorted(&sorted, b as f64 / num_bins as f64))
        .collect();
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); num_bins];
    for (key, d) in keys.iter().zip(diffs) {
        // bins are [e_b, e_{b+1}); the last one is closed
        let b = edges[1..num_bins].partition_point(|e| e <= key);
        members[b].push(*d);
    }
    members
        .iter()
        .enumerate()
        .filter(|(_, v)| v.len() >= min_count)
        .map(|(b, v)| {
            let s = MeanSe::of(v);
            BinComparison {
                lower: edges[b],
                upper: edges[b + 1],
                count: v.len(),
                mean_difference: s.mean,
                se: s.se,
                pass: s.mean >= -2.0 * s.se,
            }
        })
        .collect()
}

/// Constant-action probe laws for every vertex of an agent's box, for use
/// with [`sufficiency_check`].
pub fn vertex_probes(spec: &ProblemSpec, agent: usize) -> Vec<FnPolicy> {
    let dims = spec.action_dims.clone();
    spec.action_boxes[agent]
        .vertices()
        .into_iter()
        .map(|v| {
            FnPolicy::new(dims.clone(), move |_, _, _, out| {
                out.copy_from_slice(&v[..out.len().min(v.len())]);
            })
        })
        .collect()
}
