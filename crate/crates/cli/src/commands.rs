//! Subcommand implementations. Each returns whether its check passed; all
//! files go through [`OutputDir`] so the manifest can list them.

use serde_json::{json, Value};
use teamopt_core::benchmarks;
use teamopt_core::fbsde::solve_bsde;
use teamopt_core::girsanov::{self, martingale_check, PayoffEstimate};
use teamopt_core::model::ProblemSpec;
use teamopt_core::model::TimeGrid;
use teamopt_core::paths::{self, Measure, PathBundle};
use teamopt_core::rng::derive_seed;
use teamopt_core::static_equiv::{self, StaticMethod};
use teamopt_core::stats::MeanSe;
use teamopt_core::team::{self, pbp_iterate, PbpOptions, ProbeKind};
use teamopt_core::Error;

use crate::config::{Format, MeasureConfig};
use crate::error::{CliError, CoreContext};
use crate::io::{self, num, OutputDir};
use crate::problem::{parse_basis, Model, Problem};

/// Result of a subcommand: pass flag and the seeds it consumed.
pub struct Outcome {
    pub pass: bool,
    pub seeds: Vec<(String, u64)>,
}

impl Outcome {
    fn new(pass: bool, seed: u64) -> Self {
        Self {
            pass,
            seeds: vec![("run".into(), seed)],
        }
    }
}

fn payoff_json(p: &PayoffEstimate) -> Value {
    json!({
        "value": p.value,
        "se": p.se,
        "measure_used": p.measure_used.name(),
        "num_paths": p.num_paths,
    })
}

fn continuous<'a>(
    problem: &'a Problem,
    subcommand: &str,
) -> Result<(&'a ProblemSpec, &'a TimeGrid), CliError> {
    match &problem.model {
        Model::Continuous { spec, grid } => Ok((spec, grid)),
        Model::Discrete { .. } => Err(CliError::Unsupported(format!(
            "{subcommand} needs a continuous-time family, got {}",
            problem.resolved.problem.family.name()
        ))),
    }
}

/// Reference-measure bundle with the likelihood of the configured policy.
fn reference_bundle(
    problem: &Problem,
    num_paths: usize,
    seed: u64,
) -> Result<(PayoffEstimate, PathBundle), CliError> {
    let fm = &problem.feature_map;
    let policy = &problem.profile;
    match &problem.model {
        Model::Continuous { spec, grid } => {
            girsanov::evaluate_reference(spec, policy, fm, grid, num_paths, seed)
                .context("reference simulation")
        }
        Model::Discrete { dspec } => {
            let mut b =
                paths::simulate_discrete(dspec, policy, fm, num_paths, seed, Measure::Reference)
                    .context("reference simulation")?;
            girsanov::discrete_likelihood(dspec, &mut b, policy, fm)
                .context("discrete likelihood")?;
            let est =
                girsanov::discrete_payoff_reference(dspec, &b).context("reference pay-off")?;
            Ok((est, b))
        }
    }
}

fn original_bundle(
    problem: &Problem,
    num_paths: usize,
    seed: u64,
) -> Result<(PayoffEstimate, PathBundle), CliError> {
    let fm = &problem.feature_map;
    let policy = &problem.profile;
    match &problem.model {
        Model::Continuous { spec, grid } => {
            girsanov::evaluate_original(spec, policy, fm, grid, num_paths, seed)
                .context("controlled simulation")
        }
        Model::Discrete { dspec } => {
            let b = paths::simulate_discrete(dspec, policy, fm, num_paths, seed, Measure::Original)
                .context("controlled simulation")?;
            let est = girsanov::discrete_payoff_original(dspec, &b).context("direct pay-off")?;
            Ok((est, b))
        }
    }
}

pub fn simulate(problem: &Problem, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let run = &problem.resolved.run;
    let (payoff, bundle) = match run.measure {
        MeasureConfig::Reference => reference_bundle(problem, run.paths, run.seed)?,
        MeasureConfig::Original => original_bundle(problem, run.paths, run.seed)?,
    };
    let formats = &problem.resolved.output;
    if formats.wants(Format::Csv) {
        let (n, d, m) = (bundle.state_dim, bundle.action_dim, bundle.num_steps());
        let mut header = vec!["path".to_string(), "step".into(), "t".into()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..d).map(|i| format!("u{i}")));
        header.push("log_lambda".into());
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let shown = run.csv_paths.min(bundle.num_paths);
        let rows = (0..shown).flat_map(|p| {
            let bundle = &bundle;
            (0..=m).map(move |k| {
                let mut row = vec![p.to_string(), k.to_string(), num(bundle.grid.time(k))];
                row.extend(bundle.state(p, k).iter().map(|v| num(*v)));
                if k < m {
                    row.extend(bundle.control(p, k).iter().map(|v| num(*v)));
                } else {
                    row.extend((0..d).map(|_| String::new()));
                }
                row.push(num(bundle.log_likelihood(p, k)));
                row
            })
        });
        out.write_csv("paths.csv", &header, rows)?;
    }
    if formats.wants(Format::Binary) {
        out.write_bytes("bundle.topb", &io::encode_bundle(&bundle))?;
    }
    if formats.wants(Format::Json) {
        let diag = martingale_check(&bundle, &[]);
        out.write_json(
            "summary.json",
            &json!({
                "family": problem.resolved.problem.family.name(),
                "measure": bundle.measure.name(),
                "num_paths": bundle.num_paths,
                "num_steps": bundle.num_steps(),
                "payoff": payoff_json(&payoff),
                "terminal_ess": diag.ess,
                "degenerate": diag.degenerate,
            }),
        )?;
    }
    Ok(Outcome::new(true, run.seed))
}

pub fn check_martingale(problem: &Problem, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let run = &problem.resolved.run;
    let (_, bundle) = reference_bundle(problem, run.paths, run.seed)?;
    let grid = problem.grid();
    let steps: Vec<usize> = run.checkpoints.iter().map(|t| grid.index_of(*t)).collect();
    let diag = martingale_check(&bundle, &steps);
    if problem.resolved.output.wants(Format::Csv) {
        let rows = diag.checkpoints.iter().map(|c| {
            vec![
                c.step.to_string(),
                num(c.time),
                num(c.mean),
                num(c.se),
                num(c.ess),
                num(c.max_log_likelihood),
                c.pass.to_string(),
            ]
        });
        out.write_csv(
            "martingale.csv",
            &[
                "step",
                "t",
                "mean_lambda",
                "se",
                "ess",
                "max_log_lambda",
                "pass",
            ],
            rows,
        )?;
    }
    if problem.resolved.output.wants(Format::Json) {
        out.write_json(
            "report.json",
            &json!({
                "num_paths": diag.num_paths,
                "terminal_ess": diag.ess,
                "degenerate": diag.degenerate,
                "max_log_lambda": diag.max_log_likelihood,
                "pass": diag.pass(),
            }),
        )?;
    }
    Ok(Outcome::new(diag.pass(), run.seed))
}

pub fn static_compare(problem: &Problem, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let Model::Discrete { dspec } = &problem.model else {
        return Err(CliError::Unsupported(format!(
            "static-compare needs a discrete-time family, got {}",
            problem.resolved.problem.family.name()
        )));
    };
    let run = &problem.resolved.run;
    let mc_paths = run.mc_paths.unwrap_or(run.paths);
    let mc_seed = derive_seed(run.seed, 2);
    let sp =
        static_equiv::to_static(dspec, &problem.feature_map).context("static reformulation")?;
    let policy = &problem.profile;
    let staticp = static_equiv::static_payoff(
        &sp,
        policy,
        run.quadrature_order,
        run.quadrature_cap,
        mc_paths,
        run.seed,
    )
    .context("static pay-off")?;
    let (direct, _) = original_bundle(problem, mc_paths, mc_seed)?;
    let transition = match static_equiv::transition_quadrature_payoff(
        dspec,
        policy,
        &problem.feature_map,
        run.quadrature_order,
        run.quadrature_cap,
    ) {
        Ok(v) => Some(v),
        Err(Error::DimensionCapExceeded { .. }) => None,
        Err(e) => return Err(e).context("transition quadrature"),
    };
    let gap = staticp.value - direct.value;
    let se = (staticp.se * staticp.se + direct.se * direct.se).sqrt();
    let mc_pass = gap.abs() <= 3.0 * se;
    let exact = match (staticp.method, transition) {
        (StaticMethod::Quadrature, Some(t)) => {
            Some((staticp.value - t).abs() / t.abs().max(1e-300))
        }
        _ => None,
    };
    let pass = mc_pass && exact.is_none_or(|r| r <= 1e-8);
    let method = match staticp.method {
        StaticMethod::Quadrature => "static-quadrature",
        StaticMethod::MonteCarlo => "static-monte-carlo",
    };
    if problem.resolved.output.wants(Format::Csv) {
        let mut rows = vec![
            vec![method.to_string(), num(staticp.value), num(staticp.se)],
            vec![
                "original-monte-carlo".into(),
                num(direct.value),
                num(direct.se),
            ],
        ];
        if let Some(t) = transition {
            rows.push(vec!["transition-quadrature".into(), num(t), num(0.0)]);
        }
        out.write_csv("static.csv", &["method", "value", "se"], rows)?;
    }
    if problem.resolved.output.wants(Format::Json) {
        out.write_json(
            "report.json",
            &json!({
                "static": {"value": staticp.value, "se": staticp.se, "method": method},
                "original": payoff_json(&direct),
                "transition_quadrature": transition,
                "relative_gap_quadrature": exact,
                "gap": gap,
                "combined_se": se,
                "pass": pass,
            }),
        )?;
    }
    let mut o = Outcome::new(pass, run.seed);
    o.seeds.push(("monte-carlo".into(), mc_seed));
    Ok(o)
}

pub fn solve_bsde_cmd(problem: &Problem, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let (spec, _) = continuous(problem, "solve-bsde")?;
    let run = &problem.resolved.run;
    let basis = parse_basis(&run.bsde_basis).expect("validated");
    let (payoff, bundle) = original_bundle(problem, run.paths, run.seed)?;
    let adj = solve_bsde(spec, &bundle, basis).context("solving the adjoint equation")?;
    let n = bundle.state_dim;
    let m = bundle.num_steps();
    if problem.resolved.output.wants(Format::Csv) {
        let mut header = vec![
            "step".to_string(),
            "t".into(),
            "mean_psi".into(),
            "se_psi".into(),
        ];
        header.extend((0..n).map(|i| format!("mean_q{i}")));
        header.push("residual_norm".into());
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = (0..=m).map(|k| {
            let psi = MeanSe::of(&adj.psi_column(k));
            let mut row = vec![
                k.to_string(),
                num(bundle.grid.time(k)),
                num(psi.mean),
                num(psi.se),
            ];
            for i in 0..n {
                if k < m {
                    let q: Vec<f64> = (0..bundle.num_paths).map(|p| adj.q(p, k)[i]).collect();
                    row.push(num(MeanSe::of(&q).mean));
                } else {
                    row.push(String::new());
                }
            }
            row.push(if k < m {
                num(adj.residual_norms[k])
            } else {
                String::new()
            });
            row
        });
        out.write_csv("adjoint.csv", &header, rows)?;
    }
    if problem.resolved.output.wants(Format::Json) {
        out.write_json(
            "report.json",
            &json!({
                "initial_value": adj.initial_value(),
                "payoff": payoff_json(&payoff),
                "basis": run.bsde_basis,
                "ridge_steps": adj.ridge_steps,
            }),
        )?;
    }
    Ok(Outcome::new(true, run.seed))
}

fn probe_name(k: ProbeKind) -> String {
    match k {
        ProbeKind::Vertex(v) => format!("vertex-{v}"),
        ProbeKind::GradientDescent => "gradient-descent".into(),
        ProbeKind::GradientAscent => "gradient-ascent".into(),
    }
}

pub fn optimize(problem: &Problem, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let (spec, grid) = continuous(problem, "optimize")?;
    let run = &problem.resolved.run;
    let opts = PbpOptions {
        num_paths: run.paths,
        seed: run.seed,
        bsde_basis: parse_basis(&run.bsde_basis).expect("validated"),
        max_cycles: run.max_cycles,
        tol: run.tol,
        inner_iterations: 1,
        initial_step: run.initial_step,
        max_backtracks: run.max_backtracks,
        agent_order: run.agent_order.clone(),
        probe_step: run.probe_step,
    };
    let outcome = match pbp_iterate(spec, &problem.profile, &problem.feature_map, grid, &opts) {
        Ok(o) => o,
        Err(Error::MaxCyclesExceeded { best }) => *best,
        Err(e) => return Err(e).context("person-by-person iteration"),
    };
    let pass = outcome.converged && outcome.report.pass;
    if problem.resolved.output.wants(Format::Csv) {
        let rows = outcome.history.iter().enumerate().map(|(i, h)| {
            vec![
                (i + 1).to_string(),
                h.cycle.to_string(),
                h.agent.to_string(),
                num(h.payoff),
                num(h.residual),
                num(h.step),
                h.line_search_failed.to_string(),
            ]
        });
        out.write_csv(
            "trace.csv",
            &[
                "iteration",
                "cycle",
                "agent",
                "payoff",
                "residual",
                "step",
                "line_search_failed",
            ],
            rows,
        )?;
        let rows = outcome.report.agents.iter().flat_map(|a| {
            a.probes.iter().map(move |g| {
                vec![
                    a.agent.to_string(),
                    num(a.vi_residual),
                    probe_name(g.probe),
                    num(g.gap),
                    num(g.se),
                    g.pass.to_string(),
                ]
            })
        });
        out.write_csv(
            "residuals.csv",
            &["agent", "vi_residual", "probe", "gap", "se", "pass"],
            rows,
        )?;
    }
    if problem.resolved.output.wants(Format::Json) {
        let agents: Vec<Value> = (0..problem.num_agents())
            .map(|a| {
                json!({
                    "agent": a,
                    "segments": outcome.profile.num_segments(a),
                    "params": outcome.profile.params(a),
                })
            })
            .collect();
        out.write_json(
            "policy.json",
            &json!({
                "basis": run.policy_basis,
                "segmentation": run.segmentation,
                "agents": agents,
            }),
        )?;
        out.write_json(
            "report.json",
            &json!({
                "converged": outcome.converged,
                "cycles": outcome.cycles,
                "payoff": payoff_json(&outcome.payoff),
                "max_vi_residual": outcome.report.max_residual(),
                "team_gap": outcome.report.team_gap,
                "probes_pass": outcome.report.pass,
                "pass": pass,
            }),
        )?;
    }
    Ok(Outcome::new(pass, run.seed))
}

pub fn value(problem: &Problem, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let (spec, _) = continuous(problem, "value")?;
    let run = &problem.resolved.run;
    let (_, bundle) = original_bundle(problem, run.paths, run.seed)?;
    let adj = solve_bsde(
        spec,
        &bundle,
        parse_basis(&run.bsde_basis).expect("validated"),
    )
    .context("solving the adjoint equation")?;
    let basis = parse_basis(&run.value_basis).expect("validated");
    let mut estimates = Vec::new();
    for agent in 0..problem.num_agents() {
        estimates.push(
            team::value_process(spec, agent, &adj, &bundle, &problem.feature_map, basis)
                .context("value process regression")?,
        );
    }
    let pass = estimates.iter().all(|e| e.tower.iter().all(|t| t.pass));
    if problem.resolved.output.wants(Format::Csv) {
        let rows = estimates.iter().flat_map(|e| {
            e.tower.iter().map(move |t| {
                vec![
                    e.agent.to_string(),
                    t.step.to_string(),
                    num(bundle.grid.time(t.step)),
                    num(t.mean_value),
                    num(t.mean_psi),
                    num(t.se),
                    t.pass.to_string(),
                    num(e.cross_gap[t.step]),
                ]
            })
        });
        out.write_csv(
            "value.csv",
            &[
                "agent",
                "step",
                "t",
                "mean_value",
                "mean_psi",
                "se",
                "tower_pass",
                "cross_gap",
            ],
            rows,
        )?;
    }
    if problem.resolved.output.wants(Format::Json) {
        let agents: Vec<Value> = estimates
            .iter()
            .map(|e| {
                json!({
                    "agent": e.agent,
                    "initial_coefficients": e.regressors[0].coefficients,
                    "max_cross_gap": e.cross_gap.iter().copied().fold(0.0, f64::max),
                    "tower_pass": e.tower.iter().all(|t| t.pass),
                })
            })
            .collect();
        out.write_json(
            "report.json",
            &json!({
                "basis": run.value_basis,
                "initial_value": adj.initial_value(),
                "agents": agents,
                "pass": pass,
            }),
        )?;
    }
    Ok(Outcome::new(pass, run.seed))
}

pub fn list_benchmarks_json() -> Value {
    Value::Array(
        benchmarks::list_benchmarks()
            .iter()
            .map(|b| json!({"name": b.name, "description": b.description, "oracle": b.oracle}))
            .collect(),
    )
}
