//! Acceptance criteria, one line per criterion. Run with
//! `cargo test -p teamopt --test acceptance`.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use teamopt_core::basis::Basis;
use teamopt_core::benchmarks::{
    lq_policy_spec, lq_scalar, radner_discrete, radner_policy_spec, radner_quadratic,
    tanh_policy_spec, toy3_two_step, LqScalar, RadnerQuadratic,
};
use teamopt_core::fbsde::{simulate_variational, solve_bsde};
use teamopt_core::girsanov::{equivalence_test, evaluate_reference, martingale_check};
use teamopt_core::info::{compile, FeatureMap, InformationStructure};
use teamopt_core::model::{ActionBox, InitialLaw, ObservationMap, ProblemSpec, TimeGrid};
use teamopt_core::paths::simulate_controlled;
use teamopt_core::policy::{AgentPolicySpec, FnPolicy, PolicyProfile, Segmentation};
use teamopt_core::static_equiv::{
    quadrature_payoff, static_stationarity, to_static, transition_quadrature_payoff,
};
use teamopt_core::stats::{correlation, quantile, rmse, MeanSe};
use teamopt_core::team::{pbp_iterate, team_residual, value_process, PbpOptions, ResidualOptions};
use teamopt_core::Error;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Check = fn() -> Result<Outcome, Error>;

fn toy1() -> (ProblemSpec, TimeGrid, FeatureMap) {
    let spec = lq_scalar(&LqScalar::default()).unwrap();
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let fm = compile(&InformationStructure::all_markov(1), &grid, &[1]).unwrap();
    (spec, grid, fm)
}

fn tanh_profile(fm: &FeatureMap, gain: f64) -> PolicyProfile {
    let mut p = PolicyProfile::new(fm, tanh_policy_spec(5.0)).unwrap();
    p.set_params(0, &[gain]).unwrap();
    p
}

/// `u = θ₀ + θ₁ x` with one block for all steps.
fn affine_profile(fm: &FeatureMap, intercept: f64, gain: f64) -> PolicyProfile {
    let mut p = PolicyProfile::new(fm, lq_policy_spec(5.0, Segmentation::Stationary)).unwrap();
    p.set_params(0, &[intercept, gain]).unwrap();
    p
}

/// Riccati equation `−P' = q − P²/r`, `P(T) = s`, integrated backwards with
/// RK4; returns `P` on `n + 1` uniform times and `∫₀ᵀ σ² P dt`.
fn riccati(p: &LqScalar, n: usize) -> (Vec<f64>, f64) {
    let rhs = |v: f64| -(p.q - v * v / p.r);
    let h = p.horizon / n as f64;
    let mut values = vec![0.0; n + 1];
    values[n] = p.s;
    for i in (0..n).rev() {
        // integrate backwards: dP/d(−t) = q − P²/r
        let v = values[i + 1];
        let k1 = -rhs(v);
        let k2 = -rhs(v + 0.5 * h * k1);
        let k3 = -rhs(v + 0.5 * h * k2);
        let k4 = -rhs(v + h * k3);
        values[i] = v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let integral = (0..n)
        .map(|i| 0.5 * h * (values[i] + values[i + 1]))
        .sum::<f64>()
        * p.sigma
        * p.sigma;
    (values, integral)
}

fn c1_martingale() -> Result<Outcome, Error> {
    let (spec, grid, fm) = toy1();
    let policy = tanh_profile(&fm, 0.3);
    let (_, bundle) = evaluate_reference(&spec, &policy, &fm, &grid, 100_000, 11)?;
    let steps: Vec<usize> = [0.25, 0.5, 1.0].iter().map(|t| grid.index_of(*t)).collect();
    let d = martingale_check(&bundle, &steps);
    let pass = d.checkpoints.iter().all(|c| c.pass && c.se <= 0.02);
    let detail = d
        .checkpoints
        .iter()
        .map(|c| format!("t={} mean={:.4} se={:.4}", c.time, c.mean, c.se))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(outcome(pass, detail))
}

fn c2_equivalence() -> Result<Outcome, Error> {
    let (spec, grid, fm) = toy1();
    let policy = tanh_profile(&fm, 0.3);
    let r = equivalence_test(&spec, &policy, &fm, &grid, 100_000, 12)?;
    Ok(outcome(
        r.pass,
        format!(
            "reference={:.4} original={:.4} gap={:.2e} 3se={:.2e}",
            r.reference.value,
            r.original.value,
            r.gap,
            3.0 * r.combined_se
        ),
    ))
}

fn c3_static_exactness() -> Result<Outcome, Error> {
    let dspec = toy3_two_step(10.0);
    let grid = dspec.grid();
    let fm = compile(
        &InformationStructure::all_markov(1),
        &grid,
        &dspec.obs_dims(),
    )?;
    let mut policy = PolicyProfile::new(
        &fm,
        vec![AgentPolicySpec {
            basis: Basis::QUADRATIC,
            segmentation: Segmentation::PerStep,
            action_box: ActionBox::symmetric(1, 10.0),
        }],
    )?;
    policy.set_params(0, &[0.1, -0.4, 0.05, -0.2, -0.7, 0.1])?;
    let sp = to_static(&dspec, &fm)?;
    let static_value = quadrature_payoff(&sp, &policy, 40)?;
    let direct = transition_quadrature_payoff(&dspec, &policy, &fm, 40, 6)?;
    let rel = (static_value - direct).abs() / direct.abs();
    Ok(outcome(
        rel <= 1e-8,
        format!("static={static_value:.12} direct={direct:.12} rel={rel:.2e}"),
    ))
}

fn c4_lq() -> Result<Outcome, Error> {
    let params = LqScalar::default();
    let (values, integral) = riccati(&params, 10_000);
    let j_star = values[0] * params.x0 * params.x0 + integral;
    let (spec, grid, fm) = toy1();
    let init = PolicyProfile::new(&fm, lq_policy_spec(params.bound, Segmentation::Uniform(4)))?;
    let opts = PbpOptions {
        num_paths: 50_000,
        seed: 4,
        ..PbpOptions::default()
    };
    let start = Instant::now();
    let out = match pbp_iterate(&spec, &init, &fm, &grid, &opts) {
        Ok(o) => o,
        Err(Error::MaxCyclesExceeded { best }) => *best,
        Err(e) => return Err(e),
    };
    let elapsed = start.elapsed().as_secs_f64();
    let mut gains = Vec::new();
    let mut gain_ok = true;
    for t in [0.25, 0.5, 0.75] {
        let k = grid.index_of(t);
        let seg = out.profile.segment_of(0, k);
        let gain = out.profile.segment_params(0, seg)[1];
        // oracle feedback u = −P(t) x / r
        let oracle = -values[(t * 10_000.0).round() as usize] / params.r;
        gain_ok &= (gain - oracle).abs() <= 0.1;
        gains.push(format!("{gain:.3}@{t}"));
    }
    let pass = out.payoff.value <= 1.03 && gain_ok && elapsed <= 300.0;
    Ok(outcome(
        pass,
        format!(
            "J={:.4} (oracle {j_star:.4}) gains [{}] cycles={} {elapsed:.1}s",
            out.payoff.value,
            gains.join(" "),
            out.cycles
        ),
    ))
}

fn c5_bsde() -> Result<Outcome, Error> {
    let spec = ProblemSpec::builder(1, 1.0)
        .agent(ActionBox::symmetric(1, 1.0), ObservationMap::full_state(1))
        .running_cost(|_, _, _| 0.0)
        .terminal_cost(|x| x[0])
        .initial_law(InitialLaw::Point(vec![0.0]))
        .build()?;
    let grid = TimeGrid::new(1.0, 50)?;
    let fm = compile(&InformationStructure::all_markov(1), &grid, &[1])?;
    let bundle = simulate_controlled(&spec, &FnPolicy::zero(vec![1]), &fm, &grid, 100_000, 5)?;
    let adj = solve_bsde(&spec, &bundle, Basis::QUADRATIC)?;
    let m = grid.num_steps();
    let mut psi = Vec::new();
    let mut x = Vec::new();
    for p in 0..bundle.num_paths {
        for k in 0..=m {
            psi.push(adj.psi(p, k));
            x.push(bundle.state(p, k)[0]);
        }
    }
    let err = rmse(&psi, &x);
    let mut worst_q: f64 = 1.0;
    for k in 1..m {
        let q: Vec<f64> = (0..bundle.num_paths).map(|p| adj.q(p, k)[0]).collect();
        let mean = MeanSe::of(&q).mean;
        if (mean - 1.0).abs() > (worst_q - 1.0).abs() {
            worst_q = mean;
        }
    }
    Ok(outcome(
        err <= 0.02 && (worst_q - 1.0).abs() <= 0.05,
        format!("rmse(psi-x)={err:.2e} worst mean Q={worst_q:.4}"),
    ))
}

fn c6_radner() -> Result<Outcome, Error> {
    let p = RadnerQuadratic::default();
    // stationarity in a1, a2 of E[(a1x1 + a2x2 − x1 − x2)² + r1 a1²x1² + r2 a2²x2²]
    let (a11, a12, b1) = (1.0 + p.r1, p.s12 / p.s11, 1.0 + p.s12 / p.s11);
    let (a21, a22, b2) = (p.s12 / p.s22, 1.0 + p.r2, 1.0 + p.s12 / p.s22);
    let det = a11 * a22 - a12 * a21;
    let oracle = [(b1 * a22 - a12 * b2) / det, (a11 * b2 - a21 * b1) / det];

    let spec = radner_quadratic(&p)?;
    let grid = TimeGrid::new(1.0, 1)?;
    let fm = compile(
        &InformationStructure::all_markov(2),
        &grid,
        &spec.obs_dims(),
    )?;
    let init = PolicyProfile::new(&fm, radner_policy_spec(&p))?;
    let opts = PbpOptions {
        num_paths: 200_000,
        seed: 6,
        tol: 1e-6,
        ..PbpOptions::default()
    };
    let out = match pbp_iterate(&spec, &init, &fm, &grid, &opts) {
        Ok(o) => o,
        Err(Error::MaxCyclesExceeded { best }) => *best,
        Err(e) => return Err(e),
    };
    let found = [out.profile.params(0)[0], out.profile.params(1)[0]];
    let coef_err = (0..2)
        .map(|i| (found[i] - oracle[i]).abs())
        .fold(0.0, f64::max);

    let dspec = radner_discrete(&p)?;
    let dfm = compile(
        &InformationStructure::all_markov(2),
        &dspec.grid(),
        &dspec.obs_dims(),
    )?;
    let sp = to_static(&dspec, &dfm)?;
    let mut at_oracle = PolicyProfile::new(&dfm, radner_policy_spec(&p))?;
    at_oracle.set_params(0, &[oracle[0]])?;
    at_oracle.set_params(1, &[oracle[1]])?;
    let mut grad_norm: f64 = 0.0;
    for agent in 0..2 {
        grad_norm = grad_norm.max(static_stationarity(&sp, &at_oracle, agent, 20)?.norm);
    }
    Ok(outcome(
        coef_err <= 1e-2 && grad_norm <= 1e-4,
        format!(
            "pbp=({:.4}, {:.4}) oracle=({:.4}, {:.4}) err={coef_err:.1e} |grad|={grad_norm:.1e}",
            found[0], found[1], oracle[0], oracle[1]
        ),
    ))
}

fn c7_variational() -> Result<Outcome, Error> {
    let (spec, grid, fm) = toy1();
    let base = tanh_profile(&fm, 0.3);
    let direction = affine_profile(&fm, 0.2, -0.5);
    let (_, bundle) = evaluate_reference(&spec, &base, &fm, &grid, 10_000, 7)?;
    let eps = 1e-3;
    let var = simulate_variational(&spec, &bundle, &base, &direction, &fm, eps)?;
    let z = var.terminal();
    let fd = var.finite_difference(grid.num_steps());
    let corr = correlation(&z, &fd);
    let gap = rmse(&z, &fd);
    Ok(outcome(
        corr >= 0.99 && gap <= 5.0 * eps,
        format!("corr={corr:.6} rmse={gap:.2e} (bound {:.1e})", 5.0 * eps),
    ))
}

fn c8_certification() -> Result<Outcome, Error> {
    let (spec, grid, fm) = toy1();
    let gaps = |gain: f64| -> Result<(bool, bool, String), Error> {
        let policy = affine_profile(&fm, 0.0, gain);
        let bundle = simulate_controlled(&spec, &policy, &fm, &grid, 50_000, 8)?;
        let adj = solve_bsde(&spec, &bundle, Basis::QUADRATIC)?;
        let report = team_residual(&spec, &adj, &bundle, &fm, &ResidualOptions::default())?;
        let probes = &report.agents[0].probes;
        let all_ok = probes.iter().all(|g| g.gap >= -2.0 * g.se);
        let any_bad = probes.iter().any(|g| g.gap < -5.0 * g.se);
        let worst = probes
            .iter()
            .map(|g| g.gap / g.se)
            .fold(f64::INFINITY, f64::min);
        Ok((all_ok, any_bad, format!("{worst:.1}")))
    };
    // u = −x is the Riccati feedback P(t)/r = 1
    let (opt_ok, _, z_opt) = gaps(-1.0)?;
    let (_, neg_bad, z_zero) = gaps(0.0)?;
    Ok(outcome(
        opt_ok && neg_bad,
        format!("min gap/se at optimum={z_opt}, at gain 0={z_zero}"),
    ))
}

fn c9_value() -> Result<Outcome, Error> {
    let (spec, grid, fm) = toy1();
    let policy = affine_profile(&fm, 0.0, -1.0);
    let bundle = simulate_controlled(&spec, &policy, &fm, &grid, 50_000, 9)?;
    let adj = solve_bsde(&spec, &bundle, Basis::QUADRATIC)?;
    let value = value_process(&spec, 0, &adj, &bundle, &fm, Basis::QUADRATIC)?;
    let (riccati_p, _) = riccati(&LqScalar::default(), 10_000);
    let mut worst: f64 = 0.0;
    for t in [0.25, 0.5, 0.75] {
        let k = grid.index_of(t);
        let xs: Vec<f64> = (0..bundle.num_paths)
            .map(|p| bundle.state(p, k)[0])
            .collect();
        let (lo, hi) = (quantile(&xs, 0.1), quantile(&xs, 0.9));
        let band: Vec<f64> = xs.into_iter().filter(|x| *x >= lo && *x <= hi).collect();
        let fitted: Vec<f64> = band.iter().map(|x| value.predict(k, &[*x])).collect();
        // V(t, x) = P(t) x² + ∫_t^T σ² P ds
        let pt = riccati_p[(t * 10_000.0).round() as usize];
        let tail: f64 = riccati_p[(t * 10_000.0).round() as usize..]
            .iter()
            .sum::<f64>()
            / 10_000.0;
        let oracle: Vec<f64> = band.iter().map(|x| pt * x * x + tail).collect();
        worst = worst.max(rmse(&fitted, &oracle));
    }
    Ok(outcome(worst <= 0.05, format!("max band rmse={worst:.4}")))
}

fn write_discrete_config(dir: &Path) -> PathBuf {
    let path = dir.join("toy3.toml");
    std::fs::write(
        &path,
        r#"[problem]
family = "toy3-two-step"

[run]
paths = 4000
seed = 3
quadrature_order = 12
"#,
    )
    .unwrap();
    path
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("toy1.toml");
    std::fs::write(
        &path,
        r#"[problem]
family = "lq-scalar"
horizon = 1.0

[run]
paths = 4000
seed = 3
steps = 20
max_cycles = 3
policy_basis = "tanh"
init = [[0.3]]
"#,
    )
    .unwrap();
    path
}

/// Runs `sub` inside `workdir` with the relative output directory `out`, so
/// the resolved config echo is identical between runs.
fn run_cli(sub: &str, config: &Path, workdir: &Path, threads: &str) -> Result<(), String> {
    std::fs::create_dir_all(workdir).map_err(|e| e.to_string())?;
    let status = Command::new(env!("CARGO_BIN_EXE_teamopt"))
        .current_dir(workdir)
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg("out")
        .env("TEAMOPT_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    match status.status.code() {
        Some(0) | Some(1) => Ok(()),
        _ => Err(format!(
            "{sub}: {}",
            String::from_utf8_lossy(&status.stderr)
        )),
    }
}

fn output_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut files: Vec<(String, Vec<u8>)> = entries
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "json"))
        .filter(|p| p.file_name().is_some_and(|n| n != "manifest.json"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn c10_determinism() -> Result<Outcome, Error> {
    let root = std::env::temp_dir().join(format!("teamopt-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let continuous = write_config(&root);
    let discrete = write_discrete_config(&root);
    let mut failures = Vec::new();
    let mut compared = 0;
    let runs_of = [
        ("simulate", &continuous),
        ("check-martingale", &continuous),
        ("solve-bsde", &continuous),
        ("optimize", &continuous),
        ("value", &continuous),
        ("static-compare", &discrete),
        ("simulate", &discrete),
    ];
    for (sub, config) in runs_of {
        let mut runs = Vec::new();
        for (i, threads) in ["1", "1", "3"].iter().enumerate() {
            let workdir = root.join(format!(
                "{sub}-{}-{i}",
                config.file_stem().unwrap().to_string_lossy()
            ));
            if let Err(e) = run_cli(sub, config, &workdir, threads) {
                failures.push(e);
                break;
            }
            runs.push(output_files(&workdir.join("out")));
        }
        if runs.len() == 3 {
            compared += runs[0].len();
            if runs[0].is_empty() || runs[0] != runs[1] || runs[0] != runs[2] {
                failures.push(format!("{sub}: outputs differ"));
            }
        }
    }
    let _ = std::fs::remove_dir_all(&root);
    Ok(outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{compared} files identical across 3 runs (threads 1, 1, 3)")
        } else {
            failures.join("; ")
        },
    ))
}

fn main() -> ExitCode {
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let checks: [(&str, &str, Check); 10] = [
        (
            "1",
            "martingale property of the likelihood ratio",
            c1_martingale,
        ),
        ("2", "reference vs original pay-off", c2_equivalence),
        (
            "3",
            "discrete static reformulation exactness",
            c3_static_exactness,
        ),
        ("4", "LQ benchmark via person-by-person iteration", c4_lq),
        ("5", "BSDE sanity with identity terminal cost", c5_bsde),
        ("6", "Radner quadratic team", c6_radner),
        (
            "7",
            "variational process vs finite difference",
            c7_variational,
        ),
        ("8", "conditional VI certification", c8_certification),
        ("9", "value process vs LQG value", c9_value),
        (
            "10",
            "CLI determinism across runs and threads",
            c10_determinism,
        ),
    ];
    let mut failed = 0;
    for (id, name, check) in checks {
        if only
            .as_ref()
            .is_some_and(|o| !id.eq(o) && !name.contains(o.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} [{id:>2}] {name}: {detail} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
