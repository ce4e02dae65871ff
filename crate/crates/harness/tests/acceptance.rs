//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use zofl::algorithm::{step_fo_fl, step_zo_baseline, step_zofl_eq};
use zofl::estimator::{build_probe_matrices, estimate_gradients, estimate_jvp, sample_sphere};
use zofl::multiplier::solve_complementarity;
use zofl::oracle::make_circle_problem;
use zofl::theory::{empirical_min_eig_check, lemma_batch_size};
use zofl::{
    run, seeded_rng, Algorithm, BlackBoxProblem, ConstraintKind, EstimatorConfig, GainMatrix, GradientMode, Matrix,
    RunConfig, StepSchedule, Vector,
};
use zofl_harness::config::{parse_config, parse_str, ExperimentConfig};
use zofl_harness::execute::{execute, execute_bound_check, ExecuteOptions};

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    parse_config(&configs_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn circle_cfg(algorithm: Algorithm, horizon: usize, batch: usize, eta: f64, seed: u64) -> RunConfig {
    RunConfig::new(
        algorithm,
        horizon,
        EstimatorConfig::new(batch, 1e-4, 1e-4).unwrap(),
        GainMatrix::scaled_identity(1, 1.0).unwrap(),
        StepSchedule::constant(eta),
        seed,
    )
}

fn start() -> Vector {
    Vector::from_vec(vec![1.2, 0.0])
}

fn criterion_1() -> Outcome {
    let p = make_circle_problem();
    let mk = |a| circle_cfg(a, 100, 1, 0.01, 0).with_gradient_mode(GradientMode::Analytic);
    let (zofl, base, fo) = (mk(Algorithm::ZoflEq), mk(Algorithm::ZoBaseline), mk(Algorithm::FoFl));
    let mut rng = seeded_rng(0);
    let (mut xz, mut xb, mut xf) = (start(), start(), start());
    let mut worst: f64 = 0.0;
    for t in 0..100 {
        xz = step_zofl_eq(&p, &xz, t, &zofl, &mut rng).unwrap().next;
        xb = step_zo_baseline(&p, &xb, t, &base, &mut rng).unwrap().next;
        xf = step_fo_fl(&p, &xf, t, &fo).unwrap().next;
        worst = worst.max((&xz - &xf).amax()).max((&xb - &xf).amax());
    }
    outcome(worst <= 1e-10, format!("max iterate gap {worst:.3e} (tol 1e-10)"))
}

fn criterion_2() -> Outcome {
    let eta = 0.01;
    let p = make_circle_problem();
    let cfg = circle_cfg(Algorithm::ZoflEq, 500, 1, eta, 0).with_gradient_mode(GradientMode::Analytic);
    let record = run(&p, &start(), &cfg).unwrap();
    let limit = 1.0 - 0.9 * eta;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for w in record.rows.windows(2) {
        if w[0].violation >= 0.05 {
            checked += 1;
            worst = worst.max(w[1].violation / w[0].violation);
        }
    }
    outcome(
        worst <= limit,
        format!("worst ratio {worst:.6} over {checked} steps (limit {limit:.6})"),
    )
}

fn criterion_3(dir: &Path) -> Outcome {
    let cfg = load("circle_bounds.toml");
    let opts = ExecuteOptions { out_dir: Some(dir.join("c3")), ..Default::default() };
    let summary = execute_bound_check(&cfg, &opts).unwrap();
    let skipped = summary.outcomes.iter().filter(|o| o.precondition_unsatisfied.is_some()).count();
    let fraction = summary.fraction_within.first().map_or(0.0, |f| f.1);
    outcome(
        summary.evaluated && skipped == 0 && fraction >= 0.8,
        format!(
            "{:.0}% of {} seeds within bound, {skipped} with unmet preconditions (need 80%)",
            100.0 * fraction,
            cfg.seeds.len()
        ),
    )
}

/// Projected gradient on `½λᵀSλ + qᵀλ` over `λ ≥ 0`.
fn projected_gradient(s: &Matrix, q: &Vector) -> Vector {
    let step = 1.0 / s.clone().symmetric_eigen().eigenvalues.max();
    let mut lambda = Vector::zeros(q.len());
    for _ in 0..1_000_000 {
        let next = (&lambda - (s * &lambda + q) * step).map(|v| v.max(0.0));
        let moved = (&next - &lambda).amax();
        lambda = next;
        if moved <= 1e-15 {
            break;
        }
    }
    lambda
}

fn criterion_4() -> Outcome {
    let mut rng = seeded_rng(4);
    let mut worst_kkt: f64 = 0.0;
    let mut worst_qp: f64 = 0.0;
    let mut failures = 0;
    for i in 0..1000 {
        let m = 1 + i % 3;
        let symmetric = i % 2 == 0;
        let a = Matrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let mut g_h = &a * a.transpose() + Matrix::identity(m, m) * 0.1;
        if !symmetric {
            let b = Matrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            g_h += &b - b.transpose();
        }
        let g_f = Vector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let h = Vector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let k = GainMatrix::scaled_identity(m, rng.random_range(0.5..2.0)).unwrap();
        let Ok(sol) = solve_complementarity(&g_h, &g_f, &k, &h) else {
            failures += 1;
            continue;
        };
        let q = &g_f - k.apply(&h);
        let s = &g_h * &sol.lambda + &q;
        let kkt = [
            -sol.lambda.min(),
            -s.min(),
            sol.lambda.dot(&s).abs(),
            (&s - &sol.slack).amax(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        worst_kkt = worst_kkt.max(kkt);
        if symmetric {
            let reference = projected_gradient(&g_h, &q);
            worst_qp = worst_qp.max((&reference - &sol.lambda).amax());
        }
    }
    outcome(
        failures == 0 && worst_kkt <= 1e-8 && worst_qp <= 1e-6,
        format!("{failures} unsolved, worst condition error {worst_kkt:.2e} (tol 1e-8), worst QP gap {worst_qp:.2e} (tol 1e-6)"),
    )
}

fn criterion_5() -> Outcome {
    let n = 4;
    let a = Matrix::from_row_slice(2, n, &[1.0, -2.0, 0.5, 3.0, 0.3, 0.0, 4.0, -1.0]);
    let b = Vector::from_vec(vec![0.7, -1.1]);
    let c = Vector::from_vec(vec![0.2, -0.4, 1.5, 0.9]);
    let (a2, b2, c2) = (a.clone(), b.clone(), c.clone());
    let affine = BlackBoxProblem::new(
        "affine",
        n,
        2,
        ConstraintKind::Equality,
        move |x| c2.dot(x) + 0.3,
        move |x| &a2 * x + &b2,
    );
    let x = Vector::from_vec(vec![0.4, -1.3, 2.0, 0.1]);
    let batch = sample_sphere(n, 16, &mut seeded_rng(5));
    let radii = [1e-1, 1e-2, 1e-3];
    let outputs: Vec<Vector> = radii
        .iter()
        .map(|&r| {
            let cfg = EstimatorConfig::new(16, r, r).unwrap();
            let est = estimate_gradients(&affine, &x, &cfg, batch.clone()).unwrap();
            let probes = build_probe_matrices(&affine, &x, &est, r).unwrap();
            let mut all: Vec<f64> = est.grad_f.iter().copied().collect();
            all.extend(est.jac_h.iter());
            all.extend(probes.g_f.iter());
            all.extend(probes.g_h.iter());
            Vector::from_vec(all)
        })
        .collect();
    let spread = outputs.iter().map(|o| (o - &outputs[0]).amax()).fold(0.0, f64::max);

    let cubic = BlackBoxProblem::new("cubic", n, 1, ConstraintKind::Equality, |x| x.sum(), |x| {
        Vector::from_element(1, x.iter().map(|v| v * v * v).sum::<f64>())
    });
    let v = Vector::from_vec(vec![1.0, 0.5, -0.25, 0.8]);
    let exact = 3.0 * x.component_mul(&x).dot(&v);
    let scaled: Vec<f64> = radii
        .iter()
        .map(|&r| (estimate_jvp(&cubic, &x, &v, r).unwrap()[0] - exact).abs() / (r * r))
        .collect();
    let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |acc, &s| (acc.0.min(s), acc.1.max(s)));
    outcome(
        spread <= 1e-10 && lo > 0.0 && hi <= 4.0 * lo,
        format!("affine spread {spread:.2e} (tol 1e-10); cubic error/r2^2 in [{lo:.4e}, {hi:.4e}] (ratio tol 4)"),
    )
}

fn criterion_6(dir: &Path) -> Outcome {
    let cfg = load("qp_desk.toml");
    let opts = ExecuteOptions { out_dir: Some(dir.join("c6")), no_plots: true, ..Default::default() };
    let summary = execute(&cfg, &opts).unwrap();
    let med = |label: &str| summary.label(label).and_then(|l| l.final_violation.as_ref()).map_or(f64::NAN, |q| q.median);
    let (zofl, base) = (med("zofl-eq"), med("zo-baseline"));
    let h0 = summary.label("zofl-eq").and_then(|l| l.initial_violation).unwrap_or(f64::NAN);
    let objectives: Vec<f64> = summary
        .labels
        .iter()
        .filter_map(|l| l.final_objective.as_ref().map(|q| q.median))
        .collect();
    let (lo, hi) = objectives.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &f| (a.0.min(f), a.1.max(f)));
    let spread = (hi - lo) / lo.abs().max(hi.abs());
    let budgets_equal = {
        let z = summary.label("zofl-eq").unwrap();
        let b = summary.label("zo-baseline").unwrap();
        z.objective_calls + z.constraint_calls == b.objective_calls + b.constraint_calls
    };
    outcome(
        objectives.len() == summary.labels.len()
            && budgets_equal
            && zofl <= 0.5 * base
            && zofl <= 0.1 * h0
            && spread <= 0.2,
        format!(
            "median final violation zofl-eq {zofl:.3e}, zo-baseline {base:.3e}, h0 {h0:.3e}; objective spread {:.2}% (tol 20%); equal budgets {budgets_equal}",
            100.0 * spread
        ),
    )
}

fn criterion_7() -> Outcome {
    let p = make_circle_problem();
    let mut euler = Vec::new();
    let mut mid = Vec::new();
    for seed in 0..10 {
        let z = run(&p, &start(), &circle_cfg(Algorithm::ZoflEq, 2000, 20, 0.05, seed)).unwrap();
        let m = run(&p, &start(), &circle_cfg(Algorithm::ZoflMidpoint, 2000, 20, 0.05, seed)).unwrap();
        euler.push(z.tail_mean_violation(200));
        mid.push(m.tail_mean_violation(200));
    }
    let (e, m) = (median(euler), median(mid));
    outcome(m < e, format!("median floor midpoint {m:.3e} vs zofl-eq {e:.3e}"))
}

fn criterion_8() -> Outcome {
    let mut rng = seeded_rng(8);
    let mut worst: f64 = 1.0;
    let mut sizes = Vec::new();
    for _ in 0..5 {
        let a = Matrix::from_fn(2, 20, |_, _| rng.sample::<f64, _>(rand::distr::StandardUniform) * 2.0 - 1.0);
        let n = lemma_batch_size(&a, 0.1);
        sizes.push(n);
        worst = worst.min(empirical_min_eig_check(&a, n, 200, &mut rng));
    }
    outcome(
        worst >= 0.8,
        format!("worst passing fraction {worst:.3} over 5 matrices (need 0.8), N = {sizes:?}"),
    )
}

fn criterion_9(dir: &Path) -> Outcome {
    let mut cfg = load("thermal.toml");
    cfg.runs.retain(|r| r.algorithm == Algorithm::ZoflIneq);
    let opts = ExecuteOptions { out_dir: Some(dir.join("c9")), no_plots: true, ..Default::default() };
    let summary = execute(&cfg, &opts).unwrap();
    let label = summary.labels.first().expect("one run");
    let violation = label.final_violation.as_ref().map_or(f64::NAN, |q| q.median);
    let objective = label.final_objective.as_ref().map_or(f64::NAN, |q| q.median);
    let problem = cfg.problem.build().unwrap();
    let zero_start = problem.objective(&Vector::zeros(problem.dim()));
    outcome(
        violation <= 0.05 && objective <= zero_start,
        format!("median final violation {violation:.3e} (tol 0.05), objective {objective:.6e} vs zero start {zero_start:.6e}"),
    )
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn criterion_10(dir: &Path) -> Outcome {
    let mut mismatched = Vec::new();
    let mut compared = 0;
    for name in ["qp_desk.toml", "thermal.toml", "circle_bounds.toml", "qp_n100.toml"] {
        let mut cfg = load(name);
        cfg.seeds.truncate(2);
        for r in &mut cfg.runs {
            r.horizon = r.horizon.min(50);
        }
        let first = dir.join(format!("c10/{name}/first"));
        execute(&cfg, &ExecuteOptions { out_dir: Some(first.clone()), no_plots: true, ..Default::default() }).unwrap();
        let text = fs::read_to_string(first.join("resolved_config.toml")).unwrap();
        let resolved = parse_str(&text).unwrap();
        let second = dir.join(format!("c10/{name}/second"));
        execute(&resolved, &ExecuteOptions { out_dir: Some(second.clone()), no_plots: true, jobs: Some(1) }).unwrap();
        let (a, b) = (csv_bytes(&first), csv_bytes(&second));
        compared += a.len();
        if a.is_empty() || a != b {
            mismatched.push(name);
        }
    }
    outcome(
        mismatched.is_empty(),
        format!("{compared} CSVs compared across 4 experiments, mismatched experiments: {mismatched:?}"),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let criteria: Vec<(usize, &str, Duration, Check)> = vec![
        (1, "exact-oracle reduction", Duration::from_secs(1), Box::new(criterion_1)),
        (2, "per-step contraction", Duration::from_secs(1), Box::new(criterion_2)),
        (3, "bound dominance", Duration::from_secs(30), Box::new(|| criterion_3(dir))),
        (4, "complementarity solver", Duration::from_secs(10), Box::new(criterion_4)),
        (5, "estimator exactness and bias order", Duration::from_secs(5), Box::new(criterion_5)),
        (6, "desk-scale QP experiment", Duration::from_secs(120), Box::new(|| criterion_6(dir))),
        (7, "midpoint improvement", Duration::from_secs(60), Box::new(criterion_7)),
        (8, "small-ball eigenvalue check", Duration::from_secs(10), Box::new(criterion_8)),
        (9, "thermal inequality run", Duration::from_secs(120), Box::new(|| criterion_9(dir))),
        (10, "reproducibility", Duration::MAX, Box::new(|| criterion_10(dir))),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, limit, check) in &criteria {
        if !only.is_empty() && !only.contains(id) {
            continue;
        }
        let clock = Instant::now();
        let result = check();
        let elapsed = clock.elapsed();
        let in_time = elapsed <= *limit;
        let pass = result.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit_text = if *limit == Duration::MAX { String::new() } else { format!(", limit {}s", limit.as_secs()) };
        println!(
            "{} criterion {id} ({name}): {} [{:.2}s{limit_text}]",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
