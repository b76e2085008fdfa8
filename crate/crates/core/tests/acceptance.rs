//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria 6 and 9 are known red (see README). The process exits nonzero
//! when any other criterion fails, or when a known-red criterion passes.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsmpc_core::sim_harness::{nearest_rank, run_alpha_sweep, EnvelopeResult, ExperimentSettings};
use rsmpc_core::{
    build_tree, compose_risk, cvar_envelope, cvar_primal, evaluate_risk, expectation_envelope, solve_pe, verify_terminal,
    CostSequenceTree, Mat, MpcController, Plant, Pmf, TerminalDesign, Vector,
};

const KNOWN_RED: [u32; 2] = [6, 9];
const ALPHAS: [f64; 3] = [0.001, 0.5, 1.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn benchmark_designs() -> Vec<(f64, Vec<Pmf>, Result<TerminalDesign, String>, Duration)> {
    let plant = Plant::second_order_benchmark();
    ALPHAS
        .iter()
        .map(|&a| {
            let v = cvar_envelope(plant.model.pmf(), a).unwrap().with_vertices().unwrap().vertices().to_vec();
            let t = Instant::now();
            let d = solve_pe(&plant, &v).map_err(|e| e.to_string());
            (a, v, d, t.elapsed())
        })
        .collect()
}

fn tree_counts() -> Outcome {
    let t = Instant::now();
    let counts: Vec<usize> = (2..=5).map(|n| build_tree(6, n).unwrap().control_count()).collect();
    let el = t.elapsed();
    outcome(counts == [7, 43, 259, 1555] && el < Duration::from_secs(1), format!("counts {counts:?}, {el:.2?} (limit 1s)"))
}

fn cvar_dual_primal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let t = Instant::now();
    for _ in 0..1000 {
        let l = rng.random_range(1..=8);
        let w: Vec<f64> = (0..l).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let mut p: Vec<f64> = w.iter().map(|v| v / total).collect();
        p[l - 1] = 1.0 - p[..l - 1].iter().sum::<f64>();
        let p = Pmf::nominal(p).unwrap();
        let alpha = rng.random_range(0.001..=1.0);
        let z: Vec<f64> = (0..l).map(|_| rng.random_range(-10.0..10.0)).collect();
        let env = cvar_envelope(&p, alpha).unwrap().with_vertices().unwrap();
        let dual = evaluate_risk(env.vertices(), &z).unwrap();
        worst = worst.max((dual - cvar_primal(&p, alpha, &z).unwrap()).abs());
    }
    outcome(worst <= 1e-8, format!("max |dual - primal| {worst:.2e} (tol 1e-8), {:.2?}", t.elapsed()))
}

fn multiplier_fixture() -> Outcome {
    let (m, p, x0) = ([0.5, 1.1], [0.2, 0.8], 1.7f64);
    let pmf = Pmf::nominal(p.to_vec()).unwrap();
    let cvar = cvar_envelope(&pmf, 0.5).unwrap().with_vertices().unwrap();
    let expectation = expectation_envelope(&pmf).with_vertices().unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..=20usize {
        let tree = CostSequenceTree::from_fn(k, 2, |h| {
            if h.len() == k {
                x0 * x0 * h.iter().map(|j| m[*j]).product::<f64>()
            } else {
                0.0
            }
        })
        .unwrap();
        for (env, base) in [(&cvar, 1.1f64), (&expectation, 0.98)] {
            let exact = base.powi(k as i32) * x0 * x0;
            worst = worst.max((compose_risk(&tree, env).unwrap() - exact).abs() / exact);
        }
    }
    let plant = common::scalar_plant(&[m[0].sqrt(), m[1].sqrt()], 1.0, &p, 10.0, 10.0);
    let design = TerminalDesign::from_matrices(
        Mat::from_element(1, 1, 0.01),
        Mat::from_element(1, 1, 100.0),
        Mat::from_element(1, 1, 0.0),
    )
    .unwrap();
    let margin = |v: &[Pmf]| verify_terminal(&plant, v, &design).unwrap().stability.into_iter().fold(f64::NEG_INFINITY, f64::max);
    let (me, mc) = (margin(expectation.vertices()), margin(cvar.vertices()));
    outcome(
        worst <= 1e-10 && me < 0.0 && mc > 0.0,
        format!("max rel err {worst:.2e} (tol 1e-10); stability margin {me:+.3} expectation, {mc:+.3} CVaR_0.5"),
    )
}

fn synthesis(designs: &[(f64, Vec<Pmf>, Result<TerminalDesign, String>, Duration)]) -> Outcome {
    let plant = Plant::second_order_benchmark();
    let mut pass = true;
    let mut parts = Vec::new();
    for (a, v, d, el) in designs {
        match d {
            Ok(d) => {
                let worst = verify_terminal(&plant, v, d).unwrap().worst();
                pass &= worst < -1e-9 && *el < Duration::from_secs(10);
                parts.push(format!("a={a}: worst margin {worst:.2e}, {el:.2?}"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("a={a}: {e}"));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn invariance(designs: &[(f64, Vec<Pmf>, Result<TerminalDesign, String>, Duration)]) -> Outcome {
    let plant = Plant::second_order_benchmark();
    let t = Instant::now();
    let mut total = 0;
    let mut worst = f64::NEG_INFINITY;
    for (i, (_, _, d, _)) in designs.iter().enumerate() {
        let Ok(d) = d else { return outcome(false, "missing design") };
        let (bad, w) = common::invariance_violations(&plant, d, 100_000, 100 + i as u64, 1e-7);
        total += bad;
        worst = worst.max(w);
    }
    let el = t.elapsed();
    outcome(
        total == 0 && el < Duration::from_secs(30 * designs.len() as u64),
        format!("{total} violations over 3x1e5 points, worst margin {worst:.2e}, {el:.2?}"),
    )
}

fn sweep(x0: [f64; 2], runs: usize) -> Vec<EnvelopeResult> {
    let settings = ExperimentSettings {
        model_file: None,
        envelopes: Vec::new(),
        alphas: ALPHAS.to_vec(),
        horizon: 4,
        steps: 15,
        runs,
        seed: 1,
        x0: x0.to_vec(),
        snapshots: vec![14],
        quantiles: vec![0.99],
        out: None,
    };
    run_alpha_sweep(&Plant::second_order_benchmark(), &settings, None).unwrap().envelopes
}

fn closed_loop_summary(envs: &[EnvelopeResult]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for e in envs {
        if let Some(err) = &e.error {
            ok = false;
            parts.push(format!("{}: {err}", e.label));
            continue;
        }
        ok &= e.feasible_runs == e.runs && e.violations == 0;
        parts.push(format!("{}: feasible {}/{}, violations {}", e.label, e.feasible_runs, e.runs, e.violations));
    }
    if !ok {
        return (false, parts.join("; "));
    }
    let stats: Vec<(f64, f64)> = envs
        .iter()
        .map(|e| {
            let mut c = e.cumulative_at(14);
            c.sort_by(f64::total_cmp);
            (nearest_rank(&c, 0.99).unwrap_or(f64::NAN), c.iter().sum::<f64>() / c.len() as f64)
        })
        .collect();
    let (first, last) = (stats[0], stats[stats.len() - 1]);
    let trend = first.0 <= last.0 && first.1 >= last.1 - 1e-6;
    for (e, (q, m)) in envs.iter().zip(&stats) {
        parts.push(format!("{}: q99 {q:.3}, mean {m:.3}", e.label));
    }
    (trend, parts.join("; "))
}

fn closed_loop(far: &[EnvelopeResult]) -> Outcome {
    let (pass, detail) = closed_loop_summary(far);
    outcome(pass, format!("x0=(6,1), 1000 runs: {detail}"))
}

fn lyapunov(far: &[EnvelopeResult]) -> Outcome {
    let runs: usize = far.iter().map(|e| e.trajectories.len()).sum();
    let bad: usize = far.iter().map(|e| e.lyapunov_violations).sum();
    outcome(runs > 0 && bad == 0, format!("x0=(6,1): {runs} trajectories, {bad} violating steps"))
}

fn program_shape() -> Outcome {
    let plant = common::scalar_plant(&[0.9, 0.95, 1.0, 1.05, 1.1, 0.8], 1.0, &[0.1, 0.2, 0.2, 0.2, 0.2, 0.1], 10.0, 10.0);
    let (v, d) = common::cvar_design(&plant, 0.3);
    let m = v.len();
    let c = |n| MpcController::new(plant.clone(), d.clone(), v.clone(), n).unwrap();
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for n in 2..=4u32 {
        let p = c(n as usize).build_program(&Vector::from_element(1, 0.1)).unwrap();
        let expected = (6usize.pow(n) - 1) / 5;
        pass &= p.tau.len() == expected && p.stats.vertex_inequalities == m * expected;
        parts.push(format!("N={n}: tau {} ineq {}", p.tau.len(), p.stats.vertex_inequalities));
    }
    let el = t.elapsed();
    outcome(pass && el < Duration::from_secs(1), format!("M={m}; {}; {el:.2?}", parts.join(", ")))
}

fn grid_oracle() -> Outcome {
    let (a, p, alpha, x0) = ([0.9, 1.15], [0.4, 0.6], 0.5, 1.0);
    let plant = common::scalar_plant(&a, 1.0, &p, 4.0, 1.0);
    let (v, d) = common::cvar_design(&plant, alpha);
    let t = Instant::now();
    let j = MpcController::new(plant, d.clone(), v, 2).unwrap().solve_step(&Vector::from_element(1, x0)).unwrap().objective;
    let grid = common::grid_minimum(&a, &p, alpha, &d, x0, 4.0, 1.0);
    let el = t.elapsed();
    outcome(
        j <= grid + 1e-7 && j >= 0.98 * grid && el < Duration::from_secs(60),
        format!("J* {j:.6}, grid {grid:.6}, ratio {:.5}, {el:.2?}", j / grid),
    )
}

fn main() {
    let started = Instant::now();
    let designs = benchmark_designs();
    let far = sweep([6.0, 1.0], 1000);
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "scenario tree counts", Box::new(tree_counts)),
        (2, "CVaR dual equals primal", Box::new(cvar_dual_primal)),
        (3, "multiplier fixture", Box::new(multiplier_fixture)),
        (4, "terminal synthesis", Box::new(|| synthesis(&designs))),
        (5, "terminal invariance", Box::new(|| invariance(&designs))),
        (6, "closed loop from (6,1)", Box::new(|| closed_loop(&far))),
        (7, "program shape", Box::new(program_shape)),
        (8, "grid oracle", Box::new(grid_oracle)),
        (9, "Lyapunov decrease", Box::new(|| lyapunov(&far))),
    ];

    let mut unexpected = Vec::new();
    for (id, name, check) in &criteria {
        let o = check();
        let known = KNOWN_RED.contains(id);
        let tag = match (o.pass, known) {
            (true, false) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (known)",
            (true, true) => "PASS (unexpected)",
        };
        if o.pass == known {
            unexpected.push(*id);
        }
        println!("[{tag}] {id}. {name}: {}", o.detail);
    }

    // Diagnostics from a start inside the feasible region.
    let runs = 100;
    let inner = sweep([1.8, 0.3], runs);
    let (trend, detail) = closed_loop_summary(&inner);
    println!("[INFO] closed loop from (1.8,0.3), {runs} runs: {detail}; trend holds: {trend}");
    for e in &inner {
        println!(
            "[INFO] Lyapunov from (1.8,0.3), {}: {} violating steps, max gap {:.2e}",
            e.label,
            e.lyapunov_violations,
            e.max_lyapunov_gap.unwrap_or(f64::NAN)
        );
    }
    if let Some(Ok(d)) = designs.first().map(|d| &d.2) {
        let x = Vector::from_vec(vec![6.0, 1.0]);
        println!("[INFO] (6,1) in terminal set for a=0.001: {}", d.ellipsoid.in_ellipsoid(&x).unwrap().inside);
    }
    println!("[INFO] total {:.1?}", started.elapsed());

    if !unexpected.is_empty() {
        eprintln!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}

