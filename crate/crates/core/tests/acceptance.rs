//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p mfg-core --test acceptance`.

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use mfg_core::eval::{
    atlas_distance, exploitability, max_one_step_deviation, rollout_population, statistical_trajectory,
    tagged_agent_return, Conditioning,
};
use mfg_core::exact::{stage_q, BackwardSolution};
use mfg_core::rl::{expected_sarsa_batch, pg_gradient, pg_objective, RlSolution};
use mfg_core::rng::{Domain, StreamKey};
use mfg_core::*;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Fixture {
    env: EnvModel,
    grid: Arc<SimplexGrid>,
    exact: BackwardSolution,
    rl: RlSolution,
    rl_seconds: f64,
}

fn malware() -> EnvModel {
    malware_env(MalwareParams {
        k: 0.2,
        lambda: 0.5,
        q: 0.9,
        delta: 0.9,
        horizon: 60,
    })
    .unwrap()
}

fn rl_config() -> RlConfig {
    RlConfig {
        sarsa_alpha: 0.1,
        seed: 2024,
        ..RlConfig::default()
    }
}

fn fixture() -> Fixture {
    let env = malware();
    let grid = Arc::new(build_grid(2, 50).unwrap());
    let exact = backward_solve(&env, grid.clone(), &FixedPointConfig::default()).unwrap();
    let start = Instant::now();
    let rl = rl_backward_solve(&env, grid.clone(), &rl_config()).unwrap();
    let rl_seconds = start.elapsed().as_secs_f64();
    Fixture {
        env,
        grid,
        exact,
        rl,
        rl_seconds,
    }
}

fn rl_matches_exact(f: &Fixture) -> Outcome {
    let tv = atlas_distance(&f.exact.atlas, &f.rl.atlas, 1).unwrap();
    let dv = f
        .exact
        .tables
        .iter()
        .zip(&f.rl.tables)
        .flat_map(|(a, b)| a.values().iter().zip(b.values()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max);
    let dv1 = f
        .exact
        .stage_tables(1)
        .values()
        .iter()
        .zip(f.rl.stage_tables(1).values())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    outcome(
        tv <= 0.05 && dv <= 0.05 && f.rl_seconds <= 900.0,
        format!(
            "stage-1 TV {tv:.4} (<= 0.05), max |V_exact - V_rl| {dv1:.4} at stage 1 and {dv:.4} over all stages (<= 0.05), model-free solve {:.1}s",
            f.rl_seconds
        ),
    )
}

fn exact_certificate(f: &Fixture) -> Outcome {
    let gap = |m: usize| {
        let grid = Arc::new(build_grid(2, m).unwrap());
        let sol = backward_solve(&f.env, grid, &FixedPointConfig::default()).unwrap();
        exploitability(&sol.atlas, &f.env).unwrap().max_gap()
    };
    let g50 = exploitability(&f.exact.atlas, &f.env).unwrap().max_gap();
    let (g25, g100) = (gap(25), gap(100));
    outcome(
        g50 <= 5e-3 && g25 > g50 && g50 > g100,
        format!("max gap M=25 {g25:.3e}, M=50 {g50:.3e} (<= 5e-3), M=100 {g100:.3e}; strictly decreasing"),
    )
}

fn monte_carlo_values(f: &Fixture) -> Outcome {
    let points = [0, 12, 25, 37, 50];
    let mut inside = 0;
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for &g in &points {
        for x in 0..2 {
            let key = StreamKey::new(99, Domain::Rollout).grid_index(g).batch(x);
            let est = tagged_agent_return(f.grid.point(g), x, &f.exact.atlas, &f.env, 100_000, key).unwrap();
            let v = f.exact.stage_tables(1).v(g, x);
            if est.contains(v) {
                inside += 1;
            }
            worst = worst.max((est.mean - v).abs() / est.ci);
            lines.push(format!(
                "z1={:.2},x={x}: {:.4}±{:.4} vs {v:.4}",
                f.grid.point(g)[1],
                est.mean,
                est.ci
            ));
        }
    }
    outcome(
        inside == 2 * points.len(),
        format!(
            "{inside}/10 inside the 99% CI (worst |error|/halfwidth {worst:.2}); {}",
            lines.join("; ")
        ),
    )
}

fn one_step_deviation(f: &Fixture) -> Outcome {
    let dev = max_one_step_deviation(&f.exact.tables);
    outcome(dev <= 1e-6, format!("max_(t,z,x,a) Q - V = {dev:.3e} (<= 1e-6)"))
}

fn population_consistency(f: &Fixture) -> Outcome {
    let z1 = MeanFieldState::binary(0.0).unwrap();
    let flow = statistical_trajectory(&z1, &f.exact.atlas, &f.env).unwrap();
    let mass = flow
        .iter()
        .map(|z| (z.probs().iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let key = StreamKey::new(seed, Domain::Rollout);
        let r = rollout_population(10_000, &z1, &f.exact.atlas, &f.env, Conditioning::Empirical, key).unwrap();
        worst = worst.max(r.max_deviation());
    }
    outcome(
        flow.len() == 60 && mass <= 1e-12 && worst <= 0.03,
        format!(
            "{} stages, max |sum z - 1| {mass:.1e} (<= 1e-12); max_t |z_emp - z_stat| at N=10^4 over 10 seeds {worst:.4} (<= 0.03)",
            flow.len()
        ),
    )
}

fn sarsa_fidelity(f: &Fixture) -> Outcome {
    let cfg = RlConfig {
        batch_size: 5000,
        sarsa_alpha: 0.05,
        ..rl_config()
    };
    let terminal = StageTables::terminal(f.grid.len(), 2, 2);
    let kernel = f.env.kernel().unwrap();
    let mut estimate_err = 0.0f64;
    let mut running_err = Vec::new();
    for t in [1, 30, 59, 60] {
        let v_next = if t == 60 {
            &terminal
        } else {
            f.exact.stage_tables(t + 1)
        };
        let mut running = 0.0f64;
        for (g, z) in f.grid.points().iter().enumerate() {
            let gamma = f.exact.atlas.at(t, g);
            let exact = stage_q(z, gamma, v_next, &f.grid, &f.env).unwrap();
            let z_next = propagate_mean_field(z, gamma, kernel).unwrap();
            let key = StreamKey::new(cfg.seed, Domain::Sarsa).stage(t).grid_index(g);
            let q0 = QSlice::filled(2, 2, 0.0);
            let batch = expected_sarsa_batch(z, &z_next, v_next, &f.grid, &f.env, &q0, &cfg, key).unwrap();
            estimate_err = estimate_err.max(batch.estimate(cfg.estimator).sup_distance(&exact));
            running = running.max(batch.running.sup_distance(&exact));
        }
        running_err.push(format!("t={t}: {running:.4}"));
    }
    outcome(
        estimate_err <= 0.02,
        format!(
            "L=5000, alpha=0.05, every grid z at stages 1, 30, 59, 60: max |Q_hat - Q| {estimate_err:.4} (<= 0.02); last running iterate alone: {}",
            running_err.join(", ")
        ),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = StreamKey::new(0, Domain::Test).rng();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(2..=4);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let q = QSlice::from_rows(&rows);
        let logits: Vec<f64> = (0..n * m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let grad = pg_gradient(&q, &logits);
        for i in 0..logits.len() {
            let (mut up, mut dn) = (logits.clone(), logits.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (pg_objective(&q, &up) - pg_objective(&q, &dn)) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs());
        }
    }
    outcome(
        worst < 1e-6,
        format!("100 random instances, max |analytic - central difference| {worst:.2e} (< 1e-6)"),
    )
}

fn write_artifacts(dir: &Path, f: &Fixture, rl: &RlSolution) {
    io::write_atlas(&dir.join("exact_atlas.csv"), &f.exact.atlas).unwrap();
    io::write_values(&dir.join("exact_values.csv"), &f.exact.tables).unwrap();
    io::write_atlas(&dir.join("rl_atlas.csv"), &rl.atlas).unwrap();
    io::write_values(&dir.join("rl_values.csv"), &rl.tables).unwrap();
    let rows: Vec<io::DiagnosticRow> = rl.diagnostics.iter().map(io::DiagnosticRow::from).collect();
    io::write_diagnostics(&dir.join("rl_diagnostics.csv"), &rows).unwrap();
    let report = exploitability(&f.exact.atlas, &f.env).unwrap();
    io::write_exploitability(&dir.join("exploitability.csv"), &report).unwrap();
    let key = StreamKey::new(rl_config().seed, Domain::Rollout);
    let traj = rollout_population(
        10_000,
        &MeanFieldState::binary(0.0).unwrap(),
        &rl.atlas,
        &f.env,
        Conditioning::Empirical,
        key,
    )
    .unwrap();
    io::write_trajectory(&dir.join("trajectory.csv"), &traj).unwrap();
}

fn determinism(f: &Fixture) -> Outcome {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    write_artifacts(first.path(), f, &f.rl);
    let exact_again = backward_solve(&f.env, f.grid.clone(), &FixedPointConfig::default()).unwrap();
    let rl_again = rl_backward_solve(&f.env, f.grid.clone(), &rl_config()).unwrap();
    let again = Fixture {
        env: malware(),
        grid: f.grid.clone(),
        exact: exact_again,
        rl: rl_again,
        rl_seconds: 0.0,
    };
    write_artifacts(second.path(), &again, &again.rl);
    let mut names: Vec<String> = std::fs::read_dir(first.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| io::read_bytes(&first.path().join(n)).unwrap() != io::read_bytes(&second.path().join(n)).unwrap())
        .collect();
    outcome(
        differing.is_empty() && names.len() == 7,
        format!(
            "{} artifacts from two independent runs, {} differ {:?}",
            names.len(),
            differing.len(),
            differing
        ),
    )
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() -> ExitCode {
    let started = Instant::now();
    let f = fixture();
    let checks: Vec<(&str, Check)> = vec![
        ("1 RL vs exact agreement", Box::new(|| rl_matches_exact(&f))),
        ("2 exploitability certificate", Box::new(|| exact_certificate(&f))),
        ("3 Monte-Carlo value check", Box::new(|| monte_carlo_values(&f))),
        ("4 one-step deviation", Box::new(|| one_step_deviation(&f))),
        (
            "5 population dynamics consistency",
            Box::new(|| population_consistency(&f)),
        ),
        ("6 Expected Sarsa fidelity", Box::new(|| sarsa_fidelity(&f))),
        ("7 policy-gradient correctness", Box::new(gradient_check)),
        ("8 determinism", Box::new(|| determinism(&f))),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} of 8 criteria passed in {:.1}s",
        8 - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
