//! Model-free backward solver.
//!
//! Same backward structure as [`crate::exact`], but the per-stage Q values
//! come from batched Expected Sarsa on sampled transitions and the stage
//! fixed point is approached by alternating Q re-estimation under the
//! current prescription with softmax policy-gradient ascent on the fixed Q.
//!
//! Within one Sarsa batch each `(x, a)` pair owns its random stream and its
//! update never reads another pair's entry, so the sweep order over pairs
//! does not change the result.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::propagate_mean_field;
use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::prescription::{softmax_prescription, softmax_row, PolicyAtlas, Prescription};
use crate::rng::{Domain, StreamKey};
use crate::simplex::{MeanFieldState, SimplexGrid};
use crate::tables::{interpolate_values, QSlice, StageTables};

/// Step size used by the policy-gradient call at outer iteration `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgSchedule {
    /// `pg_lr` at every iteration.
    Constant,
    /// `pg_lr / n`.
    Harmonic,
    /// `pg_lr / sqrt(n)`.
    InverseSqrt,
}

impl PgSchedule {
    pub fn step(self, base: f64, n: usize) -> f64 {
        match self {
            PgSchedule::Constant => base,
            PgSchedule::Harmonic => base / n as f64,
            PgSchedule::InverseSqrt => base / (n as f64).sqrt(),
        }
    }
}

/// Which Sarsa iterate is handed to the policy-gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QEstimator {
    /// The running Q after the last sweep.
    Final,
    /// Mean of the running Q over the last half of the sweeps.
    TailAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    /// Sarsa sweeps over all `(x, a)` pairs per batch.
    pub batch_size: usize,
    /// Outer Sarsa / policy-gradient iterations per grid state.
    pub policy_iters: usize,
    pub sarsa_alpha: f64,
    /// Gradient-ascent steps per policy-gradient call.
    pub pg_steps: usize,
    pub pg_lr: f64,
    pub pg_schedule: PgSchedule,
    /// Set by the caller rather than read from configuration files.
    #[serde(skip)]
    pub seed: u64,
    pub q_init: f64,
    pub estimator: QEstimator,
    /// Samples per `(x, a)` for the empirical mean-field pushforward used
    /// when the environment has no kernel.
    pub pushforward_samples: usize,
    /// A stage point counts as converged when both its last policy change
    /// and its best-response residual are at most this.
    pub convergence_tol: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            batch_size: 2000,
            policy_iters: 50,
            sarsa_alpha: 0.1,
            pg_steps: 100,
            pg_lr: 5.0,
            pg_schedule: PgSchedule::Harmonic,
            seed: 0,
            q_init: 0.0,
            estimator: QEstimator::TailAverage,
            pushforward_samples: 10_000,
            convergence_tol: 0.05,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if self.policy_iters < 1 {
            return bad("policy_iters must be >= 1".into());
        }
        if !(self.sarsa_alpha > 0.0 && self.sarsa_alpha <= 1.0) {
            return bad(format!("sarsa_alpha {} outside (0, 1]", self.sarsa_alpha));
        }
        if !(self.pg_lr > 0.0 && self.pg_lr.is_finite()) {
            return bad(format!("pg_lr {} must be > 0", self.pg_lr));
        }
        if !self.q_init.is_finite() {
            return bad("q_init must be finite".into());
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return bad("convergence_tol must be >= 0".into());
        }
        if self.pushforward_samples < 1 {
            return bad("pushforward_samples must be >= 1".into());
        }
        Ok(())
    }
}

/// Result of one Sarsa batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SarsaBatch {
    /// Running Q after the last sweep; carried into the next batch.
    pub running: QSlice,
    /// Mean of the running Q over the last `ceil(L / 2)` sweeps.
    pub tail_mean: QSlice,
}

impl SarsaBatch {
    pub fn estimate(&self, estimator: QEstimator) -> &QSlice {
        match estimator {
            QEstimator::Final => &self.running,
            QEstimator::TailAverage => &self.tail_mean,
        }
    }
}

/// `z_{t+1} = phi(z, gamma)`: exact with a kernel, otherwise the empirical
/// pushforward of `cfg.pushforward_samples` draws per `(x, a)`.
pub fn next_mean_field(
    z: &MeanFieldState,
    gamma: &Prescription,
    env: &EnvModel,
    cfg: &RlConfig,
    key: StreamKey,
) -> Result<MeanFieldState> {
    if let Some(kernel) = env.kernel() {
        return propagate_mean_field(z, gamma, kernel);
    }
    let (n, m) = (env.n_types(), env.n_actions());
    let sampler = env.prepare_sampler(z)?;
    let mut next = vec![0.0; n];
    let per = cfg.pushforward_samples as f64;
    for x in 0..n {
        for a in 0..m {
            let w = z[x] * gamma.prob(x, a);
            if w == 0.0 {
                continue;
            }
            let mut rng = StreamKey {
                domain: Domain::SamplerPushforward,
                ..key
            }
            .pair(x * m + a)
            .rng();
            for _ in 0..cfg.pushforward_samples {
                next[sampler.sample(x, a, &mut rng)] += w / per;
            }
        }
    }
    MeanFieldState::from_unnormalized(next)
}

/// `L` Expected Sarsa sweeps over every `(x, a)` at state `z`, with the
/// continuation evaluated at the precomputed next mean field `z_next`:
/// `Q(x, a) <- (1 - alpha) Q(x, a) + alpha (R(x, a, z) + delta V_{t+1}(z_next, x'))`.
#[allow(clippy::too_many_arguments)]
pub fn expected_sarsa_batch(
    z: &MeanFieldState,
    z_next: &MeanFieldState,
    v_next: &StageTables,
    grid: &SimplexGrid,
    env: &EnvModel,
    q_in: &QSlice,
    cfg: &RlConfig,
    key: StreamKey,
) -> Result<SarsaBatch> {
    let (n, m) = (env.n_types(), env.n_actions());
    let continuation = interpolate_values(v_next, z_next, grid);
    let sampler = env.prepare_sampler(z)?;
    let alpha = cfg.sarsa_alpha;
    let delta = env.discount();
    let sweeps = cfg.batch_size;
    let tail = sweeps.div_ceil(2);

    let mut running = q_in.clone();
    let mut tail_mean = QSlice::filled(n, m, 0.0);
    for x in 0..n {
        for a in 0..m {
            let reward = env.reward(x, a, z);
            let mut rng = StreamKey {
                domain: Domain::Sarsa,
                ..key
            }
            .pair(x * m + a)
            .rng();
            let mut q = q_in.get(x, a);
            let mut acc = 0.0;
            for l in 0..sweeps {
                let y = sampler.sample(x, a, &mut rng);
                let target = reward + delta * continuation[y];
                q = (1.0 - alpha) * q + alpha * target;
                if l >= sweeps - tail {
                    acc += q;
                }
            }
            running.set(x, a, q);
            tail_mean.set(x, a, acc / tail as f64);
        }
    }
    Ok(SarsaBatch { running, tail_mean })
}

/// `J(logits) = sum_x sum_a softmax(logits)[x, a] q[x, a]`.
pub fn pg_objective(q: &QSlice, logits: &[f64]) -> f64 {
    let p = softmax_prescription(q.n_types(), q.n_actions(), logits);
    (0..q.n_types()).map(|x| q.expected(&p, x)).sum()
}

/// Exact gradient `dJ/dlogits[x, a] = p[x, a] (q[x, a] - sum_b p[x, b] q[x, b])`.
pub fn pg_gradient(q: &QSlice, logits: &[f64]) -> Vec<f64> {
    let m = q.n_actions();
    let mut grad = vec![0.0; logits.len()];
    let mut p = vec![0.0; m];
    for x in 0..q.n_types() {
        softmax_row(&logits[x * m..(x + 1) * m], &mut p);
        let row = q.row(x);
        let mean: f64 = p.iter().zip(row).map(|(a, b)| a * b).sum();
        for a in 0..m {
            grad[x * m + a] = p[a] * (row[a] - mean);
        }
    }
    grad
}

/// `steps` gradient-ascent steps of size `lr` on `J` with `q` held fixed.
pub fn policy_gradient(q: &QSlice, logits_in: &[f64], steps: usize, lr: f64) -> Vec<f64> {
    let mut logits = logits_in.to_vec();
    let spread = (0..q.n_types())
        .map(|x| {
            let r = q.row(x);
            r.iter().copied().fold(f64::NEG_INFINITY, f64::max) - r.iter().copied().fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    // Ascent is monotone while lr stays below the inverse smoothness of J.
    let check = cfg!(debug_assertions) && lr * spread <= 1.0;
    let mut j = if check { pg_objective(q, &logits) } else { 0.0 };
    for _ in 0..steps {
        let grad = pg_gradient(q, &logits);
        for (l, g) in logits.iter_mut().zip(&grad) {
            *l += lr * g;
        }
        if check {
            let next = pg_objective(q, &logits);
            debug_assert!(next >= j - 1e-12, "policy-gradient ascent decreased J: {j} -> {next}");
            j = next;
        }
    }
    logits
}

#[derive(Debug, Clone)]
pub struct RlStageSolution {
    pub gamma: Prescription,
    /// Q estimated under the returned prescription.
    pub q: QSlice,
    /// Sup-norm prescription change at each outer iteration.
    pub changes: Vec<f64>,
    /// `max_x (max_a Q - E^gamma Q)` on the returned estimate.
    pub residual: f64,
}

impl RlStageSolution {
    pub fn final_change(&self) -> f64 {
        self.changes.last().copied().unwrap_or(0.0)
    }
}

/// Alternates Sarsa re-estimation under `gamma_{n-1}` with policy-gradient
/// updates of the logits for `n = 1..I`, then evaluates Q once more under
/// the returned prescription.
pub fn solve_stage_rl(
    z: &MeanFieldState,
    v_next: &StageTables,
    grid: &SimplexGrid,
    env: &EnvModel,
    cfg: &RlConfig,
    stage: usize,
    grid_index: usize,
) -> Result<RlStageSolution> {
    let (n, m) = (env.n_types(), env.n_actions());
    let key = StreamKey::new(cfg.seed, Domain::Sarsa)
        .stage(stage)
        .grid_index(grid_index);
    let mut logits = vec![0.0; n * m];
    let mut gamma = Prescription::uniform(n, m);
    let mut running = QSlice::filled(n, m, cfg.q_init);
    let mut changes = Vec::with_capacity(cfg.policy_iters);

    for iter in 1..=cfg.policy_iters {
        let batch_key = key.batch(iter);
        let z_next = next_mean_field(z, &gamma, env, cfg, batch_key)?;
        let batch = expected_sarsa_batch(z, &z_next, v_next, grid, env, &running, cfg, batch_key)?;
        logits = policy_gradient(
            batch.estimate(cfg.estimator),
            &logits,
            cfg.pg_steps,
            cfg.pg_schedule.step(cfg.pg_lr, iter),
        );
        let next = softmax_prescription(n, m, &logits);
        changes.push(next.sup_distance(&gamma));
        gamma = next;
        running = batch.running;
    }

    let eval_key = key.batch(cfg.policy_iters + 1);
    let z_next = next_mean_field(z, &gamma, env, cfg, eval_key)?;
    let batch = expected_sarsa_batch(z, &z_next, v_next, grid, env, &running, cfg, eval_key)?;
    let q = batch.estimate(cfg.estimator).clone();
    let residual = q.best_response_gap(&gamma);
    Ok(RlStageSolution {
        gamma,
        q,
        changes,
        residual,
    })
}

/// Per-`(t, grid point)` convergence record of the model-free solver.
#[derive(Debug, Clone, PartialEq)]
pub struct RlDiagnostic {
    pub stage: usize,
    pub grid_index: usize,
    pub converged: bool,
    pub iters: usize,
    pub final_change: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct RlSolution {
    pub atlas: PolicyAtlas,
    pub tables: Vec<StageTables>,
    pub diagnostics: Vec<RlDiagnostic>,
}

impl RlSolution {
    pub fn stage_tables(&self, t: usize) -> &StageTables {
        &self.tables[t - 1]
    }

    pub fn non_converged(&self) -> impl Iterator<Item = &RlDiagnostic> {
        self.diagnostics.iter().filter(|d| !d.converged)
    }
}

pub fn rl_backward_solve(env: &EnvModel, grid: Arc<SimplexGrid>, cfg: &RlConfig) -> Result<RlSolution> {
    cfg.validate()?;
    if grid.n_types() != env.n_types() {
        return Err(Error::DimensionMismatch(format!(
            "grid over {} types, environment has {}",
            grid.n_types(),
            env.n_types()
        )));
    }
    let horizon = env.horizon();
    let (n, m) = (env.n_types(), env.n_actions());
    let mut v_next = StageTables::terminal(grid.len(), n, m);
    let mut stages = vec![Vec::new(); horizon];
    let mut tables = vec![v_next.clone(); horizon];
    let mut diagnostics = Vec::with_capacity(horizon * grid.len());

    for t in (1..=horizon).rev() {
        let solved = (0..grid.len())
            .into_par_iter()
            .map(|g| {
                solve_stage_rl(grid.point(g), &v_next, &grid, env, cfg, t, g).map_err(|e| Error::Stage {
                    stage: t,
                    grid_index: g,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut prescriptions = Vec::with_capacity(grid.len());
        let mut slices = Vec::with_capacity(grid.len());
        for (g, sol) in solved.into_iter().enumerate() {
            diagnostics.push(RlDiagnostic {
                stage: t,
                grid_index: g,
                converged: sol.final_change() <= cfg.convergence_tol && sol.residual <= cfg.convergence_tol,
                iters: sol.changes.len(),
                final_change: sol.final_change(),
                residual: sol.residual,
            });
            prescriptions.push(sol.gamma);
            slices.push(sol.q);
        }
        let table = StageTables::from_slices(&slices, &prescriptions)?;
        v_next = table.clone();
        tables[t - 1] = table;
        stages[t - 1] = prescriptions;
    }
    diagnostics.sort_by_key(|d| (d.stage, d.grid_index));
    let atlas = PolicyAtlas::new(grid, m, stages)?;
    Ok(RlSolution {
        atlas,
        tables,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{malware_env, MalwareParams};
    use crate::exact::stage_q;
    use crate::simplex::build_grid;
    use approx::assert_abs_diff_eq;

    fn malware() -> EnvModel {
        malware_env(MalwareParams::default()).unwrap()
    }

    fn key() -> StreamKey {
        StreamKey::new(42, Domain::Sarsa).stage(3).grid_index(1)
    }

    #[test]
    fn full_overwrite_on_deterministic_rows() {
        let env = malware();
        let grid = build_grid(2, 10).unwrap();
        let v: Vec<f64> = (0..22).map(|i| -0.1 * i as f64).collect();
        let v_next = StageTables::from_values(11, 2, 2, v, None).unwrap();
        let z = MeanFieldState::binary(0.3).unwrap();
        let gamma = Prescription::uniform(2, 2);
        let z_next = propagate_mean_field(&z, &gamma, env.kernel().unwrap()).unwrap();
        let cfg = RlConfig {
            batch_size: 1,
            sarsa_alpha: 1.0,
            ..RlConfig::default()
        };
        let q_in = QSlice::filled(2, 2, 123.0);
        let out = expected_sarsa_batch(&z, &z_next, &v_next, &grid, &env, &q_in, &cfg, key()).unwrap();
        let v0 = crate::tables::interpolate_value(&v_next, &z_next, 0, &grid);
        for x in 0..2 {
            let expected = env.reward(x, 1, &z) + env.discount() * v0;
            assert_eq!(out.running.get(x, 1), expected);
            assert_eq!(out.tail_mean.get(x, 1), expected);
        }
    }

    #[test]
    fn single_update_arithmetic() {
        // x = 1, a = 1 at z(1) = 0.5 with a zero continuation: G = -1.2
        let env = malware();
        let grid = build_grid(2, 4).unwrap();
        let v_next = StageTables::terminal(5, 2, 2);
        let z = MeanFieldState::binary(0.5).unwrap();
        let cfg = RlConfig {
            batch_size: 1,
            sarsa_alpha: 0.1,
            ..RlConfig::default()
        };
        let out = expected_sarsa_batch(&z, &z, &v_next, &grid, &env, &QSlice::filled(2, 2, 0.0), &cfg, key()).unwrap();
        assert_abs_diff_eq!(out.running.get(1, 1), -0.12, epsilon = 1e-15);
    }

    #[test]
    fn last_stage_estimates_match_exact_q() {
        let env = malware();
        let grid = build_grid(2, 10).unwrap();
        let v_next = StageTables::terminal(grid.len(), 2, 2);
        let cfg = RlConfig {
            batch_size: 2000,
            sarsa_alpha: 0.1,
            ..RlConfig::default()
        };
        let gamma = Prescription::uniform(2, 2);
        for (g, z) in grid.points().iter().enumerate() {
            let exact = stage_q(z, &gamma, &v_next, &grid, &env).unwrap();
            let z_next = propagate_mean_field(z, &gamma, env.kernel().unwrap()).unwrap();
            let k = key().grid_index(g);
            let out =
                expected_sarsa_batch(z, &z_next, &v_next, &grid, &env, &QSlice::filled(2, 2, 0.0), &cfg, k).unwrap();
            assert!(out.running.sup_distance(&exact) < 0.01);
        }
    }

    #[test]
    fn pair_order_does_not_matter_on_deterministic_rows() {
        // Hand-rolled sweep in (l outer, pairs in reverse) order for the
        // repair pairs, which have deterministic transitions.
        let env = malware();
        let grid = build_grid(2, 10).unwrap();
        let v_next = StageTables::from_values(11, 2, 2, (0..22).map(|i| (i as f64).sin()).collect(), None).unwrap();
        let z = MeanFieldState::binary(0.7).unwrap();
        let z_next = MeanFieldState::binary(0.35).unwrap();
        let cfg = RlConfig {
            batch_size: 37,
            sarsa_alpha: 0.3,
            ..RlConfig::default()
        };
        let q_in = QSlice::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]);
        let out = expected_sarsa_batch(&z, &z_next, &v_next, &grid, &env, &q_in, &cfg, key()).unwrap();
        let cont = interpolate_values(&v_next, &z_next, &grid);
        let mut manual = q_in.clone();
        for _ in 0..cfg.batch_size {
            for x in (0..2).rev() {
                let g = env.reward(x, 1, &z) + env.discount() * cont[0];
                manual.set(x, 1, (1.0 - cfg.sarsa_alpha) * manual.get(x, 1) + cfg.sarsa_alpha * g);
            }
        }
        for x in 0..2 {
            assert_eq!(out.running.get(x, 1), manual.get(x, 1));
        }
    }

    #[test]
    fn zero_gradient_on_ties() {
        let q = QSlice::from_rows(&[vec![-1.0, -1.0], vec![2.0, 2.0]]);
        let logits = vec![0.3, -0.2, 1.0, 1.0];
        assert_eq!(policy_gradient(&q, &logits, 25, 0.5), logits);
    }

    #[test]
    fn ascent_concentrates_on_argmax() {
        let q = QSlice::from_rows(&[vec![0.0, -0.5]]);
        let mut logits = vec![0.0, 0.0];
        let mut last_j = pg_objective(&q, &logits);
        let mut last_p = 0.5;
        for _ in 0..400 {
            logits = policy_gradient(&q, &logits, 1, 0.5);
            let j = pg_objective(&q, &logits);
            let p = softmax_prescription(1, 2, &logits).prob(0, 0);
            assert!(j > last_j && p > last_p);
            last_j = j;
            last_p = p;
        }
        assert!(last_p > 0.98);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let q = QSlice::from_rows(&[vec![0.3, -1.2, 0.7], vec![-0.4, 0.0, 2.5]]);
        let logits = vec![0.1, -0.5, 0.9, 1.5, -2.0, 0.3];
        let grad = pg_gradient(&q, &logits);
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut up = logits.clone();
            let mut dn = logits.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (pg_objective(&q, &up) - pg_objective(&q, &dn)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6, "coordinate {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn degenerate_config_returns_uniform() {
        let env = malware();
        let grid = build_grid(2, 4).unwrap();
        let v_next = StageTables::terminal(5, 2, 2);
        let cfg = RlConfig {
            policy_iters: 1,
            pg_steps: 0,
            batch_size: 10,
            ..RlConfig::default()
        };
        let sol = solve_stage_rl(grid.point(2), &v_next, &grid, &env, &cfg, 1, 2).unwrap();
        assert_eq!(sol.gamma, Prescription::uniform(2, 2));
    }

    #[test]
    fn last_stage_policy_is_do_nothing() {
        let env = malware();
        let grid = build_grid(2, 10).unwrap();
        let v_next = StageTables::terminal(grid.len(), 2, 2);
        let cfg = RlConfig::default();
        let target = Prescription::constant_action(2, 2, 0);
        for (g, z) in grid.points().iter().enumerate() {
            let sol = solve_stage_rl(z, &v_next, &grid, &env, &cfg, env.horizon(), g).unwrap();
            assert!(sol.gamma.sup_distance(&target) < 0.02, "g={g}: {:?}", sol.gamma);
        }
    }

    #[test]
    fn null_game_values_vanish() {
        let env = EnvModel::with_kernel(
            "null",
            2,
            2,
            0.9,
            4,
            Arc::new(|_, _, _| 0.0),
            Arc::new(|x, a, _, out: &mut [f64]| {
                out[0] = if x == a { 0.3 } else { 0.8 };
                out[1] = 1.0 - out[0];
            }),
        )
        .unwrap();
        let grid = Arc::new(build_grid(2, 5).unwrap());
        let cfg = RlConfig {
            batch_size: 50,
            policy_iters: 3,
            ..RlConfig::default()
        };
        let sol = rl_backward_solve(&env, grid, &cfg).unwrap();
        for t in &sol.tables {
            assert!(t.values().iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn sampler_only_environment_is_supported() {
        use crate::rng::StreamRng;
        use rand::Rng;
        let q = 0.9;
        let env = EnvModel::sampler_only(
            "malware-blackbox",
            2,
            2,
            0.9,
            3,
            Arc::new(|x, a, z: &MeanFieldState| -(0.2 + z[1]) * x as f64 - 0.5 * a as f64),
            Arc::new(move |x, a, _: &MeanFieldState, rng: &mut StreamRng| match (x, a) {
                (_, 1) => 0,
                (1, _) => 1,
                _ => usize::from(rng.random::<f64>() < q),
            }),
        )
        .unwrap();
        let grid = Arc::new(build_grid(2, 4).unwrap());
        let cfg = RlConfig {
            batch_size: 200,
            policy_iters: 5,
            pushforward_samples: 2000,
            ..RlConfig::default()
        };
        let sol = rl_backward_solve(&env, grid.clone(), &cfg).unwrap();
        assert_eq!(sol.atlas.horizon(), 3);

        let z = MeanFieldState::binary(0.5).unwrap();
        let gamma = Prescription::constant_action(2, 2, 0);
        let est = next_mean_field(&z, &gamma, &env, &cfg, key()).unwrap();
        assert!((est[1] - 0.95).abs() < 0.02, "{est:?}");
    }

    #[test]
    fn config_validation() {
        let d = RlConfig::default();
        assert!(d.validate().is_ok());
        assert!(RlConfig {
            batch_size: 0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(RlConfig {
            policy_iters: 0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(RlConfig {
            sarsa_alpha: 0.0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(RlConfig {
            sarsa_alpha: 1.5,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(RlConfig { pg_lr: 0.0, ..d }.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            #[test]
            fn analytic_gradient_matches_finite_differences(
                qv in proptest::collection::vec(-3.0f64..3.0, 6),
                logits in proptest::collection::vec(-3.0f64..3.0, 6),
            ) {
                let q = QSlice::from_rows(&[qv[0..3].to_vec(), qv[3..6].to_vec()]);
                let grad = pg_gradient(&q, &logits);
                let h = 1e-5;
                for i in 0..6 {
                    let mut up = logits.clone();
                    let mut dn = logits.clone();
                    up[i] += h;
                    dn[i] -= h;
                    let fd = (pg_objective(&q, &up) - pg_objective(&q, &dn)) / (2.0 * h);
                    prop_assert!((fd - grad[i]).abs() < 1e-6);
                }
            }

            #[test]
            fn ascent_never_decreases_objective(
                qv in proptest::collection::vec(-1.0f64..1.0, 4),
                logits in proptest::collection::vec(-2.0f64..2.0, 4),
            ) {
                let q = QSlice::from_rows(&[qv[0..2].to_vec(), qv[2..4].to_vec()]);
                let mut l = logits.clone();
                let mut j = pg_objective(&q, &l);
                for _ in 0..50 {
                    l = policy_gradient(&q, &l, 1, 0.5);
                    let next = pg_objective(&q, &l);
                    prop_assert!(next >= j - 1e-12);
                    j = next;
                }
            }
        }
    }
}
