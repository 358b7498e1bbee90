//! Backward-recursion solver for games with a known transition kernel.
//!
//! Stages are solved from `T` down to `1`. At every grid state `z` the
//! stage prescription is a fixed point `gamma` of
//! `gamma(.|x) in argmax E^{gamma'(.|x)} Q_t(z, x, A; gamma)`, where `gamma`
//! enters `Q_t` through the next mean-field state `phi(z, gamma)`. The fixed
//! point is first sought by damped best-response iteration, which lands on
//! pure fixed points in a few steps. When that iteration cycles (the usual
//! sign of a mixed fixed point at indifference) the solver switches to a
//! projected extragradient method on the stage variational inequality
//! `<Q(gamma), gamma' - gamma> <= 0`. `Q` depends on `gamma` only through
//! `phi(z, gamma)`, and for congestion-type games that operator is monotone,
//! which is the setting where extragradient converges.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::propagate_mean_field;
use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::prescription::{PolicyAtlas, Prescription};
use crate::rng::{Domain, StreamKey};
use crate::simplex::{MeanFieldState, SimplexGrid};
use crate::tables::{interpolate_values, QSlice, StageTables};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointConfig {
    pub max_iters: usize,
    /// Sup-norm tolerance on the prescription change between iterates.
    pub tol: f64,
    /// Initial best-response step size.
    pub damping: f64,
    /// Actions whose Q values are within this of the best are treated as tied.
    pub tie_tolerance: f64,
    /// Random restarts used to probe for other fixed points; 0 disables.
    pub probe_restarts: usize,
    pub probe_seed: u64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
            damping: 1.0,
            tie_tolerance: 1e-9,
            probe_restarts: 0,
            probe_seed: 0,
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "fixed point tol {} must be > 0",
                self.tol
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "fixed point damping {} outside (0, 1]",
                self.damping
            )));
        }
        if self.tie_tolerance.is_nan() || self.tie_tolerance < 0.0 {
            return Err(Error::InvalidParameter("tie_tolerance must be >= 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// `Q(x, a) = R(x, a, z) + delta * sum_y tau(y|x, a, z) V_{t+1}(phi(z, gamma), y)`.
pub fn stage_q(
    z: &MeanFieldState,
    gamma: &Prescription,
    v_next: &StageTables,
    grid: &SimplexGrid,
    env: &EnvModel,
) -> Result<QSlice> {
    let kernel = env.require_kernel()?;
    let z_next = propagate_mean_field(z, gamma, kernel)?;
    let continuation = interpolate_values(v_next, &z_next, grid);
    let (n, m) = (env.n_types(), env.n_actions());
    let mut q = QSlice::filled(n, m, 0.0);
    let mut row = vec![0.0; n];
    for x in 0..n {
        for a in 0..m {
            kernel(x, a, z, &mut row);
            let future: f64 = row.iter().zip(&continuation).map(|(p, v)| p * v).sum();
            q.set(x, a, env.reward(x, a, z) + env.discount() * future);
        }
    }
    Ok(q)
}

/// Pure best response per type; actions within `tie_tolerance` of the best
/// share the mass uniformly.
pub fn best_response(q: &QSlice, tie_tolerance: f64) -> Prescription {
    let (n, m) = (q.n_types(), q.n_actions());
    let mut probs = vec![0.0; n * m];
    for x in 0..n {
        let row = q.row(x);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied = row.iter().filter(|&&v| v >= best - tie_tolerance).count();
        for (a, &v) in row.iter().enumerate() {
            if v >= best - tie_tolerance {
                probs[x * m + a] = 1.0 / tied as f64;
            }
        }
    }
    Prescription::new(n, m, probs).expect("best response rows are distributions")
}

#[derive(Debug, Clone)]
pub struct StageSolution {
    pub gamma: Prescription,
    /// Q evaluated at the returned prescription.
    pub q: QSlice,
    pub converged: bool,
    pub iters: usize,
    /// `max_x (max_a Q - E^gamma Q)` at the returned prescription.
    pub residual: f64,
}

/// Solves the stage fixed point at `z` starting from the uniform prescription.
pub fn solve_stage_fixed_point(
    z: &MeanFieldState,
    v_next: &StageTables,
    grid: &SimplexGrid,
    env: &EnvModel,
    cfg: &FixedPointConfig,
) -> Result<StageSolution> {
    let init = Prescription::uniform(env.n_types(), env.n_actions());
    iterate_from(init, z, v_next, grid, env, cfg)
}

fn iterate_from(
    gamma: Prescription,
    z: &MeanFieldState,
    v_next: &StageTables,
    grid: &SimplexGrid,
    env: &EnvModel,
    cfg: &FixedPointConfig,
) -> Result<StageSolution> {
    let q_at = |g: &Prescription| stage_q(z, g, v_next, grid, env);
    let accept = |g: &Prescription, q: &QSlice| q.best_response_gap(g) <= 10.0 * cfg.tol;

    // Phase 1: damped best-response iteration. Exact and quick whenever the
    // stage has a pure fixed point that the iteration reaches.
    let mut history: Vec<Prescription> = vec![gamma];
    let mut iters = 0;
    let br_budget = cfg.max_iters.min(BR_PHASE_ITERS);
    while iters < br_budget {
        iters += 1;
        let current = history.last().expect("history is never empty");
        let q = q_at(current)?;
        let br = best_response(&q, cfg.tie_tolerance);
        let next = br.mix(current, cfg.damping);
        let change = next.sup_distance(current);
        if change < cfg.tol {
            let q = q_at(&next)?;
            if accept(&next, &q) {
                let residual = q.best_response_gap(&next);
                return Ok(StageSolution {
                    gamma: next,
                    q,
                    converged: true,
                    iters,
                    residual,
                });
            }
        }
        let cycled = history
            .iter()
            .rev()
            .skip(1)
            .take(2)
            .any(|h| h.sup_distance(&next) < cfg.tol);
        history.push(next);
        if cycled {
            break;
        }
    }

    // Phase 2: projected extragradient on the stage variational inequality,
    // started from the mean of the last two iterates.
    let n = history.len();
    let mut gamma = if n >= 2 {
        history[n - 1].mix(&history[n - 2], 0.5)
    } else {
        history.pop().expect("history is never empty")
    };
    let mut step = EG_INITIAL_STEP;
    let mut converged = false;
    let mut q = q_at(&gamma)?;
    while iters < cfg.max_iters {
        iters += 1;
        let mut backtracked = false;
        let q_probe = loop {
            let probe = project_step(&gamma, &q, step);
            let q_probe = q_at(&probe)?;
            let moved = probe.sup_distance(&gamma);
            if moved == 0.0 || step * q_probe.sup_distance(&q) <= EG_LIPSCHITZ_FRACTION * moved || step < EG_MIN_STEP {
                break q_probe;
            }
            step *= 0.5;
            backtracked = true;
        };
        let next = project_step(&gamma, &q_probe, step);
        let change = next.sup_distance(&gamma);
        gamma = next;
        q = q_at(&gamma)?;
        if change < cfg.tol && accept(&gamma, &q) {
            converged = true;
            break;
        }
        if !backtracked {
            step = (step * 1.5).min(EG_MAX_STEP);
        }
    }

    let residual = q.best_response_gap(&gamma);
    Ok(StageSolution {
        gamma,
        q,
        converged,
        iters,
        residual,
    })
}

const BR_PHASE_ITERS: usize = 25;
const EG_INITIAL_STEP: f64 = 10.0;
const EG_MAX_STEP: f64 = 1e6;
const EG_MIN_STEP: f64 = 1e-12;
const EG_LIPSCHITZ_FRACTION: f64 = 0.9;

/// Row-wise `Proj_simplex(gamma(.|x) + step * Q(x, .))`.
fn project_step(gamma: &Prescription, q: &QSlice, step: f64) -> Prescription {
    let m = gamma.n_actions();
    let mut out = Vec::with_capacity(gamma.as_slice().len());
    let mut buf = vec![0.0; m];
    for x in 0..gamma.n_types() {
        for (b, (g, v)) in buf.iter_mut().zip(gamma.row(x).iter().zip(q.row(x))) {
            *b = g + step * v;
        }
        out.extend(project_to_simplex(&buf));
    }
    Prescription::from_raw_normalized(gamma.n_types(), m, out)
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Outcome of the fixed-point solve at one `(t, grid point)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDiagnostic {
    pub stage: usize,
    pub grid_index: usize,
    pub converged: bool,
    pub iters: usize,
    pub residual: f64,
    /// Sup-norm distance to a different fixed point found by the restart
    /// probe, if one was found.
    pub alternative: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BackwardSolution {
    pub atlas: PolicyAtlas,
    /// `tables[t - 1]` holds stage `t`.
    pub tables: Vec<StageTables>,
    pub diagnostics: Vec<StageDiagnostic>,
}

impl BackwardSolution {
    pub fn stage_tables(&self, t: usize) -> &StageTables {
        &self.tables[t - 1]
    }

    pub fn non_converged(&self) -> impl Iterator<Item = &StageDiagnostic> {
        self.diagnostics.iter().filter(|d| !d.converged)
    }
}

/// Full backward recursion over `t = T..1` on the grid.
pub fn backward_solve(env: &EnvModel, grid: Arc<SimplexGrid>, cfg: &FixedPointConfig) -> Result<BackwardSolution> {
    cfg.validate()?;
    env.require_kernel()?;
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
        let solved: Vec<(StageSolution, Option<f64>)> = (0..grid.len())
            .into_par_iter()
            .map(|g| {
                let z = grid.point(g);
                let solve = || {
                    let sol = solve_stage_fixed_point(z, &v_next, &grid, env, cfg)?;
                    let alt = probe_restarts(&sol, z, &v_next, &grid, env, cfg, t, g)?;
                    Ok((sol, alt))
                };
                solve().map_err(|e| Error::Stage {
                    stage: t,
                    grid_index: g,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut prescriptions = Vec::with_capacity(grid.len());
        let mut slices = Vec::with_capacity(grid.len());
        for (g, (sol, alternative)) in solved.into_iter().enumerate() {
            diagnostics.push(StageDiagnostic {
                stage: t,
                grid_index: g,
                converged: sol.converged,
                iters: sol.iters,
                residual: sol.residual,
                alternative,
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
    Ok(BackwardSolution {
        atlas,
        tables,
        diagnostics,
    })
}

#[allow(clippy::too_many_arguments)]
fn probe_restarts(
    sol: &StageSolution,
    z: &MeanFieldState,
    v_next: &StageTables,
    grid: &SimplexGrid,
    env: &EnvModel,
    cfg: &FixedPointConfig,
    t: usize,
    g: usize,
) -> Result<Option<f64>> {
    let mut alternative: Option<f64> = None;
    for r in 0..cfg.probe_restarts {
        let mut rng = StreamKey::new(cfg.probe_seed, Domain::Restart)
            .stage(t)
            .grid_index(g)
            .batch(r)
            .rng();
        let raw: Vec<f64> = (0..env.n_types() * env.n_actions())
            .map(|_| rng.random::<f64>() + 1e-3)
            .collect();
        let init = Prescription::from_raw_normalized(env.n_types(), env.n_actions(), raw);
        let other = iterate_from(init, z, v_next, grid, env, cfg)?;
        if other.converged {
            let d = other.gamma.sup_distance(&sol.gamma);
            if d > 1e3 * cfg.tol {
                alternative = Some(alternative.map_or(d, |a: f64| a.max(d)));
            }
        }
    }
    Ok(alternative)
}
