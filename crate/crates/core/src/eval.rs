//! Equilibrium certificates and comparison metrics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::propagate_mean_field;
use crate::env::EnvModel;
use crate::error::{Error, Result};
use crate::prescription::{PolicyAtlas, Prescription};
use crate::rng::{Domain, StreamKey, StreamRng};
use crate::simplex::MeanFieldState;
use crate::tables::StageTables;

/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_901;

/// Mean-field flow `z_s, ..., z_T` generated by the atlas from `z_s = z`.
pub fn flow_from(stage: usize, z: &MeanFieldState, atlas: &PolicyAtlas, env: &EnvModel) -> Result<Vec<MeanFieldState>> {
    let kernel = env.require_kernel()?;
    let horizon = atlas.horizon();
    if stage < 1 || stage > horizon {
        return Err(Error::InvalidParameter(format!("stage {stage} outside 1..={horizon}")));
    }
    let mut flow = Vec::with_capacity(horizon - stage + 1);
    flow.push(z.clone());
    for t in stage..horizon {
        let current = flow.last().expect("flow is non-empty");
        let gamma = atlas.lookup(t, current);
        let next = propagate_mean_field(current, &gamma, kernel)?;
        flow.push(next);
    }
    Ok(flow)
}

/// `z_1, ..., z_T` with `z_{t+1} = phi(z_t, atlas(t, z_t))`.
pub fn statistical_trajectory(z1: &MeanFieldState, atlas: &PolicyAtlas, env: &EnvModel) -> Result<Vec<MeanFieldState>> {
    flow_from(1, z1, atlas, env)
}

/// Which mean-field state agents condition their actions on during a
/// finite-population rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// The current empirical distribution of the simulated agents.
    Empirical,
    /// The statistical flow from the same initial state. Rewards and
    /// transitions then also see the statistical state, so agents are
    /// independent.
    Statistical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    pub statistical_z: Vec<MeanFieldState>,
    pub empirical_z: Vec<MeanFieldState>,
    pub n_agents: usize,
    pub mean_return: f64,
    /// Half-width of the 99% normal confidence interval of `mean_return`.
    pub return_ci: f64,
}

impl TrajectoryReport {
    /// `max_t ||z_emp(t) - z_stat(t)||_inf`.
    pub fn max_deviation(&self) -> f64 {
        self.statistical_z
            .iter()
            .zip(&self.empirical_z)
            .map(|(a, b)| a.sup_distance(b))
            .fold(0.0, f64::max)
    }
}

fn sample_action(gamma: &Prescription, x: usize, rng: &mut StreamRng) -> usize {
    let row = gamma.row(x);
    if let Some(a) = row.iter().position(|&p| p >= 1.0) {
        return a;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Initial types matching `z1` as closely as `N` agents allow: the largest
/// remainder method on `N * z1`.
pub fn initial_counts(z1: &MeanFieldState, n_agents: usize) -> Vec<usize> {
    let scaled: Vec<f64> = z1.probs().iter().map(|p| p * n_agents as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|s| s.floor() as usize).collect();
    let mut remaining = n_agents - counts.iter().sum::<usize>().min(n_agents);
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (scaled[a] - scaled[a].floor(), scaled[b] - scaled[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &x in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[x] += 1;
        remaining -= 1;
    }
    counts
}

fn empirical_state(types: &[usize], n_types: usize) -> Result<MeanFieldState> {
    let mut counts = vec![0.0; n_types];
    for &x in types {
        counts[x] += 1.0;
    }
    let n = types.len() as f64;
    MeanFieldState::from_unnormalized(counts.into_iter().map(|c| c / n).collect())
}

/// Simulates `n_agents` agents for the atlas horizon. Each agent owns one
/// random stream keyed by `key.pair(agent)`.
pub fn rollout_population(
    n_agents: usize,
    z1: &MeanFieldState,
    atlas: &PolicyAtlas,
    env: &EnvModel,
    conditioning: Conditioning,
    key: StreamKey,
) -> Result<TrajectoryReport> {
    if n_agents == 0 {
        return Err(Error::InvalidParameter("n_agents must be >= 1".into()));
    }
    let n_types = env.n_types();
    let statistical_z = statistical_trajectory(z1, atlas, env)?;
    let key = StreamKey {
        domain: Domain::Rollout,
        ..key
    };

    let mut types: Vec<usize> = initial_counts(z1, n_agents)
        .into_iter()
        .enumerate()
        .flat_map(|(x, c)| std::iter::repeat_n(x, c))
        .collect();
    let mut rngs: Vec<StreamRng> = (0..n_agents).map(|i| key.pair(i).rng()).collect();
    let mut returns = vec![0.0; n_agents];
    let mut empirical_z = Vec::with_capacity(atlas.horizon());
    let mut discount = 1.0;

    for t in 1..=atlas.horizon() {
        let emp = empirical_state(&types, n_types)?;
        let z = match conditioning {
            Conditioning::Empirical => emp.clone(),
            Conditioning::Statistical => statistical_z[t - 1].clone(),
        };
        empirical_z.push(emp);
        let gamma = atlas.lookup(t, &z);
        let sampler = env.prepare_sampler(&z)?;
        for ((x, rng), ret) in types.iter_mut().zip(rngs.iter_mut()).zip(returns.iter_mut()) {
            let a = sample_action(&gamma, *x, rng);
            *ret += discount * env.reward(*x, a, &z);
            *x = sampler.sample(*x, a, rng);
        }
        discount *= env.discount();
    }

    let (mean_return, return_ci) = mean_and_ci(&returns);
    Ok(TrajectoryReport {
        statistical_z,
        empirical_z,
        n_agents,
        mean_return,
        return_ci,
    })
}

fn mean_and_ci(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Z_99 * (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    /// Half-width of the 99% confidence interval.
    pub ci: f64,
    pub episodes: usize,
}

impl MonteCarloEstimate {
    pub fn contains(&self, value: f64) -> bool {
        (value - self.mean).abs() <= self.ci
    }
}

/// Discounted return of one tagged agent starting in type `x` who follows
/// the atlas while the population moves along the statistical flow from
/// `z1`. Episodes run in parallel, each on its own stream.
pub fn tagged_agent_return(
    z1: &MeanFieldState,
    x: usize,
    atlas: &PolicyAtlas,
    env: &EnvModel,
    episodes: usize,
    key: StreamKey,
) -> Result<MonteCarloEstimate> {
    if episodes == 0 {
        return Err(Error::InvalidParameter("episodes must be >= 1".into()));
    }
    if x >= env.n_types() {
        return Err(Error::InvalidParameter(format!(
            "type {x} outside 0..{}",
            env.n_types()
        )));
    }
    let flow = statistical_trajectory(z1, atlas, env)?;
    let prescriptions: Vec<Prescription> = flow.iter().enumerate().map(|(i, z)| atlas.lookup(i + 1, z)).collect();
    let samplers = flow
        .iter()
        .map(|z| env.prepare_sampler(z))
        .collect::<Result<Vec<_>>>()?;
    let key = StreamKey {
        domain: Domain::Rollout,
        ..key
    };
    let delta = env.discount();

    let returns: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = key.pair(e).rng();
            let mut state = x;
            let mut total = 0.0;
            let mut discount = 1.0;
            for ((z, gamma), sampler) in flow.iter().zip(&prescriptions).zip(&samplers) {
                let a = sample_action(gamma, state, &mut rng);
                total += discount * env.reward(state, a, z);
                state = sampler.sample(state, a, &mut rng);
                discount *= delta;
            }
            total
        })
        .collect();
    let (mean, ci) = mean_and_ci(&returns);
    Ok(MonteCarloEstimate { mean, ci, episodes })
}

/// Best-response gaps `gap(t, g, x)` of the atlas against its own flow.
#[derive(Debug, Clone, PartialEq)]
pub struct ExploitabilityReport {
    horizon: usize,
    n_points: usize,
    n_types: usize,
    gaps: Vec<f64>,
    policy_values: Vec<f64>,
}

impl ExploitabilityReport {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    fn index(&self, t: usize, g: usize, x: usize) -> usize {
        ((t - 1) * self.n_points + g) * self.n_types + x
    }

    pub fn gap(&self, t: usize, g: usize, x: usize) -> f64 {
        self.gaps[self.index(t, g, x)]
    }

    /// Exact value of following the atlas from `(t, grid point g, x)` along
    /// the flow it generates.
    pub fn policy_value(&self, t: usize, g: usize, x: usize) -> f64 {
        self.policy_values[self.index(t, g, x)]
    }

    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }

    /// Largest gap among flows started at stage `t`.
    pub fn max_gap_at(&self, t: usize) -> f64 {
        let w = self.n_points * self.n_types;
        self.gaps[(t - 1) * w..t * w].iter().copied().fold(0.0, f64::max)
    }
}

/// For every stage `s` and grid point `z`, freezes the flow the atlas
/// generates from `z_s = z` and compares, by backward induction along that
/// flow, the best single-agent deviation value with the value of following
/// the atlas.
pub fn exploitability(atlas: &PolicyAtlas, env: &EnvModel) -> Result<ExploitabilityReport> {
    let kernel = env.require_kernel()?;
    let grid = atlas.grid();
    if grid.n_types() != env.n_types() || atlas.n_actions() != env.n_actions() {
        return Err(Error::DimensionMismatch("atlas and environment shapes differ".into()));
    }
    let (n, m) = (env.n_types(), env.n_actions());
    let horizon = atlas.horizon();
    let delta = env.discount();

    let jobs: Vec<(usize, usize)> = (1..=horizon)
        .flat_map(|s| (0..grid.len()).map(move |g| (s, g)))
        .collect();
    let per_job = jobs
        .par_iter()
        .map(|&(s, g)| -> Result<Vec<(f64, f64)>> {
            let flow = flow_from(s, grid.point(g), atlas, env)?;
            let mut follow = vec![0.0; n];
            let mut best = vec![0.0; n];
            let mut row = vec![0.0; n];
            for (i, z) in flow.iter().enumerate().rev() {
                let gamma = atlas.lookup(s + i, z);
                let mut next_follow = vec![0.0; n];
                let mut next_best = vec![f64::NEG_INFINITY; n];
                for x in 0..n {
                    for a in 0..m {
                        kernel(x, a, z, &mut row);
                        let r = env.reward(x, a, z);
                        let cont_f: f64 = row.iter().zip(&follow).map(|(p, v)| p * v).sum();
                        let cont_b: f64 = row.iter().zip(&best).map(|(p, v)| p * v).sum();
                        next_follow[x] += gamma.prob(x, a) * (r + delta * cont_f);
                        next_best[x] = next_best[x].max(r + delta * cont_b);
                    }
                }
                follow = next_follow;
                best = next_best;
            }
            Ok(best.iter().zip(&follow).map(|(b, f)| ((b - f).max(0.0), *f)).collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut gaps = Vec::with_capacity(jobs.len() * n);
    let mut policy_values = Vec::with_capacity(jobs.len() * n);
    for entries in per_job {
        for (gap, value) in entries {
            gaps.push(gap);
            policy_values.push(value);
        }
    }
    Ok(ExploitabilityReport {
        horizon,
        n_points: grid.len(),
        n_types: n,
        gaps,
        policy_values,
    })
}

/// `max_{g, x} TV(a_t(g)(.|x), b_t(g)(.|x))`.
pub fn atlas_distance(a: &PolicyAtlas, b: &PolicyAtlas, t: usize) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch("atlases differ in shape".into()));
    }
    if t < 1 || t > a.horizon() {
        return Err(Error::InvalidParameter(format!(
            "stage {t} outside 1..={}",
            a.horizon()
        )));
    }
    Ok(a.stage(t)
        .iter()
        .zip(b.stage(t))
        .map(|(p, q)| p.max_row_tv(q))
        .fold(0.0, f64::max))
}

/// `max_{t, g, x, a} (Q_t(g, x, a) - V_t(g, x))`: how much a single
/// one-stage deviation gains according to the solver's own tables.
pub fn max_one_step_deviation(tables: &[StageTables]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for table in tables {
        for g in 0..table.n_points() {
            for x in 0..table.n_types() {
                for a in 0..table.n_actions() {
                    worst = worst.max(table.q(g, x, a) - table.v(g, x));
                }
            }
        }
    }
    worst
}
