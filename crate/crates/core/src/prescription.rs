//! Prescriptions (type -> action distribution) and the time-indexed policy
//! atlas mapping each grid mean-field state to a prescription.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::simplex::{MeanFieldState, SimplexGrid};

pub const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic `N_x x N_a` matrix; row `x` is the action distribution
/// prescribed to agents of type `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prescription {
    n_types: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Prescription {
    pub fn new(n_types: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_types == 0 || n_actions == 0 {
            return Err(Error::InvalidPrescription("empty dimensions".into()));
        }
        if probs.len() != n_types * n_actions {
            return Err(Error::DimensionMismatch(format!(
                "prescription {}x{} needs {} entries, got {}",
                n_types,
                n_actions,
                n_types * n_actions,
                probs.len()
            )));
        }
        for (i, p) in probs.iter().enumerate() {
            if !p.is_finite() || *p < 0.0 || *p > 1.0 {
                return Err(Error::InvalidPrescription(format!(
                    "entry (x={}, a={}) = {p} outside [0, 1]",
                    i / n_actions,
                    i % n_actions
                )));
            }
        }
        for (x, row) in probs.chunks(n_actions).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidPrescription(format!("row {x} sums to {s}")));
            }
        }
        Ok(Self {
            n_types,
            n_actions,
            probs,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::DimensionMismatch("ragged prescription rows".into()));
        }
        Self::new(rows.len(), n_actions, rows.concat())
    }

    pub fn uniform(n_types: usize, n_actions: usize) -> Self {
        Self {
            n_types,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_types * n_actions],
        }
    }

    /// Every type plays `action` with probability 1.
    pub fn constant_action(n_types: usize, n_actions: usize, action: usize) -> Self {
        Self::deterministic(&vec![action; n_types], n_actions)
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (x, &a) in actions.iter().enumerate() {
            probs[x * n_actions + a] = 1.0;
        }
        Self {
            n_types: actions.len(),
            n_actions,
            probs,
        }
    }

    /// Renormalizes each row; used for convex combinations that only need
    /// round-off cleanup.
    pub(crate) fn from_raw_normalized(n_types: usize, n_actions: usize, mut probs: Vec<f64>) -> Self {
        for row in probs.chunks_mut(n_actions) {
            for p in row.iter_mut() {
                *p = p.max(0.0);
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
        }
        Self {
            n_types,
            n_actions,
            probs,
        }
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.n_actions + a]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// `beta * self + (1 - beta) * other`.
    pub fn mix(&self, other: &Self, beta: f64) -> Self {
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| beta * a + (1.0 - beta) * b)
            .collect();
        Self::from_raw_normalized(self.n_types, self.n_actions, probs)
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest total-variation distance between corresponding rows.
    pub fn max_row_tv(&self, other: &Self) -> f64 {
        self.probs
            .chunks(self.n_actions)
            .zip(other.probs.chunks(other.n_actions))
            .map(|(r, s)| 0.5 * r.iter().zip(s).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Row-wise softmax of an `N_x x N_a` logit matrix (row-major).
pub fn softmax_prescription(n_types: usize, n_actions: usize, logits: &[f64]) -> Prescription {
    assert_eq!(logits.len(), n_types * n_actions, "logit matrix shape");
    let mut probs = vec![0.0; logits.len()];
    for (row, out) in logits.chunks(n_actions).zip(probs.chunks_mut(n_actions)) {
        softmax_row(row, out);
    }
    Prescription {
        n_types,
        n_actions,
        probs,
    }
}

pub(crate) fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Equilibrium generating function tabulated on a grid: for stage
/// `t = 1..=T` and every grid point, the prescription played there.
#[derive(Debug, Clone)]
pub struct PolicyAtlas {
    grid: Arc<SimplexGrid>,
    n_actions: usize,
    stages: Vec<Vec<Prescription>>,
}

impl PolicyAtlas {
    /// `stages[t - 1][g]` is the prescription at stage `t`, grid point `g`.
    pub fn new(grid: Arc<SimplexGrid>, n_actions: usize, stages: Vec<Vec<Prescription>>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::DimensionMismatch("atlas needs at least one stage".into()));
        }
        for (t, stage) in stages.iter().enumerate() {
            if stage.len() != grid.len() {
                return Err(Error::DimensionMismatch(format!(
                    "stage {} has {} prescriptions for {} grid points",
                    t + 1,
                    stage.len(),
                    grid.len()
                )));
            }
            if let Some(p) = stage
                .iter()
                .find(|p| p.n_types() != grid.n_types() || p.n_actions() != n_actions)
            {
                return Err(Error::DimensionMismatch(format!(
                    "stage {} holds a {}x{} prescription, expected {}x{}",
                    t + 1,
                    p.n_types(),
                    p.n_actions(),
                    grid.n_types(),
                    n_actions
                )));
            }
        }
        Ok(Self {
            grid,
            n_actions,
            stages,
        })
    }

    /// Same prescription at every stage and grid point.
    pub fn constant(grid: Arc<SimplexGrid>, horizon: usize, gamma: Prescription) -> Result<Self> {
        let n_actions = gamma.n_actions();
        let stages = vec![vec![gamma; grid.len()]; horizon];
        Self::new(grid, n_actions, stages)
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn grid(&self) -> &Arc<SimplexGrid> {
        &self.grid
    }

    pub fn n_types(&self) -> usize {
        self.grid.n_types()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Prescription stored at stage `t` (1-based), grid point `g`.
    pub fn at(&self, t: usize, g: usize) -> &Prescription {
        &self.stages[t - 1][g]
    }

    pub fn stage(&self, t: usize) -> &[Prescription] {
        &self.stages[t - 1]
    }

    /// Prescription at an arbitrary state: the interpolation-weighted
    /// combination of the neighbouring grid prescriptions, rows renormalized.
    pub fn lookup(&self, t: usize, z: &MeanFieldState) -> Prescription {
        let weights = self.grid.interpolation_weights(z);
        if let [(g, _)] = weights.as_slice() {
            return self.at(t, *g).clone();
        }
        let mut probs = vec![0.0; self.n_types() * self.n_actions];
        for (g, w) in weights {
            for (p, q) in probs.iter_mut().zip(self.at(t, g).as_slice()) {
                *p += w * q;
            }
        }
        Prescription::from_raw_normalized(self.n_types(), self.n_actions, probs)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.horizon() == other.horizon()
            && self.n_actions == other.n_actions
            && self.grid.n_types() == other.grid.n_types()
            && self.grid.resolution() == other.grid.resolution()
    }
}
