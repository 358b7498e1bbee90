//! Mean-field states, the lattice discretization of the probability simplex,
//! and piecewise-linear interpolation over that lattice.
//!
//! Grid points are the compositions `n` of `M` into `N_x` nonnegative parts,
//! read as `z = n / M`. They are stored in descending lexicographic order of
//! `n`, so for two types the first point is `(1, 0)` and the last `(0, 1)`.
//!
//! Off-grid states are located in the Freudenthal (Kuhn) subdivision of the
//! lattice. In the cumulative coordinates `s_k = M * (z_k + ... + z_{N-1})`,
//! `k = 1..N-1`, the simplex is the ordered region `M >= s_1 >= ... >= s_{N-1} >= 0`,
//! which the Kuhn triangulation of the unit cube lattice tiles exactly. The
//! containing cell is found by sorting the fractional parts of `s`; for
//! `N_x = 2` this reduces to linear interpolation along the segment.

use std::collections::HashMap;
use std::ops::Index;

use crate::error::{Error, Result};

/// Tolerance on `sum(z) == 1` for a valid mean-field state.
pub const STATE_SUM_TOL: f64 = 1e-12;

/// Distribution of the population over types.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState(Vec<f64>);

impl MeanFieldState {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidState("empty probability vector".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(Error::InvalidState(format!("entry {i} = {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > STATE_SUM_TOL {
            return Err(Error::InvalidState(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    /// Point mass on type `x`.
    pub fn vertex(n_types: usize, x: usize) -> Self {
        let mut probs = vec![0.0; n_types];
        probs[x] = 1.0;
        Self(probs)
    }

    pub fn uniform(n_types: usize) -> Self {
        Self(vec![1.0 / n_types as f64; n_types])
    }

    /// Two-type state with mass `infected` on type 1.
    pub fn binary(infected: f64) -> Result<Self> {
        Self::new(vec![1.0 - infected, infected])
    }

    /// Clamps round-off negatives and renormalizes. Negative entries larger
    /// than `STATE_SUM_TOL` in magnitude are rejected.
    pub(crate) fn from_unnormalized(mut probs: Vec<f64>) -> Result<Self> {
        for (i, p) in probs.iter_mut().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidState(format!("entry {i} is not finite")));
            }
            if *p < 0.0 {
                if *p < -STATE_SUM_TOL {
                    return Err(Error::NegativeMass { index: i, value: *p });
                }
                *p = 0.0;
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!("entries sum to {sum}")));
        }
        probs.iter_mut().for_each(|p| *p /= sum);
        Ok(Self(probs))
    }

    pub fn n_types(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Sup-norm distance.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<usize> for MeanFieldState {
    type Output = f64;

    fn index(&self, x: usize) -> &f64 {
        &self.0[x]
    }
}

/// Sparse convex weights over grid points.
pub type Weights = Vec<(usize, f64)>;

/// Lattice `{ n / M : n in N^{N_x}, sum(n) = M }`.
#[derive(Debug, Clone)]
pub struct SimplexGrid {
    n_types: usize,
    resolution: usize,
    compositions: Vec<Vec<u32>>,
    points: Vec<MeanFieldState>,
    index: HashMap<Vec<u32>, usize>,
}

impl SimplexGrid {
    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[MeanFieldState] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &MeanFieldState {
        &self.points[i]
    }

    /// Integer composition behind point `i`.
    pub fn composition(&self, i: usize) -> &[u32] {
        &self.compositions[i]
    }

    pub fn index_of(&self, composition: &[u32]) -> Option<usize> {
        self.index.get(composition).copied()
    }

    /// Convex weights of the lattice vertices of the Freudenthal cell
    /// containing `z`. The weights reproduce `z` exactly (up to round-off)
    /// and a grid point gets weight 1 on itself.
    pub fn interpolation_weights(&self, z: &MeanFieldState) -> Weights {
        debug_assert_eq!(z.n_types(), self.n_types);
        let m = self.resolution as f64;
        let dim = self.n_types - 1;

        // Cumulative coordinates from the tail.
        let mut s = vec![0.0; dim];
        let mut acc = 0.0;
        for k in (1..self.n_types).rev() {
            acc += z[k];
            s[k - 1] = (m * acc).clamp(0.0, m);
        }
        // Enforce the ordering lost to round-off.
        for k in 1..dim {
            if s[k] > s[k - 1] {
                s[k] = s[k - 1];
            }
        }

        let mut base = vec![0i64; dim];
        let mut frac = vec![0.0; dim];
        for k in 0..dim {
            let mut b = s[k].floor();
            let mut f = s[k] - b;
            if 1.0 - f < 1e-12 {
                b += 1.0;
                f = 0.0;
            } else if f < 1e-12 {
                f = 0.0;
            }
            if b >= m {
                b = m;
                f = 0.0;
            }
            base[k] = b as i64;
            frac[k] = f;
        }

        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&i, &j| frac[j].total_cmp(&frac[i]).then(i.cmp(&j)));

        let mut weights = Weights::with_capacity(self.n_types);
        let mut vertex = base;
        let mut upper = 1.0;
        for step in 0..=dim {
            let lower = if step < dim { frac[order[step]] } else { 0.0 };
            let w = upper - lower;
            if w > 0.0 {
                let idx = self
                    .vertex_index(&vertex)
                    .expect("Freudenthal vertex with positive weight lies in the simplex");
                weights.push((idx, w));
            }
            if step < dim {
                vertex[order[step]] += 1;
                upper = lower;
            }
        }
        weights
    }

    fn vertex_index(&self, cumulative: &[i64]) -> Option<usize> {
        let m = self.resolution as i64;
        let mut comp = Vec::with_capacity(self.n_types);
        let mut prev = m;
        for &c in cumulative {
            if c > prev || c < 0 {
                return None;
            }
            comp.push((prev - c) as u32);
            prev = c;
        }
        comp.push(prev as u32);
        self.index_of(&comp)
    }

    /// `sum_g w_g * values[g]` for a per-point scalar table.
    pub fn interpolate(&self, values: impl Fn(usize) -> f64, z: &MeanFieldState) -> f64 {
        self.interpolation_weights(z)
            .into_iter()
            .map(|(g, w)| w * values(g))
            .sum()
    }
}

/// All lattice points of the simplex at resolution `resolution`, in
/// descending lexicographic order of their compositions.
pub fn build_grid(n_types: usize, resolution: usize) -> Result<SimplexGrid> {
    if n_types < 2 {
        return Err(Error::InvalidGrid(format!("need at least 2 types, got {n_types}")));
    }
    if resolution < 1 {
        return Err(Error::InvalidGrid("resolution must be at least 1".into()));
    }
    let resolution_u32 =
        u32::try_from(resolution).map_err(|_| Error::InvalidGrid(format!("resolution {resolution} too large")))?;

    let mut compositions = Vec::new();
    let mut current = Vec::with_capacity(n_types);
    compose(resolution_u32, n_types, &mut current, &mut compositions);

    let m = resolution as f64;
    let points = compositions
        .iter()
        .map(|c| MeanFieldState(c.iter().map(|&n| n as f64 / m).collect()))
        .collect();
    let index = compositions.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
    Ok(SimplexGrid {
        n_types,
        resolution,
        compositions,
        points,
        index,
    })
}

fn compose(remaining: u32, parts: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if parts == 1 {
        current.push(remaining);
        out.push(current.clone());
        current.pop();
        return;
    }
    for head in (0..=remaining).rev() {
        current.push(head);
        compose(remaining - head, parts - 1, current, out);
        current.pop();
    }
}
