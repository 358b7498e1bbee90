use crate::error::{Error, Result};
use crate::prescription::Prescription;
use crate::simplex::{MeanFieldState, SimplexGrid};

/// Q values at one mean-field state, indexed `(x, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QSlice {
    n_types: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QSlice {
    pub fn filled(n_types: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_types,
            n_actions,
            values: vec![value; n_types * n_actions],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_actions = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_actions), "ragged Q rows");
        Self {
            n_types: rows.len(),
            n_actions,
            values: rows.concat(),
        }
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.values[x * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, x: usize, a: usize, v: f64) {
        self.values[x * self.n_actions + a] = v;
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// `sum_a gamma(a|x) Q(x, a)`.
    pub fn expected(&self, gamma: &Prescription, x: usize) -> f64 {
        self.row(x).iter().zip(gamma.row(x)).map(|(q, p)| q * p).sum()
    }

    /// Largest one-action improvement over `gamma`:
    /// `max_x (max_a Q(x, a) - sum_a gamma(a|x) Q(x, a))`.
    pub fn best_response_gap(&self, gamma: &Prescription) -> f64 {
        (0..self.n_types)
            .map(|x| {
                let best = self.row(x).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                best - self.expected(gamma, x)
            })
            .fold(0.0, f64::max)
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-stage Q and V over every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTables {
    n_points: usize,
    n_types: usize,
    n_actions: usize,
    q: Vec<f64>,
    v: Vec<f64>,
}

impl StageTables {
    /// The all-zero terminal table standing for `V_{T+1}`.
    pub fn terminal(n_points: usize, n_types: usize, n_actions: usize) -> Self {
        Self {
            n_points,
            n_types,
            n_actions,
            q: vec![0.0; n_points * n_types * n_actions],
            v: vec![0.0; n_points * n_types],
        }
    }

    /// Finalizes a stage: `V(z, x) = sum_a gamma_z(a|x) Q_z(x, a)`.
    pub fn from_slices(slices: &[QSlice], prescriptions: &[Prescription]) -> Result<Self> {
        if slices.len() != prescriptions.len() || slices.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} Q slices for {} prescriptions",
                slices.len(),
                prescriptions.len()
            )));
        }
        let (n_types, n_actions) = (slices[0].n_types, slices[0].n_actions);
        let mut q = Vec::with_capacity(slices.len() * n_types * n_actions);
        let mut v = Vec::with_capacity(slices.len() * n_types);
        for (s, g) in slices.iter().zip(prescriptions) {
            if s.n_types != n_types || s.n_actions != n_actions || g.n_types() != n_types {
                return Err(Error::DimensionMismatch("inconsistent stage slice shapes".into()));
            }
            q.extend_from_slice(&s.values);
            v.extend((0..n_types).map(|x| s.expected(g, x)));
        }
        Ok(Self {
            n_points: slices.len(),
            n_types,
            n_actions,
            q,
            v,
        })
    }

    /// Raw constructor used when reading tables back from disk.
    pub fn from_values(
        n_points: usize,
        n_types: usize,
        n_actions: usize,
        v: Vec<f64>,
        q: Option<Vec<f64>>,
    ) -> Result<Self> {
        if v.len() != n_points * n_types {
            return Err(Error::DimensionMismatch("value table length".into()));
        }
        let q = q.unwrap_or_else(|| vec![f64::NAN; n_points * n_types * n_actions]);
        if q.len() != n_points * n_types * n_actions {
            return Err(Error::DimensionMismatch("Q table length".into()));
        }
        Ok(Self {
            n_points,
            n_types,
            n_actions,
            q,
            v,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn v(&self, g: usize, x: usize) -> f64 {
        self.v[g * self.n_types + x]
    }

    #[inline]
    pub fn q(&self, g: usize, x: usize, a: usize) -> f64 {
        self.q[(g * self.n_types + x) * self.n_actions + a]
    }

    pub fn q_slice(&self, g: usize) -> QSlice {
        let w = self.n_types * self.n_actions;
        QSlice {
            n_types: self.n_types,
            n_actions: self.n_actions,
            values: self.q[g * w..(g + 1) * w].to_vec(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    /// Largest `|V - sum_a gamma(a|x) Q|` against a set of prescriptions.
    pub fn value_consistency(&self, prescriptions: &[Prescription]) -> f64 {
        let mut worst: f64 = 0.0;
        for (g, gamma) in prescriptions.iter().enumerate() {
            let s = self.q_slice(g);
            for x in 0..self.n_types {
                worst = worst.max((self.v(g, x) - s.expected(gamma, x)).abs());
            }
        }
        worst
    }
}

/// `V(z, x)` at an arbitrary state by interpolation over the grid.
pub fn interpolate_value(table: &StageTables, z: &MeanFieldState, x: usize, grid: &SimplexGrid) -> f64 {
    grid.interpolate(|g| table.v(g, x), z)
}

/// `V(z, x)` for every `x` at once, sharing one weight computation.
pub fn interpolate_values(table: &StageTables, z: &MeanFieldState, grid: &SimplexGrid) -> Vec<f64> {
    let mut out = vec![0.0; table.n_types];
    for (g, w) in grid.interpolation_weights(z) {
        for (x, o) in out.iter_mut().enumerate() {
            *o += w * table.v(g, x);
        }
    }
    out
}
