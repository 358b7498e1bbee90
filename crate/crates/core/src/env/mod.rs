//! Environments: reward, exact transition kernel (when known) and a
//! black-box transition sampler.

mod malware;

use std::fmt;
use std::sync::Arc;

use rand::Rng;

pub use malware::{malware_env, MalwareParams};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::simplex::MeanFieldState;

/// `R(x, a, z)`.
pub type RewardFn = dyn Fn(usize, usize, &MeanFieldState) -> f64 + Send + Sync;

/// Writes `tau(. | x, a, z)` into `out` (length `N_x`).
pub type KernelFn = dyn Fn(usize, usize, &MeanFieldState, &mut [f64]) + Send + Sync;

/// Draws the next type given `(x, a, z)`.
pub type SamplerFn = dyn Fn(usize, usize, &MeanFieldState, &mut StreamRng) -> usize + Send + Sync;

/// Tolerance on kernel row sums accepted at environment construction.
pub const KERNEL_ROW_TOL: f64 = 1e-12;

#[derive(Clone)]
enum Transitions {
    Kernel(Arc<KernelFn>),
    Sampler(Arc<SamplerFn>),
}

/// A finite-horizon discrete mean-field game.
#[derive(Clone)]
pub struct EnvModel {
    name: String,
    n_types: usize,
    n_actions: usize,
    discount: f64,
    horizon: usize,
    reward: Arc<RewardFn>,
    transitions: Transitions,
}

impl fmt::Debug for EnvModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnvModel")
            .field("name", &self.name)
            .field("n_types", &self.n_types)
            .field("n_actions", &self.n_actions)
            .field("discount", &self.discount)
            .field("horizon", &self.horizon)
            .field("has_kernel", &self.has_kernel())
            .finish()
    }
}

fn check_shape(n_types: usize, n_actions: usize, discount: f64, horizon: usize) -> Result<()> {
    if n_types < 2 {
        return Err(Error::InvalidParameter(format!("n_types must be >= 2, got {n_types}")));
    }
    if n_actions < 1 {
        return Err(Error::InvalidParameter("n_actions must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&discount) {
        return Err(Error::InvalidParameter(format!("discount {discount} outside [0, 1]")));
    }
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    Ok(())
}

impl EnvModel {
    /// Environment with a known kernel; its sampler draws from the kernel.
    /// A discount of exactly 0 is accepted for myopic games.
    pub fn with_kernel(
        name: impl Into<String>,
        n_types: usize,
        n_actions: usize,
        discount: f64,
        horizon: usize,
        reward: Arc<RewardFn>,
        kernel: Arc<KernelFn>,
    ) -> Result<Self> {
        check_shape(n_types, n_actions, discount, horizon)?;
        Ok(Self {
            name: name.into(),
            n_types,
            n_actions,
            discount,
            horizon,
            reward,
            transitions: Transitions::Kernel(kernel),
        })
    }

    /// Environment known only through a sampler. The exact solver and the
    /// evaluation routines that need the kernel refuse it.
    pub fn sampler_only(
        name: impl Into<String>,
        n_types: usize,
        n_actions: usize,
        discount: f64,
        horizon: usize,
        reward: Arc<RewardFn>,
        sampler: Arc<SamplerFn>,
    ) -> Result<Self> {
        check_shape(n_types, n_actions, discount, horizon)?;
        Ok(Self {
            name: name.into(),
            n_types,
            n_actions,
            discount,
            horizon,
            reward,
            transitions: Transitions::Sampler(sampler),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Copy of this environment with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        check_shape(self.n_types, self.n_actions, self.discount, horizon)?;
        Ok(Self {
            horizon,
            ..self.clone()
        })
    }

    /// Copy of this environment with a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        check_shape(self.n_types, self.n_actions, discount, self.horizon)?;
        Ok(Self {
            discount,
            ..self.clone()
        })
    }

    #[inline]
    pub fn reward(&self, x: usize, a: usize, z: &MeanFieldState) -> f64 {
        (self.reward)(x, a, z)
    }

    pub fn has_kernel(&self) -> bool {
        matches!(self.transitions, Transitions::Kernel(_))
    }

    pub fn kernel(&self) -> Option<&KernelFn> {
        match &self.transitions {
            Transitions::Kernel(k) => Some(k.as_ref()),
            Transitions::Sampler(_) => None,
        }
    }

    pub fn require_kernel(&self) -> Result<&KernelFn> {
        self.kernel().ok_or_else(|| Error::KernelUnavailable(self.name.clone()))
    }

    /// `tau(. | x, a, z)` as a fresh vector, validated.
    pub fn kernel_row(&self, x: usize, a: usize, z: &MeanFieldState) -> Result<Vec<f64>> {
        let kernel = self.require_kernel()?;
        let mut row = vec![0.0; self.n_types];
        kernel(x, a, z, &mut row);
        check_row(x, a, &row, KERNEL_ROW_TOL)?;
        Ok(row)
    }

    /// Samplers for every `(x, a)` at a fixed mean-field state. With a known
    /// kernel the rows are tabulated once as cumulative distributions.
    pub fn prepare_sampler(&self, z: &MeanFieldState) -> Result<PreparedSampler<'_>> {
        match &self.transitions {
            Transitions::Kernel(kernel) => {
                let mut cdfs = vec![0.0; self.n_types * self.n_actions * self.n_types];
                let mut row = vec![0.0; self.n_types];
                for x in 0..self.n_types {
                    for a in 0..self.n_actions {
                        kernel(x, a, z, &mut row);
                        check_row(x, a, &row, KERNEL_ROW_TOL)?;
                        let base = (x * self.n_actions + a) * self.n_types;
                        let mut acc = 0.0;
                        for (y, p) in row.iter().enumerate() {
                            acc += p;
                            cdfs[base + y] = acc;
                        }
                    }
                }
                Ok(PreparedSampler {
                    inner: Prepared::Cdf {
                        n_types: self.n_types,
                        n_actions: self.n_actions,
                        cdfs,
                    },
                })
            }
            Transitions::Sampler(sampler) => Ok(PreparedSampler {
                inner: Prepared::Opaque {
                    sampler: sampler.as_ref(),
                    z: z.clone(),
                },
            }),
        }
    }
}

pub(crate) fn check_row(x: usize, a: usize, row: &[f64], tol: f64) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tol || row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::KernelNotStochastic { x, a, sum });
    }
    Ok(())
}

/// Per-`(x, a)` transition samplers frozen at one mean-field state.
pub struct PreparedSampler<'a> {
    inner: Prepared<'a>,
}

enum Prepared<'a> {
    Cdf {
        n_types: usize,
        n_actions: usize,
        cdfs: Vec<f64>,
    },
    Opaque {
        sampler: &'a SamplerFn,
        z: MeanFieldState,
    },
}

impl PreparedSampler<'_> {
    #[inline]
    pub fn sample(&self, x: usize, a: usize, rng: &mut StreamRng) -> usize {
        match &self.inner {
            Prepared::Cdf {
                n_types,
                n_actions,
                cdfs,
            } => {
                let base = (x * n_actions + a) * n_types;
                let row = &cdfs[base..base + n_types];
                // Deterministic rows consume no randomness.
                if let Some(y) = row.iter().position(|&c| c >= 1.0) {
                    if y == 0 || row[y - 1] <= 0.0 {
                        return y;
                    }
                }
                let u: f64 = rng.random();
                row.iter().position(|&c| u < c).unwrap_or_else(|| {
                    // u landed in the round-off gap above the last cdf value
                    (0..*n_types)
                        .rev()
                        .find(|&y| row[y] > if y == 0 { 0.0 } else { row[y - 1] })
                        .unwrap_or(n_types - 1)
                })
            }
            Prepared::Opaque { sampler, z } => sampler(x, a, z, rng),
        }
    }
}

/// One draw of the next type.
pub fn sample_transition(env: &EnvModel, x: usize, a: usize, z: &MeanFieldState, rng: &mut StreamRng) -> Result<usize> {
    if x >= env.n_types() || a >= env.n_actions() {
        return Err(Error::InvalidParameter(format!(
            "(x={x}, a={a}) outside {}x{}",
            env.n_types(),
            env.n_actions()
        )));
    }
    Ok(env.prepare_sampler(z)?.sample(x, a, rng))
}

/// Builds an environment by name from string-keyed numeric parameters.
pub type EnvConstructor = fn(&EnvParams) -> Result<EnvModel>;

/// Numeric parameters handed to a registry constructor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvParams {
    pub values: std::collections::BTreeMap<String, f64>,
    pub horizon: Option<usize>,
}

impl EnvParams {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

/// Name -> constructor table for the environments shipped with the crate.
pub fn registry() -> &'static [(&'static str, EnvConstructor)] {
    &[("malware", malware::from_params)]
}

pub fn env_by_name(name: &str, params: &EnvParams) -> Result<EnvModel> {
    registry()
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::UnknownEnvironment(name.to_string()))
        .and_then(|(_, ctor)| ctor(params))
}
