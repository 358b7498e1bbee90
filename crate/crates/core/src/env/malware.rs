//! Malware spread on a network of nodes.
//!
//! Types: 0 = healthy, 1 = infected. Actions: 0 = do nothing, 1 = repair.
//! A node that does nothing stays infected once infected, and a healthy one
//! gets infected with probability `q`. Repair returns the node to healthy.
//! The reward `-(k + z(1)) x - lambda a` charges infected nodes a risk that
//! grows with the infected fraction of the population, plus the repair cost.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EnvModel, EnvParams};
use crate::error::{Error, Result};
use crate::simplex::MeanFieldState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalwareParams {
    /// Baseline infection risk.
    pub k: f64,
    /// Repair cost.
    pub lambda: f64,
    /// Infection probability for a healthy node that does nothing.
    pub q: f64,
    pub delta: f64,
    pub horizon: usize,
}

impl Default for MalwareParams {
    fn default() -> Self {
        Self {
            k: 0.2,
            lambda: 0.5,
            q: 0.9,
            delta: 0.9,
            horizon: 60,
        }
    }
}

impl MalwareParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("malware: {what}")));
        if !(self.k.is_finite() && self.k >= 0.0) {
            return bad("k must be finite and >= 0");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.q) {
            return bad("q must lie in [0, 1]");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad("delta must lie in (0, 1]");
        }
        if self.horizon < 1 {
            return bad("horizon must be >= 1");
        }
        Ok(())
    }
}

pub fn malware_env(params: MalwareParams) -> Result<EnvModel> {
    params.validate()?;
    let MalwareParams { k, lambda, q, .. } = params;
    EnvModel::with_kernel(
        "malware",
        2,
        2,
        params.delta,
        params.horizon,
        Arc::new(move |x, a, z: &MeanFieldState| -(k + z[1]) * x as f64 - lambda * a as f64),
        Arc::new(move |x, a, _z: &MeanFieldState, out: &mut [f64]| match (x, a) {
            (_, 1) => {
                out[0] = 1.0;
                out[1] = 0.0;
            }
            (0, _) => {
                out[0] = 1.0 - q;
                out[1] = q;
            }
            _ => {
                out[0] = 0.0;
                out[1] = 1.0;
            }
        }),
    )
}

pub(super) fn from_params(params: &EnvParams) -> Result<EnvModel> {
    let d = MalwareParams::default();
    for key in params.values.keys() {
        if !matches!(key.as_str(), "k" | "lambda" | "q" | "delta") {
            return Err(Error::InvalidParameter(format!("malware: unknown parameter `{key}`")));
        }
    }
    malware_env(MalwareParams {
        k: params.get("k").unwrap_or(d.k),
        lambda: params.get("lambda").unwrap_or(d.lambda),
        q: params.get("q").unwrap_or(d.q),
        delta: params.get("delta").unwrap_or(d.delta),
        horizon: params.horizon.unwrap_or(d.horizon),
    })
}
