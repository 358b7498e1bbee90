use std::collections::BTreeMap;
use std::path::PathBuf;

use mfg_core::env::{env_by_name, EnvParams};
use mfg_core::eval::Conditioning;
use mfg_core::{EnvModel, FixedPointConfig, MeanFieldState, RlConfig};
use serde::{Deserialize, Serialize};

/// The shipped malware experiment, as printed by `--print-default-config`.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/malware.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub environment: EnvironmentSection,
    pub grid: GridSection,
    #[serde(default)]
    pub exact: FixedPointConfig,
    #[serde(default)]
    pub rl: RlConfig,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub resolution: usize,
}

/// Which solver's atlas `evaluate` reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Exact,
    Rl,
}

impl SolverKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            SolverKind::Exact => "exact",
            SolverKind::Rl => "rl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub solver: SolverKind,
    /// Initial mean-field state of the simulated trajectory.
    pub z1: Vec<f64>,
    pub n_agents: usize,
    pub conditioning: Conditioning,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            solver: SolverKind::Exact,
            z1: vec![1.0, 0.0],
            n_agents: 10_000,
            conditioning: Conditioning::Empirical,
        }
    }
}

/// Optional acceptance thresholds; a violated one makes the run fail.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_exploitability: Option<f64>,
    /// Applied by `compare` at `compare_stage`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_atlas_distance: Option<f64>,
    /// Applied by `compare` over every stage and grid point.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_value_diff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare_stage: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.grid.resolution == 0 {
            return Err("grid.resolution must be >= 1".into());
        }
        if self.environment.horizon == Some(0) {
            return Err("environment.horizon must be >= 1".into());
        }
        self.exact.validate().map_err(|e| format!("exact: {e}"))?;
        self.rl.validate().map_err(|e| format!("rl: {e}"))?;
        if self.evaluate.n_agents == 0 {
            return Err("evaluate.n_agents must be >= 1".into());
        }
        MeanFieldState::new(self.evaluate.z1.clone()).map_err(|e| format!("evaluate.z1: {e}"))?;
        let t = &self.thresholds;
        for (name, v) in [
            ("max_exploitability", t.max_exploitability),
            ("max_atlas_distance", t.max_atlas_distance),
            ("max_value_diff", t.max_value_diff),
        ] {
            if v.is_some_and(|v| v.is_nan() || v < 0.0) {
                return Err(format!("thresholds.{name} must be >= 0"));
            }
        }
        if t.compare_stage == Some(0) {
            return Err("thresholds.compare_stage must be >= 1".into());
        }
        Ok(())
    }

    /// RL settings with the experiment seed applied.
    pub fn rl_config(&self) -> RlConfig {
        RlConfig {
            seed: self.seed,
            ..self.rl.clone()
        }
    }

    pub fn build_env(&self) -> mfg_core::Result<EnvModel> {
        let params = EnvParams {
            values: self.environment.params.clone(),
            horizon: self.environment.horizon,
        };
        env_by_name(&self.environment.name, &params)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }
}
