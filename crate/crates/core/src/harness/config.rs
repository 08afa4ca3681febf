use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{ActionWeighting, IntegratorConfig};
use crate::{Error, Result};

/// Output file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::invalid(format!("unknown format `{other}` (expected csv or json)"))),
        }
    }
}

/// Integrator fields as they appear in a config file. A missing step size
/// means `0.5 · n_states`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSettings {
    pub step_size: Option<f64>,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub retraction_period: usize,
    pub adaptive: bool,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        let d = IntegratorConfig::default();
        IntegratorSettings {
            step_size: None,
            max_iters: d.max_iters,
            grad_tol: d.grad_tol,
            retraction_period: d.retraction_period,
            adaptive: d.adaptive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_states: usize,
    pub n_actions: usize,
    pub k: usize,
    pub n_mdps: usize,
    pub gamma: f64,
    pub reward_scale: f64,
    pub seed: u64,
    pub integrator: IntegratorSettings,
    pub epsilon_list: Vec<f64>,
    pub n_robustness_runs: usize,
    /// How the policy weights the per-action flows in the robustness study.
    pub robustness_weighting: ActionWeighting,
    pub n_reward_samples: usize,
    /// Keep every this-many iterations of the trace-ratio curves.
    pub curve_stride: usize,
    pub output_dir: PathBuf,
    pub format: Format,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_states: 10,
            n_actions: 4,
            k: 4,
            n_mdps: 100,
            gamma: crate::mdp::DEFAULT_GAMMA,
            reward_scale: 1.0,
            seed: 0,
            integrator: IntegratorSettings::default(),
            epsilon_list: vec![0.01, 0.03, 0.1, 0.25],
            n_robustness_runs: 200,
            robustness_weighting: ActionWeighting::Marginal,
            n_reward_samples: 1000,
            curve_stride: 10,
            output_dir: PathBuf::from("results"),
            format: Format::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::invalid("n_states and n_actions must be positive"));
        }
        if self.k == 0 || self.k > self.n_states {
            return Err(Error::invalid(format!("k must lie in 1..={}, got {}", self.n_states, self.k)));
        }
        if self.n_mdps == 0 {
            return Err(Error::invalid("n_mdps must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1)"));
        }
        if !(self.reward_scale > 0.0) {
            return Err(Error::invalid("reward_scale must be positive"));
        }
        if self.epsilon_list.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::invalid("every epsilon must lie in [0, 1]"));
        }
        if self.curve_stride == 0 {
            return Err(Error::invalid("curve_stride must be positive"));
        }
        self.integrator_config().validate()
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        let s = &self.integrator;
        IntegratorConfig {
            step_size: s.step_size.unwrap_or(0.5 * self.n_states as f64),
            max_iters: s.max_iters,
            grad_tol: s.grad_tol,
            retraction_period: s.retraction_period,
            adaptive: s.adaptive,
            ..IntegratorConfig::default()
        }
    }

    /// Hex SHA-256 of the config's canonical JSON.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
