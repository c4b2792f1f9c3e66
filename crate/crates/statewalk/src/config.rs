//! Main configuration file: one TOML document with a section per
//! subsystem. Every CLI flag has a counterpart here; flags win when both
//! are given. The file path comes from `--config` or the
//! `STATEWALK_CONFIG` environment variable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::CrawlConfig;
use crate::explorer::ExplorationConfig;
use crate::inference::ValueDictionary;
use crate::remote::RemoteConfig;
use crate::rerank::RerankConfig;
use crate::reward::RewardConfig;
use crate::state::FingerprintConfig;
use crate::testgen::TestGenConfig;

pub const ENV_CONFIG: &str = "STATEWALK_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Exploration-loop hyperparameters as they appear in the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExploreSection {
    pub min_reward: f64,
    pub max_leaf_branches: u32,
    pub max_consecutive_actions: u32,
    pub max_retries: u32,
    pub seed: u64,
    pub budget: Option<u64>,
    pub actions_per_step: usize,
}

impl Default for ExploreSection {
    fn default() -> Self {
        let d = ExplorationConfig::default();
        ExploreSection {
            min_reward: d.min_reward,
            max_leaf_branches: d.max_leaf_branches,
            max_consecutive_actions: d.max_consecutive_actions,
            max_retries: d.max_retries,
            seed: d.seed,
            budget: d.budget,
            actions_per_step: d.actions_per_step,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub fingerprint: FingerprintConfig,
    pub rerank: RerankConfig,
    pub reward: RewardConfig,
    pub explore: ExploreSection,
    pub values: ValueDictionary,
    pub baseline: CrawlConfig,
    pub testgen: TestGenConfig,
    pub remote: Option<RemoteConfig>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Resolve from an explicit path, else `STATEWALK_CONFIG`, else
    /// defaults.
    pub fn resolve(explicit: Option<&std::path::Path>) -> Result<Config, ConfigError> {
        if let Some(path) = explicit {
            return Self::load(path);
        }
        if let Ok(env_path) = std::env::var(ENV_CONFIG) {
            if !env_path.is_empty() {
                return Self::load(std::path::Path::new(&env_path));
            }
        }
        Ok(Config::default())
    }

    /// Assemble the exploration config for a run against `start_url`.
    pub fn exploration(&self, start_url: &str) -> ExplorationConfig {
        ExplorationConfig {
            min_reward: self.explore.min_reward,
            max_leaf_branches: self.explore.max_leaf_branches,
            max_consecutive_actions: self.explore.max_consecutive_actions,
            max_retries: self.explore.max_retries,
            seed: self.explore.seed,
            budget: self.explore.budget,
            start_url: start_url.to_string(),
            actions_per_step: self.explore.actions_per_step,
            fingerprint: self.fingerprint.clone(),
            rerank: self.rerank.clone(),
            reward: self.reward.clone(),
        }
    }

    /// Baseline crawl config with the shared fingerprint settings applied.
    pub fn crawl(&self) -> CrawlConfig {
        CrawlConfig {
            fingerprint: self.fingerprint.clone(),
            ..self.baseline.clone()
        }
    }
}
