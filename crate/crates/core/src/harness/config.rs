//! TOML experiment configuration. Every section is optional; missing keys
//! take the frozen defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grpo::GrpoHyper;
use crate::ppo::PpoConfig;
use crate::prm::PrmTrainConfig;
use crate::verify::{VerifierConfig, VerifyMode, DEFAULT_N_OFFLINE};

use super::{sha256_hex, BENCH_SEED_BASE};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub tasks_per_template: usize,
    pub seeds_per_task: usize,
    pub seed_base: u64,
    pub obstacle_prob: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { tasks_per_template: 4, seeds_per_task: 10, seed_base: BENCH_SEED_BASE, obstacle_prob: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub demo_epsilon: f64,
    pub demo_trajectories: usize,
    pub demo_seed_base: u64,
    pub bc_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub temperature: f64,
    pub obstacle_prob: f64,
    /// Cloning seed; the network is initialized with `seed + 1`.
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            demo_epsilon: 0.3,
            demo_trajectories: 200,
            demo_seed_base: 0,
            bc_steps: 100,
            batch_size: 32,
            lr: 1e-3,
            hidden: vec![64, 64],
            temperature: 1.0,
            obstacle_prob: 0.15,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub trajectories: usize,
    pub single_steps: usize,
    /// Negatives kept per positive when balancing.
    pub ratio: f64,
    pub heldout_fraction: f64,
    pub obstacle_prob: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { trajectories: 800, single_steps: 4000, ratio: 1.0, heldout_fraction: 0.2, obstacle_prob: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoArms {
    pub prm_gamma: f64,
    pub orm_gamma: f64,
}

impl Default for PpoArms {
    fn default() -> Self {
        Self { prm_gamma: 0.5, orm_gamma: 0.99 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfflineConfig {
    pub train_examples: usize,
    pub validation_examples: usize,
    pub train_seed: u64,
    pub validation_seed: u64,
    pub steps: usize,
    pub eval_every: usize,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self { train_examples: 2000, validation_examples: 500, train_seed: 1, validation_seed: 2, steps: 200, eval_every: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub data: DataConfig,
    pub seeds: Vec<u64>,
    pub verify_n: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            data: DataConfig { trajectories: 300, single_steps: 1500, ..DataConfig::default() },
            seeds: (0..5).collect(),
            verify_n: DEFAULT_N_OFFLINE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkConfig,
    pub baseline: BaselineConfig,
    pub data: DataConfig,
    pub prm: PrmTrainConfig,
    pub ppo: PpoConfig,
    pub ppo_arms: PpoArms,
    pub grpo: GrpoHyper,
    pub grpo_iters: usize,
    pub offline: OfflineConfig,
    pub verify: VerifierConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkConfig::default(),
            baseline: BaselineConfig::default(),
            data: DataConfig::default(),
            prm: PrmTrainConfig { epochs: 40, lr: 1e-3, ..PrmTrainConfig::default() },
            ppo: PpoConfig::default(),
            ppo_arms: PpoArms::default(),
            grpo: GrpoHyper::default(),
            grpo_iters: 60,
            offline: OfflineConfig::default(),
            verify: VerifierConfig { n: DEFAULT_N_OFFLINE, mode: VerifyMode::Prm, dedupe: true },
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the normalized TOML form.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.benchmark.tasks_per_template == 0 || self.benchmark.seeds_per_task == 0 {
            return bad("benchmark needs at least one task and one seed");
        }
        if !(0.0..=1.0).contains(&self.benchmark.obstacle_prob) {
            return bad("benchmark.obstacle_prob must lie in [0, 1]");
        }
        if self.benchmark.seed_base < crate::ppo::TRAIN_SEED_LIMIT {
            return bad("benchmark.seed_base overlaps the training seed range");
        }
        if !(0.0..=1.0).contains(&self.baseline.demo_epsilon) {
            return bad("baseline.demo_epsilon must lie in [0, 1]");
        }
        if self.verify.n == 0 || self.ablation.verify_n == 0 {
            return bad("verifier n must be at least 1");
        }
        if self.grpo.group_size < 2 {
            return bad("grpo.group_size must be at least 2");
        }
        Ok(())
    }
}

/// Pool file: endpoint lists as `HOST:PORT` strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolFile {
    pub active: Vec<String>,
    #[serde(default)]
    pub backups: Vec<String>,
    #[serde(default)]
    pub retry_budget: Option<usize>,
    #[serde(default)]
    pub connect_timeout_ms: Option<u64>,
}

impl PoolFile {
    pub fn parse(text: &str) -> Result<crate::netenv::PoolConfig, ConfigError> {
        let f: PoolFile = toml::from_str(text)?;
        let eps = |v: &[String]| {
            v.iter()
                .map(|s| s.parse::<crate::netenv::Endpoint>().map_err(|e| ConfigError::Invalid(e.to_string())))
                .collect::<Result<Vec<_>, _>>()
        };
        let mut cfg = crate::netenv::PoolConfig::new(eps(&f.active)?, eps(&f.backups)?);
        if cfg.active.is_empty() {
            return Err(ConfigError::Invalid("pool needs at least one active endpoint".into()));
        }
        if let Some(r) = f.retry_budget {
            cfg.retry_budget = r;
        }
        if let Some(t) = f.connect_timeout_ms {
            cfg.connect_timeout_ms = t;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<crate::netenv::PoolConfig, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }
}
