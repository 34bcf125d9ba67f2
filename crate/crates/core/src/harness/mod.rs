//! Experiment orchestration: the benchmark suite, the frozen baseline policy,
//! data and PRM pipelines, the annotation ablation, CSV outputs and reports.

mod config;
mod report;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    AblationConfig, BaselineConfig, BenchmarkConfig, ConfigError, DataConfig, ExperimentConfig, OfflineConfig, PoolFile, PpoArms,
};
pub use crate::offline::{eval_offline, OfflineReport};
pub use report::{make_report, CsvKind, ReportError, ReportSummary};

use crate::datagen::{
    apply_annotator, balance_and_split, rollout_pipeline, single_step_pipeline, AnnotatorPreset, DataError,
    LabeledDataset, OracleBank, StepRecord,
};
use crate::policy::{behavior_clone, candidate_features, CloneConfig, CloneExample, PolicyModel};
use crate::ppo::{init_value_from_prm, train_ppo, IterMetrics, PpoConfig, RewardMode, StepScorer, TRAIN_SEED_LIMIT};
use crate::prm::{prm_accuracy, train_prm, PrmError, PrmModel, PrmTrainConfig};
use crate::rollout::{Decision, EnvError, OraclePolicy, Policy, RolloutBackend, UniformPolicy};
use crate::stats::{mean, Proportion};
use crate::verify::{VerifiedPolicy, VerifierConfig, VerifyMode};
use crate::world::{Action, Fixture, GuiState, Template, TaskSpec};

pub const BENCH_SEED_BASE: u64 = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("benchmark seed {seed} for {task} collides with the training seed range")]
    SeedOverlap { task: String, seed: u64 },
    #[error("benchmark suite is empty")]
    EmptySuite,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Prm(#[from] PrmError),
    #[error(transparent)]
    Neural(#[from] crate::neural::NeuralError),
    #[error(transparent)]
    Verify(#[from] crate::verify::VerifyError),
    #[error(transparent)]
    Rl(#[from] crate::ppo::RlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fixed evaluation episodes: every task crossed with its seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSuite {
    pub tasks: Vec<TaskSpec>,
    pub seeds: Vec<Vec<u64>>,
    pub obstacle_prob: f64,
}

impl BenchmarkSuite {
    /// The first `cfg.tasks_per_template` tasks of each template in bank order,
    /// each with `cfg.seeds_per_task` seeds starting at `cfg.seed_base`.
    pub fn from_bank(bank: &[TaskSpec], cfg: &BenchmarkConfig) -> Result<Self, HarnessError> {
        let mut tasks = Vec::new();
        for t in Template::ALL {
            tasks.extend(bank.iter().filter(|x| x.template == t).take(cfg.tasks_per_template).cloned());
        }
        let seeds = (0..tasks.len())
            .map(|i| (0..cfg.seeds_per_task as u64).map(|s| cfg.seed_base + i as u64 * 100 + s).collect())
            .collect();
        let suite = Self { tasks, seeds, obstacle_prob: cfg.obstacle_prob };
        suite.check()?;
        Ok(suite)
    }

    /// Seeds must lie outside the training range, and the suite must be
    /// non-empty.
    pub fn check(&self) -> Result<(), HarnessError> {
        if self.tasks.is_empty() {
            return Err(HarnessError::EmptySuite);
        }
        for (t, seeds) in self.tasks.iter().zip(&self.seeds) {
            if let Some(&s) = seeds.iter().find(|&&s| s < TRAIN_SEED_LIMIT) {
                return Err(HarnessError::SeedOverlap { task: t.task_id.clone(), seed: s });
            }
        }
        Ok(())
    }

    pub fn jobs(&self) -> Vec<(TaskSpec, u64)> {
        self.tasks
            .iter()
            .zip(&self.seeds)
            .flat_map(|(t, ss)| ss.iter().map(move |s| (t.clone(), *s)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.seeds.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("suite serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub task_id: String,
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    /// Executed actions joined by ` ; `.
    pub actions: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub success: Proportion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub suite_hash: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
}

pub fn version_id() -> String {
    format!(
        "prmgui-{} {} {}",
        env!("CARGO_PKG_VERSION"),
        crate::world::DEFAULT_FIXTURE_VERSION,
        crate::prm::FEATURIZER_VERSION
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub meta: RunMeta,
    pub success: Proportion,
    pub per_task: Vec<TaskRow>,
    pub episodes: Vec<EpisodeRow>,
}

impl BenchReport {
    pub const EPISODE_HEADER: [&'static str; 5] = ["task_id", "seed", "success", "steps", "actions"];

    pub fn write_episodes_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::EPISODE_HEADER.join(","))?;
        for e in &self.episodes {
            writeln!(out, "{},{},{},{},\"{}\"", e.task_id, e.seed, e.success as u8, e.steps, e.actions.replace('"', "\"\""))?;
        }
        out.flush()
    }

    /// Hex SHA-256 of the episode CSV; equal reports hash equal.
    pub fn hash(&self) -> String {
        sha256_hex(self.episodes_csv().as_bytes())
    }

    pub fn episodes_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_episodes_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    }
}

/// Runs every suite episode with `policy` (wrap it in `VerifiedPolicy` for a
/// verified run). `config_hash` and `seed` identify the producing run.
pub fn run_benchmark(
    backend: &dyn RolloutBackend,
    policy: &dyn Policy,
    suite: &BenchmarkSuite,
    config_hash: &str,
    seed: u64,
) -> Result<BenchReport, HarnessError> {
    suite.check()?;
    let trajs = backend.rollouts(policy, &suite.jobs(), suite.obstacle_prob)?;
    let mut per: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut episodes = Vec::with_capacity(trajs.len());
    for t in &trajs {
        let e = per.entry(t.task.task_id.clone()).or_default();
        e.0 += t.success as u64;
        e.1 += 1;
        episodes.push(EpisodeRow {
            task_id: t.task.task_id.clone(),
            seed: t.seed,
            success: t.success,
            steps: t.steps.len(),
            actions: t.steps.iter().map(|s| s.action.to_string()).collect::<Vec<_>>().join(" ; "),
        });
    }
    let wins = trajs.iter().filter(|t| t.success).count() as u64;
    Ok(BenchReport {
        meta: RunMeta { suite_hash: suite.content_hash(), config_hash: config_hash.to_string(), version: version_id(), seed },
        success: Proportion::new(wins, trajs.len() as u64),
        per_task: per.into_iter().map(|(task_id, (s, n))| TaskRow { task_id, success: Proportion::new(s, n) }).collect(),
        episodes,
    })
}

/// Follows the oracle, except that with probability `epsilon` it acts
/// uniformly at random.
pub struct NoisyOracle {
    oracle: OraclePolicy,
    epsilon: f64,
}

impl NoisyOracle {
    pub fn new(fixture: Arc<Fixture>, epsilon: f64) -> Self {
        Self { oracle: OraclePolicy::new(fixture), epsilon }
    }
}

impl Policy for NoisyOracle {
    fn decide(&self, task: &TaskSpec, state: &GuiState, candidates: &[Action], rng: &mut ChaCha8Rng) -> Result<Decision, EnvError> {
        if rng.gen::<f64>() < self.epsilon {
            UniformPolicy.decide(task, state, candidates, rng)
        } else {
            self.oracle.decide(task, state, candidates, rng)
        }
    }
}

/// Behavior-cloned starting policy: demonstrations from a noisy oracle on
/// training seeds, with every oracle-optimal candidate as an acceptable target.
pub fn build_baseline(
    fixture: Arc<Fixture>,
    backend: &dyn RolloutBackend,
    tasks: &[TaskSpec],
    cfg: &BaselineConfig,
) -> Result<PolicyModel, HarnessError> {
    let seed = cfg.seed;
    let demo = NoisyOracle::new(fixture.clone(), cfg.demo_epsilon);
    let jobs: Vec<(TaskSpec, u64)> =
        (0..cfg.demo_trajectories).map(|i| (tasks[i % tasks.len()].clone(), cfg.demo_seed_base + i as u64)).collect();
    let trajs = backend.rollouts(&demo, &jobs, cfg.obstacle_prob)?;
    let oracle = OraclePolicy::new(fixture);
    let mut examples = Vec::new();
    for t in &trajs {
        for s in &t.steps {
            let targets = oracle.optimal_indices(&t.task, &s.state, &s.candidates);
            if !targets.is_empty() {
                examples.push(CloneExample { feats: candidate_features(&t.task, &s.state, &s.candidates), targets });
            }
        }
    }
    let mut policy = PolicyModel::new(&cfg.hidden, cfg.temperature, seed.wrapping_add(1))?;
    behavior_clone(&mut policy, &examples, &CloneConfig { steps: cfg.bc_steps, batch_size: cfg.batch_size, lr: cfg.lr, seed })?;
    Ok(policy)
}

/// Oracle-labeled records from both pipelines: full rollouts of `policy` and
/// single steps of the uniform policy from random-walk states.
pub fn generate_records(
    fixture: Arc<Fixture>,
    backend: &dyn RolloutBackend,
    policy: &dyn Policy,
    tasks: &[TaskSpec],
    cfg: &DataConfig,
    seed: u64,
) -> Result<Vec<StepRecord>, HarnessError> {
    let mut bank = OracleBank::new(fixture.clone());
    let seed_base = 10_000 + (seed % 900) * 1_000;
    let mut records =
        rollout_pipeline(backend, &mut bank, policy, tasks, cfg.trajectories, seed_base, cfg.obstacle_prob)?.records;
    records.extend(
        single_step_pipeline(fixture, &mut bank, tasks, &UniformPolicy, cfg.single_steps, seed, cfg.obstacle_prob)?.records,
    );
    Ok(records)
}

/// Balances, splits and trains a PRM; returns it with its held-out accuracy.
pub fn train_prm_on(
    records: Vec<StepRecord>,
    cfg: &DataConfig,
    train_cfg: &PrmTrainConfig,
    seed: u64,
) -> Result<(PrmModel, Proportion, LabeledDataset, LabeledDataset), HarnessError> {
    let (train, heldout) = balance_and_split(records, cfg.ratio, cfg.heldout_fraction, seed)?;
    let (model, _) = train_prm(&train, &PrmTrainConfig { seed, ..train_cfg.clone() })?;
    let acc = prm_accuracy(&model, &heldout.records)?;
    Ok((model, acc, train, heldout))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub preset: String,
    pub accuracy: f64,
    pub seed: u64,
    pub train_records: usize,
    pub prm_accuracy: Proportion,
    pub verified_sr: Proportion,
}

pub const ABLATION_HEADER: [&str; 7] =
    ["preset", "annotator_accuracy", "seed", "train_records", "prm_accuracy", "verified_sr", "verified_successes"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub preset: String,
    pub accuracy: f64,
    pub mean_prm_accuracy: f64,
    pub mean_verified_sr: f64,
    /// Pooled Wilson interval over all seeds' episodes.
    pub pooled_sr: Proportion,
}

/// Annotation-quality ablation. Each seed generates one record set; arms
/// differ only in the annotator noise applied to it. Every arm trains a PRM,
/// scores it on clean held-out labels, and runs the verified benchmark.
#[allow(clippy::too_many_arguments)]
pub fn ablation_annotation(
    fixture: Arc<Fixture>,
    backend: &dyn RolloutBackend,
    policy: &PolicyModel,
    tasks: &[TaskSpec],
    suite: &BenchmarkSuite,
    presets: &[AnnotatorPreset],
    seeds: &[u64],
    data: &DataConfig,
    train_cfg: &PrmTrainConfig,
    verifier: &VerifierConfig,
) -> Result<(Vec<AblationRow>, Vec<AblationSummary>), HarnessError> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let records = generate_records(fixture.clone(), backend, policy, tasks, data, seed)?;
        for preset in presets {
            let noisy = apply_annotator(&records, preset.accuracy(), 77 + seed)?;
            let (prm, acc, train, _) = train_prm_on(noisy, data, train_cfg, seed)?;
            let vp = VerifiedPolicy::new(policy, Some(&prm as &dyn StepScorer), verifier.clone())?;
            let report = run_benchmark(backend, &vp, suite, "ablation", seed)?;
            rows.push(AblationRow {
                preset: preset.name().to_string(),
                accuracy: preset.accuracy(),
                seed,
                train_records: train.len(),
                prm_accuracy: acc,
                verified_sr: report.success,
            });
        }
    }
    let summary = presets
        .iter()
        .map(|p| {
            let arm: Vec<&AblationRow> = rows.iter().filter(|r| r.preset == p.name()).collect();
            let (s, n) = arm.iter().fold((0, 0), |(s, n), r| (s + r.verified_sr.successes, n + r.verified_sr.n));
            AblationSummary {
                preset: p.name().to_string(),
                accuracy: p.accuracy(),
                mean_prm_accuracy: mean(&arm.iter().map(|r| r.prm_accuracy.value).collect::<Vec<_>>()),
                mean_verified_sr: mean(&arm.iter().map(|r| r.verified_sr.value).collect::<Vec<_>>()),
                pooled_sr: Proportion::new(s, n),
            }
        })
        .collect();
    Ok((rows, summary))
}

pub fn write_ablation_csv<W: Write>(mut out: W, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(out, "{}", ABLATION_HEADER.join(","))?;
    for r in rows {
        writeln!(
            out,
            "{},{:.2},{},{},{:.6},{:.6},{}",
            r.preset, r.accuracy, r.seed, r.train_records, r.prm_accuracy.value, r.verified_sr.value, r.verified_sr.successes
        )?;
    }
    out.flush()
}

pub const SWEEP_HEADER: [&str; 6] = ["n", "success_rate", "ci_lo", "ci_hi", "successes", "episodes"];

/// Sweep CSV without timing columns, so reruns compare byte-for-byte.
pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[crate::verify::SweepRow]) -> std::io::Result<()> {
    writeln!(out, "{}", SWEEP_HEADER.join(","))?;
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{},{}",
            r.n, r.success.value, r.success.interval.lo, r.success.interval.hi, r.success.successes, r.success.n
        )?;
    }
    out.flush()
}

/// Verified benchmark with the given mode and candidate count.
pub fn verified_benchmark(
    backend: &dyn RolloutBackend,
    policy: &PolicyModel,
    scorer: Option<&dyn StepScorer>,
    mode: VerifyMode,
    n: usize,
    suite: &BenchmarkSuite,
    config_hash: &str,
    seed: u64,
) -> Result<BenchReport, HarnessError> {
    let vp = VerifiedPolicy::new(policy, scorer, VerifierConfig { n, mode, dedupe: true })?;
    run_benchmark(backend, &vp, suite, config_hash, seed)
}

/// One PPO arm from the frozen baseline. The value head starts from the PRM's
/// hidden layers in both arms; the discount comes from `cfg.ppo_arms`.
#[allow(clippy::too_many_arguments)]
pub fn run_ppo_arm(
    backend: &dyn RolloutBackend,
    base: &PolicyModel,
    prm: &PrmModel,
    scorer: &dyn StepScorer,
    tasks: &[TaskSpec],
    cfg: &ExperimentConfig,
    mode: RewardMode,
    seed: u64,
) -> Result<(PolicyModel, Vec<IterMetrics>), HarnessError> {
    let gamma = match mode {
        RewardMode::Prm => cfg.ppo_arms.prm_gamma,
        RewardMode::Orm => cfg.ppo_arms.orm_gamma,
    };
    let ppo = PpoConfig { reward: mode, gamma, seed, ..cfg.ppo.clone() };
    let mut policy = base.clone();
    let mut value = init_value_from_prm(prm)?;
    let metrics = train_ppo(&mut policy, &mut value, Some(scorer), backend, tasks, &ppo)?;
    Ok((policy, metrics))
}
