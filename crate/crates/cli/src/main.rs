use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use prmgui::datagen::{apply_annotator, balance_and_split, read_jsonl, rollout_pipeline, single_step_pipeline, write_jsonl, AnnotatorPreset, OracleBank};
use prmgui::grpo::{train_grpo_offline, train_grpo_trajectory, write_grpo_csv, GrpoHyper, OfflineReward};
use prmgui::harness::{
    build_baseline, make_report, run_benchmark, write_sweep_csv, BenchmarkSuite, ExperimentConfig, PoolFile,
};
use prmgui::netenv::{serve_env, Endpoint, SessionPool};
use prmgui::offline::sample_offline_examples;
use prmgui::policy::PolicyModel;
use prmgui::ppo::{init_value_from_prm, train_ppo, write_metrics_csv, PpoConfig, RewardMode, StepScorer, ValueModel};
use prmgui::prm::service::{serve_prm, PrmClient};
use prmgui::prm::{prm_accuracy, train_prm, PrmModel, PrmTrainConfig, DEFAULT_HIDDEN};
use prmgui::rollout::{LocalRollouts, RolloutBackend, UniformPolicy};
use prmgui::verify::{sweep_n, VerifiedPolicy, VerifierConfig, VerifyMode, SWEEP_N};
use prmgui::world::{Fixture, FixtureConfig, TaskSpec};

#[derive(Parser)]
#[command(name = "prmgui", version, about = "Step-level reward models for a simulated phone GUI")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pipeline {
    Traj,
    Single,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnnotatorArg {
    Oracle,
    Gpt4oBase,
    Gpt4oImproved,
    Human,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardArg {
    Prm,
    Orm,
}

#[derive(Clone, Copy, ValueEnum)]
enum GrpoModeArg {
    Trajectory,
    Offline,
}

#[derive(Clone, Copy, ValueEnum)]
enum GrpoRewardArg {
    Orm,
    Oracle,
    Prm,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyModeArg {
    Prm,
    #[value(name = "self")]
    SelfScore,
    None,
}

/// Options shared by commands that need the task bank and a starting policy.
#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fixture and task bank file; built-in when omitted.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Policy checkpoint; the behavior-cloned baseline when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the simulated device over TCP.
    ServeEnv {
        #[arg(long)]
        bind: String,
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Serve a PRM checkpoint over TCP.
    ServePrm {
        #[arg(long)]
        bind: String,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write the baseline policy checkpoint.
    InitPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate oracle-labeled step records.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        pipeline: Pipeline,
        /// Trajectories (traj), states (single), or both counts (both).
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "oracle")]
        annotator: AnnotatorArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a PRM on a record file; reports held-out accuracy.
    TrainPrm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 0.2)]
        heldout: f64,
        #[arg(long)]
        seed: u64,
    },
    /// Accuracy of a PRM checkpoint against oracle labels.
    EvalPrm {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Online PPO from the starting policy.
    TrainPpo {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        reward: RewardArg,
        /// `tcp://HOST:PORT` of a PRM service, or a checkpoint path.
        #[arg(long)]
        prm: Option<String>,
        /// Pool file (TOML), or `local` for in-process rollouts.
        #[arg(long, default_value = "local")]
        pool: String,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        hard_prm_reward: bool,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        metrics_out: PathBuf,
        /// Where to write the trained policy.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// GRPO, trajectory-level online or single-step offline.
    TrainGrpo {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: GrpoModeArg,
        #[arg(long, value_enum)]
        reward: GrpoRewardArg,
        #[arg(long, default_value_t = 8)]
        group: usize,
        #[arg(long, default_value_t = 0.01)]
        beta: f64,
        /// Iterations (trajectory) or update steps (offline).
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        prm: Option<String>,
        #[arg(long, default_value = "local")]
        pool: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        metrics_out: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verified benchmark run; with `--sweep`, one row per n in 1,3,5,8,16.
    Verify {
        #[arg(long, value_enum, default_value = "prm")]
        mode: VerifyModeArg,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        prm: Option<String>,
        /// Experiment config holding the benchmark section.
        #[arg(long)]
        benchmark: Option<PathBuf>,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value = "local")]
        pool: String,
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unverified benchmark run of a policy.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "local")]
        pool: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a static report from a directory of run CSVs.
    Report {
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Ctx {
    cfg: ExperimentConfig,
    fixture: Arc<Fixture>,
    tasks: Vec<TaskSpec>,
}

impl Ctx {
    fn load(config: Option<&Path>, fixtures: Option<&Path>) -> Result<Self> {
        let cfg = match config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let fc = match fixtures {
            Some(p) => FixtureConfig::load(p).with_context(|| format!("loading fixtures {}", p.display()))?,
            None => FixtureConfig::default(),
        };
        Ok(Self { cfg, fixture: Arc::new(fc.fixture), tasks: fc.tasks })
    }

    fn policy(&self, path: Option<&Path>) -> Result<PolicyModel> {
        match path {
            Some(p) => Ok(PolicyModel::load(p).with_context(|| format!("loading policy {}", p.display()))?),
            None => {
                let local = LocalRollouts::new(self.fixture.clone());
                Ok(build_baseline(self.fixture.clone(), &local, &self.tasks, &self.cfg.baseline)?)
            }
        }
    }

    fn suite(&self) -> Result<BenchmarkSuite> {
        Ok(BenchmarkSuite::from_bank(&self.tasks, &self.cfg.benchmark)?)
    }
}

fn backend(pool: &str, fixture: Arc<Fixture>) -> Result<Box<dyn RolloutBackend>> {
    if pool == "local" {
        return Ok(Box::new(LocalRollouts::new(fixture)));
    }
    let cfg = PoolFile::load(Path::new(pool))?;
    Ok(Box::new(SessionPool::new(cfg)?))
}

/// A PRM given as a service URL or as a checkpoint path. A local checkpoint is
/// also returned as a model so callers can reuse its weights.
fn open_prm(spec: &str) -> Result<(Box<dyn StepScorer>, Option<PrmModel>)> {
    if let Some(rest) = spec.strip_prefix("tcp://") {
        let ep: Endpoint = rest.parse()?;
        return Ok((Box::new(PrmClient::new(ep)), None));
    }
    let model = PrmModel::load(Path::new(spec)).with_context(|| format!("loading PRM {spec}"))?;
    Ok((Box::new(model.clone()), Some(model)))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn park_forever(addr: std::net::SocketAddr) -> ! {
    println!("listening on {addr}");
    loop {
        std::thread::park();
    }
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::ServeEnv { bind, fixtures } => {
            let ctx = Ctx::load(None, fixtures.as_deref())?;
            let handle = serve_env(&bind, ctx.fixture).with_context(|| format!("binding {bind}"))?;
            park_forever(handle.addr())
        }
        Cmd::ServePrm { bind, checkpoint } => {
            let model = PrmModel::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let handle = serve_prm(&bind, Arc::new(model)).with_context(|| format!("binding {bind}"))?;
            park_forever(handle.addr())
        }
        Cmd::InitPolicy { common, seed, out } => {
            let mut ctx = Ctx::load(common.config.as_deref(), common.fixtures.as_deref())?;
            ctx.cfg.baseline.seed = seed;
            ctx.policy(None)?.save(&out)?;
            println!("wrote {}", out.display());
        }
        Cmd::GenData { common, pipeline, n, annotator, seed, out } => {
            let ctx = Ctx::load(common.config.as_deref(), common.fixtures.as_deref())?;
            let local = LocalRollouts::new(ctx.fixture.clone());
            let mut bank = OracleBank::new(ctx.fixture.clone());
            let p = ctx.cfg.data.obstacle_prob;
            let mut records = Vec::new();
            let mut skipped = 0;
            if matches!(pipeline, Pipeline::Traj | Pipeline::Both) {
                let policy = ctx.policy(common.policy.as_deref())?;
                let o = rollout_pipeline(&local, &mut bank, &policy, &ctx.tasks, n, 10_000 + (seed % 900) * 1_000, p)?;
                skipped += o.skipped;
                records.extend(o.records);
            }
            if matches!(pipeline, Pipeline::Single | Pipeline::Both) {
                let o = single_step_pipeline(ctx.fixture.clone(), &mut bank, &ctx.tasks, &UniformPolicy, n, seed, p)?;
                skipped += o.skipped;
                records.extend(o.records);
            }
            let preset = match annotator {
                AnnotatorArg::Oracle => None,
                AnnotatorArg::Gpt4oBase => Some(AnnotatorPreset::Gpt4oBase),
                AnnotatorArg::Gpt4oImproved => Some(AnnotatorPreset::Gpt4oImproved),
                AnnotatorArg::Human => Some(AnnotatorPreset::Human),
            };
            if let Some(preset) = preset {
                records = apply_annotator(&records, preset.accuracy(), seed)?;
            }
            write_jsonl(&out, &records)?;
            let pos = records.iter().filter(|r| r.label.is_positive()).count();
            println!("{} records ({pos} positive, {skipped} unlabelable steps skipped) -> {}", records.len(), out.display());
        }
        Cmd::TrainPrm { data, out, epochs, lr, batch, heldout, seed } => {
            let records = read_jsonl(&data)?;
            let (train, held) = balance_and_split(records, 1.0, heldout, seed)?;
            let cfg = PrmTrainConfig { epochs, lr, batch_size: batch, seed, hidden: DEFAULT_HIDDEN.to_vec(), ..PrmTrainConfig::default() };
            let (model, stats) = train_prm(&train, &cfg)?;
            for s in &stats {
                println!("epoch {} loss {:.4} train_acc {:.4}", s.epoch, s.mean_loss, s.train_accuracy);
            }
            let acc = prm_accuracy(&model, &held.records)?;
            println!(
                "held-out accuracy {:.4} [{:.4}, {:.4}] on {} records ({} train)",
                acc.value,
                acc.interval.lo,
                acc.interval.hi,
                acc.n,
                train.len()
            );
            model.save(&out)?;
        }
        Cmd::EvalPrm { checkpoint, data, seed } => {
            let model = PrmModel::load(&checkpoint)?;
            let records = read_jsonl(&data)?;
            let acc = prm_accuracy(&model, &records)?;
            println!("accuracy {:.4} [{:.4}, {:.4}] on {} records (seed {seed})", acc.value, acc.interval.lo, acc.interval.hi, acc.n);
        }
        Cmd::TrainPpo { common, reward, prm, pool, iters, gamma, hard_prm_reward, seed, metrics_out, out } => {
            let ctx = Ctx::load(common.config.as_deref(), common.fixtures.as_deref())?;
            let mode = match reward {
                RewardArg::Prm => RewardMode::Prm,
                RewardArg::Orm => RewardMode::Orm,
            };
            let scorer = prm.as_deref().map(open_prm).transpose()?;
            if mode == RewardMode::Prm && scorer.is_none() {
                bail!("--reward prm needs --prm");
            }
            let mut policy = ctx.policy(common.policy.as_deref())?;
            let mut value = match scorer.as_ref().and_then(|s| s.1.as_ref()) {
                Some(m) => init_value_from_prm(m)?,
                None => ValueModel::new(&DEFAULT_HIDDEN, seed)?,
            };
            let cfg = PpoConfig {
                reward: mode,
                seed,
                hard_prm_reward,
                iters: iters.unwrap_or(ctx.cfg.ppo.iters),
                gamma: gamma.unwrap_or(ctx.cfg.ppo.gamma),
                ..ctx.cfg.ppo.clone()
            };
            let backend = backend(&pool, ctx.fixture.clone())?;
            let metrics = train_ppo(&mut policy, &mut value, scorer.as_ref().map(|s| s.0.as_ref()), backend.as_ref(), &ctx.tasks, &cfg)?;
            write_metrics_csv(create(&metrics_out)?, &metrics)?;
            if let Some(last) = metrics.last() {
                println!("iteration {} train success {:.3}", last.iteration, last.success_rate);
            }
            if let Some(p) = out {
                policy.save(&p)?;
            }
        }
        Cmd::TrainGrpo { common, mode, reward, group, beta, iters, prm, pool, seed, metrics_out, out } => {
            let ctx = Ctx::load(common.config.as_deref(), common.fixtures.as_deref())?;
            let hyper = GrpoHyper { group_size: group, beta, ..ctx.cfg.grpo.clone() };
            let reference = ctx.policy(common.policy.as_deref())?;
            let mut policy = reference.clone();
            let metrics = match (mode, reward) {
                (GrpoModeArg::Trajectory, GrpoRewardArg::Orm) => {
                    let backend = backend(&pool, ctx.fixture.clone())?;
                    let iters = iters.unwrap_or(ctx.cfg.grpo_iters);
                    train_grpo_trajectory(&mut policy, &reference, backend.as_ref(), &ctx.tasks, &hyper, iters, ctx.cfg.ppo.obstacle_prob, seed)?
                }
                (GrpoModeArg::Trajectory, _) => bail!("trajectory mode uses the terminal outcome reward (--reward orm)"),
                (GrpoModeArg::Offline, GrpoRewardArg::Orm) => bail!("offline mode takes --reward oracle or --reward prm"),
                (GrpoModeArg::Offline, r) => {
                    let o = &ctx.cfg.offline;
                    let suite = ctx.suite()?;
                    let p = ctx.cfg.benchmark.obstacle_prob;
                    let train = sample_offline_examples(ctx.fixture.clone(), &ctx.tasks, o.train_examples, o.train_seed, p)?;
                    let val = sample_offline_examples(ctx.fixture.clone(), &suite.tasks, o.validation_examples, o.validation_seed, p)?;
                    let scorer = prm.as_deref().map(open_prm).transpose()?;
                    let reward = match (r, &scorer) {
                        (GrpoRewardArg::Prm, Some(s)) => OfflineReward::Prm(s.0.as_ref()),
                        (GrpoRewardArg::Prm, None) => bail!("--reward prm needs --prm"),
                        _ => OfflineReward::Oracle,
                    };
                    let steps = iters.unwrap_or(o.steps);
                    train_grpo_offline(&mut policy, &reference, &train, &val, &reward, &hyper, steps, o.eval_every, seed)?
                }
            };
            write_grpo_csv(create(&metrics_out)?, &metrics)?;
            if let Some(p) = out {
                policy.save(&p)?;
            }
        }
        Cmd::Verify { mode, n, prm, benchmark, fixtures, policy, pool, sweep, seed, out } => {
            let ctx = Ctx::load(benchmark.as_deref(), fixtures.as_deref())?;
            let mode = match mode {
                VerifyModeArg::Prm => VerifyMode::Prm,
                VerifyModeArg::SelfScore => VerifyMode::SelfScore,
                VerifyModeArg::None => VerifyMode::None,
            };
            let scorer = prm.as_deref().map(open_prm).transpose()?;
            let scorer_ref = scorer.as_ref().map(|s| s.0.as_ref());
            if mode == VerifyMode::Prm && scorer_ref.is_none() {
                bail!("--mode prm needs --prm");
            }
            let policy = ctx.policy(policy.as_deref())?;
            let suite = ctx.suite()?;
            let backend = backend(&pool, ctx.fixture.clone())?;
            if sweep {
                let rows = sweep_n(backend.as_ref(), &policy, scorer_ref, mode, &suite.jobs(), suite.obstacle_prob, &SWEEP_N)?;
                for r in &rows {
                    println!("n={:<2} SR {:.3} [{:.3}, {:.3}] {:.3} ms/step", r.n, r.success.value, r.success.interval.lo, r.success.interval.hi, r.ms_per_step);
                }
                write_sweep_csv(create(&out)?, &rows)?;
            } else {
                let cfg = VerifierConfig { n: n.unwrap_or(ctx.cfg.verify.n), mode, dedupe: ctx.cfg.verify.dedupe };
                let vp = VerifiedPolicy::new(&policy, scorer_ref, cfg)?;
                let report = run_benchmark(backend.as_ref(), &vp, &suite, &ctx.cfg.hash(), seed)?;
                println!("SR {:.3} [{:.3}, {:.3}] over {} episodes", report.success.value, report.success.interval.lo, report.success.interval.hi, report.success.n);
                report.write_episodes_csv(create(&out)?)?;
            }
        }
        Cmd::Bench { common, pool, seed, out } => {
            let ctx = Ctx::load(common.config.as_deref(), common.fixtures.as_deref())?;
            let policy = ctx.policy(common.policy.as_deref())?;
            let backend = backend(&pool, ctx.fixture.clone())?;
            let report = run_benchmark(backend.as_ref(), &policy, &ctx.suite()?, &ctx.cfg.hash(), seed)?;
            println!("SR {:.3} [{:.3}, {:.3}] over {} episodes", report.success.value, report.success.interval.lo, report.success.interval.hi, report.success.n);
            report.write_episodes_csv(create(&out)?)?;
        }
        Cmd::Report { inputs, out } => {
            let s = make_report(&inputs, &out)?;
            println!("{} runs, {} files -> {}", s.runs, s.files.len(), out.display());
        }
    }
    Ok(())
}
