//! Multi-turn PPO over the candidate-set policy: reward composition, GAE,
//! clipped surrogate, value regression, and the outcome-reward baseline.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{Activation, AdamW, Checkpoint, Mlp, NeuralError};
use crate::policy::{candidate_features, PolicyModel};
use crate::prm::{state_features, PrmError, PrmModel, PrmScore, FEATURE_DIM, FEATURIZER_VERSION};
use crate::rollout::{EnvError, RolloutBackend, Trajectory};
use crate::world::{parse_action, Action, GuiState, TaskSpec};

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid hyperparameter: {0}")]
    BadHyper(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Prm(#[from] PrmError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("step scorer: {0}")]
    Scorer(String),
}

/// Scores single steps; implemented in-process by `PrmModel` and remotely by
/// the scoring client.
pub trait StepScorer: Sync {
    fn score_step(&self, task: &TaskSpec, state: &GuiState, action: &Action) -> Result<PrmScore, RlError>;
}

impl StepScorer for PrmModel {
    fn score_step(&self, task: &TaskSpec, state: &GuiState, action: &Action) -> Result<PrmScore, RlError> {
        Ok(self.score(task, state, action)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_p: f64,
    pub w_f: f64,
    pub format_penalty: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { w_p: 1.0, w_f: 0.1, format_penalty: -1.0 }
    }
}

/// `w_p * prm + w_f * (0 if parsable else format_penalty)`.
pub fn compose_reward(prm_scalar: f64, action_parsable: bool, w: &RewardWeights) -> f64 {
    w.w_p * prm_scalar + w.w_f * if action_parsable { 0.0 } else { w.format_penalty }
}

/// An action is parsable when its textual form parses back to itself.
pub fn action_parsable(action: &Action) -> bool {
    action.validate().is_ok() && parse_action(&action.to_string()).is_ok_and(|a| a == *action)
}

/// Generalized advantage estimation by backward recursion. `values` has one
/// more entry than `rewards` (the bootstrap value, 0 at termination).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    if values.len() != rewards.len() + 1 {
        return Err(RlError::LengthMismatch(format!("{} rewards need {} values, got {}", rewards.len(), rewards.len() + 1, values.len())));
    }
    let t_len = rewards.len();
    let mut adv = vec![0.0; t_len];
    let mut running = 0.0;
    for t in (0..t_len).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Negated mean clipped surrogate and its gradient w.r.t. `logp_new`.
pub fn ppo_clip_loss(logp_new: &[f64], logp_old: &[f64], adv: &[f64], epsilon: f64) -> Result<(f64, Vec<f64>), RlError> {
    if logp_new.len() != logp_old.len() || logp_new.len() != adv.len() {
        return Err(RlError::LengthMismatch("logp_new, logp_old and adv must align".into()));
    }
    if logp_new.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(RlError::BadHyper(format!("clip epsilon {epsilon}")));
    }
    let n = logp_new.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logp_new.len());
    for i in 0..logp_new.len() {
        let ratio = (logp_new[i] - logp_old[i]).exp();
        if !ratio.is_finite() {
            return Err(RlError::NonFinite(format!("ratio at {i}")));
        }
        let a = adv[i];
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * a;
        if unclipped <= clipped {
            total += unclipped;
            grad.push(-ratio * a / n);
        } else {
            total += clipped;
            grad.push(0.0);
        }
    }
    Ok((-total / n, grad))
}

/// Mean squared error and its gradient w.r.t. `values`.
pub fn value_loss(values: &[f64], returns: &[f64]) -> Result<(f64, Vec<f64>), RlError> {
    if values.len() != returns.len() {
        return Err(RlError::LengthMismatch("values and returns must align".into()));
    }
    if values.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let n = values.len() as f64;
    let loss = values.iter().zip(returns).map(|(v, r)| (v - r) * (v - r)).sum::<f64>() / n;
    let grad = values.iter().zip(returns).map(|(v, r)| 2.0 * (v - r) / n).collect();
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueModel {
    pub featurizer: String,
    pub mlp: Mlp,
}

impl ValueModel {
    pub fn new(hidden: &[usize], seed: u64) -> Result<Self, NeuralError> {
        let mut sizes = vec![FEATURE_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self { featurizer: FEATURIZER_VERSION.into(), mlp: Mlp::new(&sizes, Activation::Tanh, seed)? })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.mlp.forward(x).expect("feature dimension")[0]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.mlp.clone()).with_meta("featurizer", &self.featurizer).with_meta("kind", "value")
    }

    pub fn save(&self, path: &Path) -> Result<(), PrmError> {
        Ok(self.to_checkpoint().save(path)?)
    }
}

/// Value model whose hidden layers are copied from the PRM, with a fresh zero
/// scalar head. It reads state-only features (action block zeroed).
pub fn init_value_from_prm(prm: &PrmModel) -> Result<ValueModel, PrmError> {
    prm.check_version()?;
    let mut sizes = prm.mlp.sizes().to_vec();
    *sizes.last_mut().unwrap() = 1;
    let mut params = vec![0.0; 0];
    let hidden_layers = prm.mlp.num_layers() - 1;
    for l in 0..hidden_layers {
        params.extend_from_slice(&prm.mlp.params()[prm.mlp.layer_range(l)]);
    }
    let head = sizes[sizes.len() - 2] + 1;
    params.extend(std::iter::repeat(0.0).take(head));
    Ok(ValueModel {
        featurizer: prm.featurizer.clone(),
        mlp: Mlp::from_parts(sizes, prm.mlp.activation(), params)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// Dense per-step reward from the step scorer.
    Prm,
    /// Terminal-only +-1 from the programmatic success check.
    Orm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub iters: usize,
    pub tasks_per_iter: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub update_epochs: usize,
    pub minibatch: usize,
    pub actor_lr: f64,
    pub value_lr: f64,
    pub reward: RewardMode,
    pub hard_prm_reward: bool,
    pub weights: RewardWeights,
    pub obstacle_prob: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            iters: 30,
            tasks_per_iter: 8,
            gamma: 0.99,
            lambda: 0.95,
            clip_epsilon: 0.2,
            update_epochs: 4,
            minibatch: 32,
            actor_lr: 3e-4,
            value_lr: 1e-3,
            reward: RewardMode::Prm,
            hard_prm_reward: false,
            weights: RewardWeights::default(),
            obstacle_prob: 0.15,
            seed: 0,
        }
    }
}

/// One step of a collected batch.
#[derive(Clone, Debug)]
pub struct PpoSample {
    pub feats: Vec<Vec<f64>>,
    pub chosen: usize,
    pub logp_old: f64,
    pub state_x: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterMetrics {
    pub iteration: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

pub const METRICS_HEADER: [&str; 5] = ["iteration", "success_rate", "mean_reward", "policy_loss", "value_loss"];

/// World seeds used for training stay below this bound; evaluation seeds live
/// at or above it.
pub const TRAIN_SEED_LIMIT: u64 = 1_000_000;

pub fn train_seed(run_seed: u64, iteration: usize, k: usize) -> u64 {
    (run_seed % 97) * 10_000 + (iteration as u64 * 64 + k as u64) % 10_000
}

/// Per-step rewards for one trajectory.
pub fn trajectory_rewards(
    traj: &Trajectory,
    mode: RewardMode,
    scorer: Option<&dyn StepScorer>,
    hard: bool,
    w: &RewardWeights,
) -> Result<Vec<f64>, RlError> {
    let n = traj.steps.len();
    let mut out = Vec::with_capacity(n);
    for (t, step) in traj.steps.iter().enumerate() {
        let base = match mode {
            RewardMode::Prm => {
                let s = scorer
                    .ok_or_else(|| RlError::Scorer("PRM reward mode needs a scorer".into()))?
                    .score_step(&traj.task, &step.state, &step.action)?;
                s.reward(hard)
            }
            RewardMode::Orm => {
                if t + 1 == n {
                    if traj.success {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    0.0
                }
            }
        };
        out.push(compose_reward(base, action_parsable(&step.action), w));
    }
    Ok(out)
}

/// Turns trajectories into samples with advantages and return targets.
pub fn build_samples(
    trajs: &[Trajectory],
    rewards: &[Vec<f64>],
    value: &ValueModel,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<PpoSample>, RlError> {
    let mut out = Vec::new();
    for (traj, r) in trajs.iter().zip(rewards) {
        let xs: Vec<Vec<f64>> = traj.steps.iter().map(|s| state_features(&traj.task, &s.state)).collect();
        let mut values: Vec<f64> = xs.iter().map(|x| value.value(x)).collect();
        values.push(0.0);
        let (adv, ret) = gae(r, &values, gamma, lambda)?;
        for (t, step) in traj.steps.iter().enumerate() {
            out.push(PpoSample {
                feats: candidate_features(&traj.task, &step.state, &step.candidates),
                chosen: step.chosen,
                logp_old: step.logp,
                state_x: xs[t].clone(),
                reward: r[t],
                value: values[t],
                advantage: adv[t],
                ret: ret[t],
            });
        }
    }
    Ok(out)
}

/// Clipped-surrogate loss over samples and its gradient w.r.t. policy params.
pub fn policy_loss_and_grad(policy: &PolicyModel, samples: &[PpoSample], epsilon: f64) -> Result<(f64, Vec<f64>), RlError> {
    let logp_new: Vec<f64> = samples.iter().map(|s| policy.log_probs_from_features(&s.feats)[s.chosen]).collect();
    let logp_old: Vec<f64> = samples.iter().map(|s| s.logp_old).collect();
    let adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
    let (loss, d_logp) = ppo_clip_loss(&logp_new, &logp_old, &adv, epsilon)?;
    let mut grads = policy.mlp.zero_grads();
    for (s, d) in samples.iter().zip(&d_logp) {
        if *d != 0.0 {
            policy.accumulate_logp_grad(&s.feats, s.chosen, *d, &mut grads);
        }
    }
    Ok((loss, grads))
}

/// MSE value loss over samples and its gradient w.r.t. value params.
pub fn value_loss_and_grad(value: &ValueModel, samples: &[PpoSample]) -> Result<(f64, Vec<f64>), RlError> {
    let traces: Vec<_> = samples.iter().map(|s| value.mlp.trace(&s.state_x)).collect::<Result<_, _>>()?;
    let v: Vec<f64> = traces.iter().map(|t| t.output()[0]).collect();
    let ret: Vec<f64> = samples.iter().map(|s| s.ret).collect();
    let (loss, d) = value_loss(&v, &ret)?;
    let mut grads = value.mlp.zero_grads();
    for (t, dv) in traces.iter().zip(&d) {
        value.mlp.backward(t, &[*dv], &mut grads);
    }
    Ok((loss, grads))
}

/// Optimizer state kept across iterations.
pub struct PpoTrainer {
    pub cfg: PpoConfig,
    actor_opt: AdamW,
    value_opt: AdamW,
    rng: ChaCha8Rng,
}

impl PpoTrainer {
    pub fn new(cfg: PpoConfig, policy: &PolicyModel, value: &ValueModel) -> Result<Self, RlError> {
        if cfg.tasks_per_iter == 0 || cfg.minibatch == 0 {
            return Err(RlError::BadHyper("tasks_per_iter and minibatch must be positive".into()));
        }
        Ok(Self {
            actor_opt: AdamW::new(policy.mlp.num_params(), cfg.actor_lr, 0.0),
            value_opt: AdamW::new(value.mlp.num_params(), cfg.value_lr, 0.0),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7070_6f),
            cfg,
        })
    }

    /// PPO-clip and value updates on one collected batch; returns mean
    /// (policy loss, value loss) over minibatches.
    pub fn update(&mut self, policy: &mut PolicyModel, value: &mut ValueModel, samples: &[PpoSample]) -> Result<(f64, f64), RlError> {
        if samples.is_empty() {
            return Err(RlError::EmptyBatch);
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let (mut pl, mut vl, mut count) = (0.0, 0.0, 0usize);
        for _ in 0..self.cfg.update_epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.minibatch) {
                let mb: Vec<PpoSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                let (p_loss, p_grad) = policy_loss_and_grad(policy, &mb, self.cfg.clip_epsilon)?;
                let (v_loss, v_grad) = value_loss_and_grad(value, &mb)?;
                if !p_loss.is_finite() || !v_loss.is_finite() {
                    return Err(RlError::NonFinite("loss".into()));
                }
                self.actor_opt.step(policy.mlp.params_mut(), &p_grad)?;
                self.value_opt.step(value.mlp.params_mut(), &v_grad)?;
                pl += p_loss;
                vl += v_loss;
                count += 1;
            }
        }
        Ok((pl / count as f64, vl / count as f64))
    }

    /// One full iteration: sample tasks, roll out, reward, update.
    pub fn iteration(
        &mut self,
        iteration: usize,
        policy: &mut PolicyModel,
        value: &mut ValueModel,
        scorer: Option<&dyn StepScorer>,
        backend: &dyn RolloutBackend,
        tasks: &[TaskSpec],
    ) -> Result<IterMetrics, RlError> {
        let jobs: Vec<(TaskSpec, u64)> = (0..self.cfg.tasks_per_iter)
            .map(|k| (tasks[self.rng.gen_range(0..tasks.len())].clone(), train_seed(self.cfg.seed, iteration, k)))
            .collect();
        let trajs = backend.rollouts(policy, &jobs, self.cfg.obstacle_prob)?;
        let rewards: Vec<Vec<f64>> = trajs
            .iter()
            .map(|t| trajectory_rewards(t, self.cfg.reward, scorer, self.cfg.hard_prm_reward, &self.cfg.weights))
            .collect::<Result<_, _>>()?;
        let samples = build_samples(&trajs, &rewards, value, self.cfg.gamma, self.cfg.lambda)?;
        let success_rate = trajs.iter().filter(|t| t.success).count() as f64 / trajs.len() as f64;
        let mean_reward = if samples.is_empty() {
            0.0
        } else {
            samples.iter().map(|s| s.reward).sum::<f64>() / samples.len() as f64
        };
        let (policy_loss, value_loss) = if samples.is_empty() { (0.0, 0.0) } else { self.update(policy, value, &samples)? };
        Ok(IterMetrics { iteration, success_rate, mean_reward, policy_loss, value_loss })
    }
}

/// Runs `cfg.iters` PPO iterations in place and returns per-iteration metrics.
pub fn train_ppo(
    policy: &mut PolicyModel,
    value: &mut ValueModel,
    scorer: Option<&dyn StepScorer>,
    backend: &dyn RolloutBackend,
    tasks: &[TaskSpec],
    cfg: &PpoConfig,
) -> Result<Vec<IterMetrics>, RlError> {
    if tasks.is_empty() {
        return Err(RlError::BadHyper("empty task list".into()));
    }
    if cfg.reward == RewardMode::Prm && scorer.is_none() {
        return Err(RlError::Scorer("PRM reward mode needs a scorer".into()));
    }
    let mut trainer = PpoTrainer::new(cfg.clone(), policy, value)?;
    (0..cfg.iters)
        .map(|i| trainer.iteration(i, policy, value, scorer, backend, tasks))
        .collect()
}

pub fn write_metrics_csv<W: std::io::Write>(mut out: W, rows: &[IterMetrics]) -> std::io::Result<()> {
    writeln!(out, "{}", METRICS_HEADER.join(","))?;
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.iteration, r.success_rate, r.mean_reward, r.policy_loss, r.value_loss
        )?;
    }
    out.flush()
}
