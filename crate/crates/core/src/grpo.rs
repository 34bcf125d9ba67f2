//! Group-relative policy optimization: trajectory groups with an outcome
//! reward, and single-state groups with the oracle or PRM reward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neural::AdamW;
use crate::offline::{eval_offline, OfflineExample, OfflineReport};
use crate::policy::{candidate_features, sample_index, GreedyPolicy, PolicyModel};
use crate::ppo::{train_seed, RlError, StepScorer};
use crate::rollout::RolloutBackend;
use crate::world::{Action, ActionKind, GuiState, TaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoHyper {
    pub beta: f64,
    pub group_size: usize,
    pub lr: f64,
    pub std_epsilon: f64,
    /// Offline mode: states per batch (batch = states * group_size).
    pub states_per_batch: usize,
}

impl Default for GrpoHyper {
    fn default() -> Self {
        Self { beta: 0.01, group_size: 8, lr: 3e-4, std_epsilon: 1e-8, states_per_batch: 4 }
    }
}

impl GrpoHyper {
    fn check(&self) -> Result<(), RlError> {
        if self.group_size < 2 {
            return Err(RlError::BadHyper(format!("group size {} < 2", self.group_size)));
        }
        if !(self.beta >= 0.0) || !(self.lr > 0.0) {
            return Err(RlError::BadHyper("beta must be >= 0 and lr > 0".into()));
        }
        Ok(())
    }
}

/// `(r - mean) / max(std, eps)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], std_epsilon: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    // the rounded mean of equal values can differ from them
    if rewards.iter().all(|r| *r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt().max(std_epsilon);
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// Kind match, plus text match for `Type` after whitespace normalization.
pub fn oracle_reward(predicted: &Action, ground_truth: &Action) -> f64 {
    if predicted.kind != ground_truth.kind {
        return 0.0;
    }
    let mut r = 1.0;
    if ground_truth.kind == ActionKind::Type {
        let norm = |s: &Option<String>| s.as_deref().map(|t| t.split_whitespace().collect::<Vec<_>>().join(" "));
        if norm(&predicted.content) == norm(&ground_truth.content) {
            r += 1.0;
        }
    }
    r
}

/// 1 when the PRM accepts the step, else 0.
pub fn prm_reward(scorer: &dyn StepScorer, task: &TaskSpec, state: &GuiState, predicted: &Action) -> Result<f64, RlError> {
    Ok(if scorer.score_step(task, state, predicted)?.label.is_positive() { 1.0 } else { 0.0 })
}

/// Per-sample KL estimate `exp(ref - new) - (ref - new) - 1`.
pub fn kl_estimate(logp_new: f64, logp_ref: f64) -> f64 {
    let x = logp_ref - logp_new;
    x.exp() - x - 1.0
}

/// `-mean(logp_new * adv) + beta * mean(kl)` and its gradient w.r.t. `logp_new`.
pub fn grpo_loss(logp_new: &[f64], logp_ref: &[f64], advantages: &[f64], beta: f64) -> Result<(f64, Vec<f64>), RlError> {
    if logp_new.len() != logp_ref.len() || logp_new.len() != advantages.len() {
        return Err(RlError::LengthMismatch("logp_new, logp_ref and advantages must align".into()));
    }
    if logp_new.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let n = logp_new.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logp_new.len());
    for ((&new, &rf), &a) in logp_new.iter().zip(logp_ref).zip(advantages) {
        if !(new.is_finite() && rf.is_finite() && a.is_finite()) {
            return Err(RlError::NonFinite("grpo inputs".into()));
        }
        loss += -new * a + beta * kl_estimate(new, rf);
        grad.push((-a + beta * (1.0 - (rf - new).exp())) / n);
    }
    Ok((loss / n, grad))
}

/// One scored completion; `feats` are the candidate features of its context.
#[derive(Clone, Debug)]
pub struct GroupSample {
    pub feats: Vec<Vec<f64>>,
    pub chosen: usize,
    pub logp_ref: f64,
    pub advantage: f64,
}

/// Loss over samples and its gradient w.r.t. policy params; also returns the
/// mean KL estimate.
pub fn grpo_loss_and_grad(policy: &PolicyModel, samples: &[GroupSample], beta: f64) -> Result<(f64, f64, Vec<f64>), RlError> {
    let logp_new: Vec<f64> = samples.iter().map(|s| policy.log_probs_from_features(&s.feats)[s.chosen]).collect();
    let logp_ref: Vec<f64> = samples.iter().map(|s| s.logp_ref).collect();
    let adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
    let (loss, d) = grpo_loss(&logp_new, &logp_ref, &adv, beta)?;
    let kl = logp_new.iter().zip(&logp_ref).map(|(n, r)| kl_estimate(*n, *r)).sum::<f64>() / samples.len() as f64;
    let mut grads = policy.mlp.zero_grads();
    for (s, w) in samples.iter().zip(&d) {
        if *w != 0.0 {
            policy.accumulate_logp_grad(&s.feats, s.chosen, *w, &mut grads);
        }
    }
    Ok((loss, kl, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrpoMetrics {
    pub iteration: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub loss: f64,
    pub kl: f64,
    pub type_match: Option<f64>,
    pub exact_match: Option<f64>,
}

pub const GRPO_METRICS_HEADER: [&str; 7] = ["iteration", "success_rate", "mean_reward", "loss", "kl", "type_match", "exact_match"];

pub fn write_grpo_csv<W: std::io::Write>(mut out: W, rows: &[GrpoMetrics]) -> std::io::Result<()> {
    writeln!(out, "{}", GRPO_METRICS_HEADER.join(","))?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.iteration,
            r.success_rate,
            r.mean_reward,
            r.loss,
            r.kl,
            opt(r.type_match),
            opt(r.exact_match)
        )?;
    }
    out.flush()
}

/// Online trajectory groups: one task per iteration, `group_size` episodes on
/// distinct seeds, terminal reward 1/0, the trajectory's advantage on each of
/// its steps. `reference` is the frozen starting policy.
pub fn train_grpo_trajectory(
    policy: &mut PolicyModel,
    reference: &PolicyModel,
    backend: &dyn RolloutBackend,
    tasks: &[TaskSpec],
    hyper: &GrpoHyper,
    iters: usize,
    obstacle_prob: f64,
    seed: u64,
) -> Result<Vec<GrpoMetrics>, RlError> {
    hyper.check()?;
    if tasks.is_empty() {
        return Err(RlError::BadHyper("empty task list".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_706f);
    let mut opt = AdamW::new(policy.mlp.num_params(), hyper.lr, 0.0);
    let mut out = Vec::with_capacity(iters);
    for it in 0..iters {
        let task = tasks[rng.gen_range(0..tasks.len())].clone();
        let jobs: Vec<(TaskSpec, u64)> = (0..hyper.group_size).map(|k| (task.clone(), train_seed(seed, it, k))).collect();
        let trajs = backend.rollouts(policy, &jobs, obstacle_prob)?;
        let rewards: Vec<f64> = trajs.iter().map(|t| if t.success { 1.0 } else { 0.0 }).collect();
        let adv = group_advantages(&rewards, hyper.std_epsilon);
        let mut samples = Vec::new();
        for (t, a) in trajs.iter().zip(&adv) {
            for st in &t.steps {
                let feats = candidate_features(&t.task, &st.state, &st.candidates);
                let logp_ref = reference.log_probs_from_features(&feats)[st.chosen];
                samples.push(GroupSample { feats, chosen: st.chosen, logp_ref, advantage: *a });
            }
        }
        let (loss, kl) = if samples.is_empty() {
            (0.0, 0.0)
        } else {
            let (loss, kl, grads) = grpo_loss_and_grad(policy, &samples, hyper.beta)?;
            opt.step(policy.mlp.params_mut(), &grads)?;
            (loss, kl)
        };
        out.push(GrpoMetrics {
            iteration: it,
            success_rate: rewards.iter().sum::<f64>() / rewards.len() as f64,
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            loss,
            kl,
            type_match: None,
            exact_match: None,
        });
    }
    Ok(out)
}

pub enum OfflineReward<'a> {
    Oracle,
    Prm(&'a dyn StepScorer),
}

/// Offline single-state groups. Each step draws `states_per_batch` examples,
/// samples `group_size` actions per state from the current policy, scores and
/// normalizes them per state, then takes one optimizer step. TM/EM on
/// `validation` (greedy decoding) every `eval_every` steps and at the end.
pub fn train_grpo_offline(
    policy: &mut PolicyModel,
    reference: &PolicyModel,
    train: &[OfflineExample],
    validation: &[OfflineExample],
    reward: &OfflineReward,
    hyper: &GrpoHyper,
    steps: usize,
    eval_every: usize,
    seed: u64,
) -> Result<Vec<GrpoMetrics>, RlError> {
    hyper.check()?;
    if train.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f66_666c);
    let mut opt = AdamW::new(policy.mlp.num_params(), hyper.lr, 0.0);
    let eval = |p: &PolicyModel| -> Result<Option<OfflineReport>, RlError> {
        if validation.is_empty() {
            return Ok(None);
        }
        Ok(Some(eval_offline(&GreedyPolicy(p), validation, seed)?))
    };
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut samples = Vec::with_capacity(hyper.states_per_batch * hyper.group_size);
        let mut reward_sum = 0.0;
        for _ in 0..hyper.states_per_batch {
            let ex = &train[rng.gen_range(0..train.len())];
            let feats = candidate_features(&ex.task, &ex.state, &ex.candidates);
            let logp = policy.log_probs_from_features(&feats);
            let logp_ref = reference.log_probs_from_features(&feats);
            let picks: Vec<usize> = (0..hyper.group_size).map(|_| sample_index(&logp, &mut rng)).collect();
            let rewards: Vec<f64> = picks
                .iter()
                .map(|&i| match reward {
                    OfflineReward::Oracle => Ok(oracle_reward(&ex.candidates[i], &ex.ground_truth)),
                    OfflineReward::Prm(s) => prm_reward(*s, &ex.task, &ex.state, &ex.candidates[i]),
                })
                .collect::<Result<_, _>>()?;
            reward_sum += rewards.iter().sum::<f64>();
            for (&i, a) in picks.iter().zip(group_advantages(&rewards, hyper.std_epsilon)) {
                samples.push(GroupSample { feats: feats.clone(), chosen: i, logp_ref: logp_ref[i], advantage: a });
            }
        }
        let (loss, kl, grads) = grpo_loss_and_grad(policy, &samples, hyper.beta)?;
        opt.step(policy.mlp.params_mut(), &grads)?;
        let last = step + 1 == steps;
        let report = if last || (eval_every > 0 && (step + 1) % eval_every == 0) { eval(policy)? } else { None };
        out.push(GrpoMetrics {
            iteration: step,
            success_rate: 0.0,
            mean_reward: reward_sum / samples.len() as f64,
            loss,
            kl,
            type_match: report.as_ref().map(|r| r.type_match.value),
            exact_match: report.as_ref().map(|r| r.exact_match.value),
        });
    }
    Ok(out)
}
