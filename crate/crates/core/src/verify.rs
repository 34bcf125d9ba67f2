//! Best-of-n action verification: sample candidates from the policy, score
//! them, execute the best one.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::policy::{sample_index, PolicyModel};
use crate::ppo::StepScorer;
use crate::rollout::{run_episode, Decision, Env, EnvError, Policy, RolloutBackend, ScoredCandidate, Trajectory};
use crate::stats::Proportion;
use crate::world::{Action, GuiState, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyMode {
    /// Highest positive-class logit from the PRM.
    Prm,
    /// Highest policy log-probability.
    #[serde(rename = "self")]
    SelfScore,
    /// First sample.
    None,
}

impl VerifyMode {
    pub fn name(self) -> &'static str {
        match self {
            VerifyMode::Prm => "prm",
            VerifyMode::SelfScore => "self",
            VerifyMode::None => "none",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "prm" => Some(VerifyMode::Prm),
            "self" => Some(VerifyMode::SelfScore),
            "none" => Some(VerifyMode::None),
            _ => None,
        }
    }
}

pub const DEFAULT_N_ONLINE: usize = 3;
pub const DEFAULT_N_OFFLINE: usize = 5;
pub const SWEEP_N: [usize; 5] = [1, 3, 5, 8, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub n: usize,
    pub mode: VerifyMode,
    pub dedupe: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self { n: DEFAULT_N_ONLINE, mode: VerifyMode::Prm, dedupe: true }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VerifyError {
    #[error("candidate count must be at least 1")]
    ZeroCandidates,
    #[error("empty candidate set")]
    EmptySet,
    #[error("mode {0} needs a scorer")]
    MissingScorer(&'static str),
    #[error("non-finite score for candidate {0}")]
    NonFiniteScore(usize),
    #[error("scorer: {0}")]
    Scorer(String),
}

impl From<VerifyError> for EnvError {
    fn from(e: VerifyError) -> Self {
        EnvError::Policy(e.to_string())
    }
}

/// Sampled candidates: index into the enumerated action list and its policy
/// log-probability, in draw order.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub indices: Vec<usize>,
    pub logps: Vec<f64>,
    pub scores: Vec<f64>,
}

/// `n` independent draws from the policy softmax. With `dedupe`, later
/// repeats are dropped so the set keeps first-draw order.
pub fn sample_candidates(logp: &[f64], n: usize, rng: &mut ChaCha8Rng, dedupe: bool) -> Result<CandidateSet, VerifyError> {
    if n == 0 {
        return Err(VerifyError::ZeroCandidates);
    }
    if logp.is_empty() {
        return Err(VerifyError::EmptySet);
    }
    let mut indices = Vec::with_capacity(n);
    for _ in 0..n {
        let i = sample_index(logp, rng);
        if !(dedupe && indices.contains(&i)) {
            indices.push(i);
        }
    }
    let logps = indices.iter().map(|&i| logp[i]).collect();
    Ok(CandidateSet { indices, logps, scores: Vec::new() })
}

/// Position (within the set) of the selected candidate; ties go to the lowest
/// position.
pub fn select(scores: &[f64]) -> Result<usize, VerifyError> {
    if scores.is_empty() {
        return Err(VerifyError::EmptySet);
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(VerifyError::NonFiniteScore(i));
        }
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Fills `set.scores` according to `mode`.
pub fn score_candidates(
    set: &mut CandidateSet,
    mode: VerifyMode,
    scorer: Option<&dyn StepScorer>,
    task: &TaskSpec,
    state: &GuiState,
    actions: &[Action],
) -> Result<(), VerifyError> {
    set.scores = match mode {
        VerifyMode::Prm => {
            let scorer = scorer.ok_or(VerifyError::MissingScorer("prm"))?;
            set.indices
                .iter()
                .map(|&i| scorer.score_step(task, state, &actions[i]).map(|s| s.logit_pos).map_err(|e| VerifyError::Scorer(e.to_string())))
                .collect::<Result<_, _>>()?
        }
        VerifyMode::SelfScore => set.logps.clone(),
        VerifyMode::None => vec![0.0; set.indices.len()],
    };
    Ok(())
}

/// A policy wrapped with best-of-n selection. Decisions carry the full scored
/// candidate set as audit.
pub struct VerifiedPolicy<'a> {
    pub policy: &'a PolicyModel,
    pub scorer: Option<&'a dyn StepScorer>,
    pub config: VerifierConfig,
}

impl<'a> VerifiedPolicy<'a> {
    pub fn new(policy: &'a PolicyModel, scorer: Option<&'a dyn StepScorer>, config: VerifierConfig) -> Result<Self, VerifyError> {
        if config.n == 0 {
            return Err(VerifyError::ZeroCandidates);
        }
        if config.mode == VerifyMode::Prm && scorer.is_none() {
            return Err(VerifyError::MissingScorer("prm"));
        }
        Ok(Self { policy, scorer, config })
    }
}

impl Policy for VerifiedPolicy<'_> {
    fn decide(&self, task: &TaskSpec, state: &GuiState, candidates: &[Action], rng: &mut ChaCha8Rng) -> Result<Decision, EnvError> {
        let logp = self.policy.log_probs(task, state, candidates);
        let mut set = sample_candidates(&logp, self.config.n, rng, self.config.dedupe)?;
        score_candidates(&mut set, self.config.mode, self.scorer, task, state, candidates)?;
        let pick = select(&set.scores)?;
        let audit = set
            .indices
            .iter()
            .zip(&set.logps)
            .zip(&set.scores)
            .map(|((&i, &lp), &sc)| ScoredCandidate { action: candidates[i].clone(), logp: lp, score: sc })
            .collect();
        let index = set.indices[pick];
        Ok(Decision { index, logp: logp[index], audit: Some(audit) })
    }
}

/// One verified episode on `env`.
pub fn run_verified_episode(
    env: &mut dyn Env,
    policy: &PolicyModel,
    scorer: Option<&dyn StepScorer>,
    config: &VerifierConfig,
    task: &TaskSpec,
    seed: u64,
    obstacle_prob: f64,
) -> Result<Trajectory, EnvError> {
    let vp = VerifiedPolicy::new(policy, scorer, config.clone())?;
    run_episode(env, task, seed, obstacle_prob, &vp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub success: Proportion,
    pub ms_per_step: f64,
    pub steps: usize,
}

/// Runs the same jobs once per `n`, reporting success rate and wall time per
/// step.
pub fn sweep_n(
    backend: &dyn RolloutBackend,
    policy: &PolicyModel,
    scorer: Option<&dyn StepScorer>,
    mode: VerifyMode,
    jobs: &[(TaskSpec, u64)],
    obstacle_prob: f64,
    n_values: &[usize],
) -> Result<Vec<SweepRow>, EnvError> {
    if n_values.is_empty() {
        return Err(EnvError::Policy("empty n sweep".into()));
    }
    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let vp = VerifiedPolicy::new(policy, scorer, VerifierConfig { n, mode, dedupe: true })?;
        let start = Instant::now();
        let trajs = backend.rollouts(&vp, jobs, obstacle_prob)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        let steps: usize = trajs.iter().map(|t| t.steps.len()).sum();
        let wins = trajs.iter().filter(|t| t.success).count() as u64;
        rows.push(SweepRow {
            n,
            success: Proportion::new(wins, trajs.len() as u64),
            ms_per_step: if steps == 0 { 0.0 } else { elapsed / steps as f64 },
            steps,
        });
    }
    Ok(rows)
}
