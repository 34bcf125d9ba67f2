//! Candidate-set policy: a scalar scorer over featurized candidates, softmax
//! with temperature, plus behavior-cloning warm start.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{log_softmax, Activation, AdamW, Checkpoint, Mlp, NeuralError};
use crate::prm::{featurize, PrmError, FEATURE_DIM, FEATURIZER_VERSION};
use crate::rollout::{Decision, EnvError, Policy};
use crate::world::{Action, GuiState, TaskSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    pub featurizer: String,
    pub mlp: Mlp,
    pub temperature: f64,
}

pub fn candidate_features(task: &TaskSpec, state: &GuiState, candidates: &[Action]) -> Vec<Vec<f64>> {
    candidates.iter().map(|a| featurize(task, state, a)).collect()
}

/// Draws an index from log-probabilities with one uniform variate.
pub fn sample_index(logp: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}

impl PolicyModel {
    pub fn new(hidden: &[usize], temperature: f64, seed: u64) -> Result<Self, NeuralError> {
        let mut sizes = vec![FEATURE_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self { featurizer: FEATURIZER_VERSION.into(), mlp: Mlp::new(&sizes, Activation::Tanh, seed)?, temperature })
    }

    pub fn scores(&self, feats: &[Vec<f64>]) -> Vec<f64> {
        feats.iter().map(|x| self.mlp.forward(x).expect("feature dimension")[0]).collect()
    }

    pub fn log_probs_from_features(&self, feats: &[Vec<f64>]) -> Vec<f64> {
        let z: Vec<f64> = self.scores(feats).into_iter().map(|s| s / self.temperature).collect();
        log_softmax(&z)
    }

    pub fn log_probs(&self, task: &TaskSpec, state: &GuiState, candidates: &[Action]) -> Vec<f64> {
        self.log_probs_from_features(&candidate_features(task, state, candidates))
    }

    /// Adds `weight * d log pi(chosen) / d params` into `grads`; returns the
    /// log-probability of `chosen`.
    pub fn accumulate_logp_grad(&self, feats: &[Vec<f64>], chosen: usize, weight: f64, grads: &mut [f64]) -> f64 {
        self.accumulate_grad_to_targets(feats, &[chosen], weight, grads)
    }

    /// Adds `weight * d log(sum_{t in targets} pi(t)) / d params`; returns that
    /// log-mass. With one target this is the plain log-probability.
    pub fn accumulate_grad_to_targets(&self, feats: &[Vec<f64>], targets: &[usize], weight: f64, grads: &mut [f64]) -> f64 {
        let traces: Vec<_> = feats.iter().map(|x| self.mlp.trace(x).expect("feature dimension")).collect();
        let z: Vec<f64> = traces.iter().map(|t| t.output()[0] / self.temperature).collect();
        let logp = log_softmax(&z);
        let mass: f64 = targets.iter().map(|&t| logp[t].exp()).sum();
        for (j, trace) in traces.iter().enumerate() {
            let p = logp[j].exp();
            let q = if targets.contains(&j) { p / mass } else { 0.0 };
            let d = weight * (q - p) / self.temperature;
            if d != 0.0 {
                self.mlp.backward(trace, &[d], grads);
            }
        }
        mass.ln()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.mlp.clone())
            .with_meta("featurizer", &self.featurizer)
            .with_meta("kind", "policy")
            .with_meta("temperature", &format!("{:016x}", self.temperature.to_bits()))
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, PrmError> {
        let featurizer = ck.meta.get("featurizer").cloned().unwrap_or_default();
        if featurizer != FEATURIZER_VERSION {
            return Err(PrmError::VersionMismatch { model: featurizer, current: FEATURIZER_VERSION.into() });
        }
        let temperature = ck
            .meta
            .get("temperature")
            .and_then(|t| u64::from_str_radix(t, 16).ok())
            .map(f64::from_bits)
            .unwrap_or(1.0);
        Ok(Self { featurizer, mlp: ck.mlp, temperature })
    }

    pub fn save(&self, path: &Path) -> Result<(), PrmError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, PrmError> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

impl Policy for PolicyModel {
    fn decide(&self, task: &TaskSpec, state: &GuiState, candidates: &[Action], rng: &mut ChaCha8Rng) -> Result<Decision, EnvError> {
        let logp = self.log_probs(task, state, candidates);
        let index = sample_index(&logp, rng);
        Ok(Decision { index, logp: logp[index], audit: None })
    }
}

/// Deterministic argmax view of a policy, used for offline evaluation.
pub struct GreedyPolicy<'a>(pub &'a PolicyModel);

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl Policy for GreedyPolicy<'_> {
    fn decide(&self, task: &TaskSpec, state: &GuiState, candidates: &[Action], _: &mut ChaCha8Rng) -> Result<Decision, EnvError> {
        let logp = self.0.log_probs(task, state, candidates);
        let index = argmax(&logp);
        Ok(Decision { index, logp: logp[index], audit: None })
    }
}

/// One imitation example: candidate features and the indices of acceptable
/// (oracle-optimal) candidates.
#[derive(Clone, Debug)]
pub struct CloneExample {
    pub feats: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloneConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Maximizes the log-mass the policy puts on acceptable candidates; returns
/// the mean loss of the last batch.
pub fn behavior_clone(policy: &mut PolicyModel, examples: &[CloneExample], cfg: &CloneConfig) -> Result<f64, NeuralError> {
    if examples.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let mut opt = AdamW::new(policy.mlp.num_params(), cfg.lr, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut last = 0.0;
    for _ in 0..cfg.steps {
        let mut grads = policy.mlp.zero_grads();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let ex = &examples[order[cursor]];
            cursor += 1;
            // gradient ascent on log-mass == descent on its negation
            loss -= policy.accumulate_grad_to_targets(&ex.feats, &ex.targets, -1.0 / cfg.batch_size as f64, &mut grads);
        }
        last = loss / cfg.batch_size as f64;
        opt.step(policy.mlp.params_mut(), &grads)?;
    }
    Ok(last)
}
