//! Step-level process reward model: features, a two-class MLP head trained
//! with cross-entropy, scores, accuracy, and a scoring service.

mod features;
pub mod service;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use features::{featurize, goal_met, state_features, ACTION_OFFSET, FEATURE_DIM, FEATURIZER_VERSION, LABEL_VOCAB};

use crate::datagen::{Label, LabeledDataset, StepRecord};
use crate::neural::{cross_entropy_grad, softmax, Activation, AdamW, Checkpoint, Mlp, NeuralError};
use crate::stats::Proportion;
use crate::world::{Action, GuiState, TaskSpec};

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, thiserror::Error)]
pub enum PrmError {
    #[error("featurizer version mismatch: model uses {model}, this build uses {current}")]
    VersionMismatch { model: String, current: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Output 0 is the positive token, output 1 the negative one.
#[derive(Clone, Debug, PartialEq)]
pub struct PrmModel {
    pub featurizer: String,
    pub mlp: Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrmScore {
    pub logit_pos: f64,
    pub logit_neg: f64,
    pub p_pos: f64,
    pub label: Label,
}

impl PrmScore {
    pub fn from_logits(logit_pos: f64, logit_neg: f64) -> Self {
        let p = softmax(&[logit_pos, logit_neg]);
        let label = if logit_pos > logit_neg { Label::Positive } else { Label::Negative };
        Self { logit_pos, logit_neg, p_pos: p[0], label }
    }

    /// Scalar reward in [-1, 1]: `2 p_pos - 1`, or the hard label as +-1.
    pub fn reward(&self, hard: bool) -> f64 {
        if hard {
            if self.label.is_positive() {
                1.0
            } else {
                -1.0
            }
        } else {
            2.0 * self.p_pos - 1.0
        }
    }
}

impl PrmModel {
    /// Untrained model; its zero head scores every input at p_pos = 0.5.
    pub fn new(hidden: &[usize], seed: u64) -> Result<Self, PrmError> {
        let mut sizes = vec![FEATURE_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        Ok(Self { featurizer: FEATURIZER_VERSION.to_string(), mlp: Mlp::new(&sizes, Activation::Tanh, seed)? })
    }

    pub fn check_version(&self) -> Result<(), PrmError> {
        if self.featurizer != FEATURIZER_VERSION {
            return Err(PrmError::VersionMismatch { model: self.featurizer.clone(), current: FEATURIZER_VERSION.into() });
        }
        Ok(())
    }

    pub fn score_features(&self, x: &[f64]) -> Result<PrmScore, PrmError> {
        let out = self.mlp.forward(x)?;
        Ok(PrmScore::from_logits(out[0], out[1]))
    }

    pub fn score(&self, task: &TaskSpec, state: &GuiState, action: &Action) -> Result<PrmScore, PrmError> {
        self.check_version()?;
        self.score_features(&featurize(task, state, action))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.mlp.clone()).with_meta("featurizer", &self.featurizer).with_meta("kind", "prm")
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, PrmError> {
        let featurizer = ck.meta.get("featurizer").cloned().unwrap_or_default();
        let model = Self { featurizer, mlp: ck.mlp };
        model.check_version()?;
        if model.mlp.output_dim() != 2 || model.mlp.input_dim() != FEATURE_DIM {
            return Err(NeuralError::DimMismatch { expected: FEATURE_DIM, got: model.mlp.input_dim() }.into());
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), PrmError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, PrmError> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

/// Convenience wrapper for the per-step score.
pub fn prm_score(model: &PrmModel, task: &TaskSpec, state: &GuiState, action: &Action) -> Result<PrmScore, PrmError> {
    model.score(task, state, action)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrmTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for PrmTrainConfig {
    fn default() -> Self {
        Self { epochs: 2, lr: 1e-4, batch_size: 32, weight_decay: 0.0, hidden: DEFAULT_HIDDEN.to_vec(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Trains a fresh PRM on `dataset.label` with minibatch AdamW.
pub fn train_prm(dataset: &LabeledDataset, cfg: &PrmTrainConfig) -> Result<(PrmModel, Vec<EpochStats>), PrmError> {
    if dataset.is_empty() {
        return Err(PrmError::EmptyDataset);
    }
    let mut model = PrmModel::new(&cfg.hidden, cfg.seed)?;
    let data: Vec<(Vec<f64>, usize)> = dataset
        .records
        .iter()
        .map(|r| (featurize(&r.task, &r.state, &r.action), r.label.class()))
        .collect();
    let mut opt = AdamW::new(model.mlp.num_params(), cfg.lr, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7072_6d);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let bs = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(bs).enumerate() {
            let batch: Vec<(Vec<f64>, usize)> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, grads) = cross_entropy_grad(&model.mlp, &batch)?;
            if !loss.is_finite() {
                return Err(PrmError::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += loss * chunk.len() as f64;
            opt.step(model.mlp.params_mut(), &grads)?;
        }
        let correct = data
            .iter()
            .filter(|(x, y)| model.score_features(x).map(|s| s.label.class() == *y).unwrap_or(false))
            .count();
        curve.push(EpochStats {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok((model, curve))
}

/// Fraction of records whose predicted label equals the oracle label.
pub fn prm_accuracy(model: &PrmModel, heldout: &[StepRecord]) -> Result<Proportion, PrmError> {
    if heldout.is_empty() {
        return Err(PrmError::EmptyDataset);
    }
    let mut correct = 0u64;
    for r in heldout {
        if model.score(&r.task, &r.state, &r.action)?.label == r.oracle_label {
            correct += 1;
        }
    }
    Ok(Proportion::new(correct, heldout.len() as u64))
}
