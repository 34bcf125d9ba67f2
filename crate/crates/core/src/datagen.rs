//! Step-labeled data: trajectory and single-step pipelines, the oracle
//! annotator, calibrated noisy annotators, balancing, splitting, and JSONL IO.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rollout::{step_rng, EnvError, LocalEnv, Policy, RolloutBackend, Env};
use crate::world::{Action, ActionKind, DistanceOracle, Fixture, GuiState, Reachability, TaskSpec};

pub const SCHEMA_NAME: &str = "prmgui.steps";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn flip(self) -> Self {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    /// Class index used by the two-output PRM head.
    pub fn class(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    TrajectoryPipeline,
    SingleStepPipeline,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Annotator {
    Oracle,
    Noisy { accuracy: f64 },
}

/// Named annotator accuracies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotatorPreset {
    Oracle,
    Gpt4oBase,
    Gpt4oImproved,
    Human,
}

impl AnnotatorPreset {
    pub const NOISY: [AnnotatorPreset; 3] =
        [AnnotatorPreset::Gpt4oBase, AnnotatorPreset::Gpt4oImproved, AnnotatorPreset::Human];

    pub fn name(self) -> &'static str {
        match self {
            AnnotatorPreset::Oracle => "oracle",
            AnnotatorPreset::Gpt4oBase => "gpt4o-base",
            AnnotatorPreset::Gpt4oImproved => "gpt4o-improved",
            AnnotatorPreset::Human => "human",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Self::Oracle, Self::Gpt4oBase, Self::Gpt4oImproved, Self::Human]
            .into_iter()
            .find(|p| p.name() == s)
    }

    pub fn accuracy(self) -> f64 {
        match self {
            AnnotatorPreset::Oracle => 1.0,
            AnnotatorPreset::Gpt4oBase => 0.86,
            AnnotatorPreset::Gpt4oImproved => 0.92,
            AnnotatorPreset::Human => 0.98,
        }
    }
}

/// One (instruction, state, action, label) quadruplet with provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub instruction: String,
    pub task: TaskSpec,
    /// World seed of the episode the state came from.
    pub seed: u64,
    pub step_index: u32,
    pub state: GuiState,
    pub action: Action,
    pub label: Label,
    /// Ground truth kept alongside a possibly noisy `label`.
    pub oracle_label: Label,
    pub source: Source,
    pub annotator: Annotator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub records: Vec<StepRecord>,
    pub pos_count: usize,
    pub neg_count: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(records: Vec<StepRecord>, split: Split) -> Self {
        let pos_count = records.iter().filter(|r| r.label.is_positive()).count();
        let neg_count = records.len() - pos_count;
        Self { records, pos_count, neg_count, split }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("annotation undefined: state is unreachable from success (budget exhausted: {budget_exhausted})")]
    Unreachable { budget_exhausted: bool },
    #[error("annotator accuracy {0} outside [0.5, 1]")]
    BadAccuracy(f64),
    #[error("cannot balance: only {0:?} labels present")]
    SingleClass(Label),
    #[error("cannot balance an empty record set")]
    Empty,
    #[error("heldout fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("task bank is empty")]
    EmptyTaskBank,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("dataset file: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Ground-truth step label from BFS distances.
///
/// Under a dialog only the correct dismissal is positive. Otherwise an action
/// is positive iff it moves strictly closer to success, or it is `Finished`
/// in a successful state. An action from a reachable state into a state from
/// which success is provably unreachable counts as negative.
pub fn annotate_oracle(oracle: &mut DistanceOracle, state: &GuiState, action: &Action) -> Result<Label, DataError> {
    let core = state.core();
    let fixture = oracle.fixture().clone();
    let (reach, next) = oracle.optimal_next(&core);
    let d = match reach {
        Reachability::Steps(d) => d,
        Reachability::Unreachable { budget_exhausted } => return Err(DataError::Unreachable { budget_exhausted }),
    };
    if state.obstacle.is_some() {
        let dismiss = action.kind == ActionKind::Click
            && action.point.is_some_and(|p| state.hit_test(p).is_some_and(|w| w.id == "dialog.dismiss"));
        return Ok(if dismiss { Label::Positive } else { Label::Negative });
    }
    if action.kind == ActionKind::Finished {
        return Ok(if d == 0 { Label::Positive } else { Label::Negative });
    }
    let after = crate::world::apply(&fixture, &core, action);
    Ok(if d > 0 && next.contains(&after) { Label::Positive } else { Label::Negative })
}

/// Per-task oracle cache shared across a pipeline run.
pub struct OracleBank {
    fixture: Arc<Fixture>,
    oracles: HashMap<String, DistanceOracle>,
}

impl OracleBank {
    pub fn new(fixture: Arc<Fixture>) -> Self {
        Self { fixture, oracles: HashMap::new() }
    }

    pub fn annotate(&mut self, task: &TaskSpec, state: &GuiState, action: &Action) -> Result<Label, DataError> {
        let fixture = self.fixture.clone();
        let oracle = self
            .oracles
            .entry(task.task_id.clone())
            .or_insert_with(|| DistanceOracle::new(fixture, task.clone()));
        annotate_oracle(oracle, state, action)
    }
}

/// Records plus the number of steps the oracle could not label.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineOutput {
    pub records: Vec<StepRecord>,
    pub skipped: usize,
}

/// Labels every step of full rollouts. Trajectory `i` runs `tasks[i % len]`
/// with world seed `seed_base + i`.
pub fn rollout_pipeline(
    backend: &dyn RolloutBackend,
    oracles: &mut OracleBank,
    policy: &dyn Policy,
    tasks: &[TaskSpec],
    n_trajectories: usize,
    seed_base: u64,
    obstacle_prob: f64,
) -> Result<PipelineOutput, DataError> {
    if n_trajectories == 0 {
        return Ok(PipelineOutput::default());
    }
    if tasks.is_empty() {
        return Err(DataError::EmptyTaskBank);
    }
    let jobs: Vec<(TaskSpec, u64)> =
        (0..n_trajectories).map(|i| (tasks[i % tasks.len()].clone(), seed_base + i as u64)).collect();
    let trajs = backend.rollouts(policy, &jobs, obstacle_prob)?;
    let mut out = PipelineOutput::default();
    for t in trajs {
        for (i, step) in t.steps.iter().enumerate() {
            match oracles.annotate(&t.task, &step.state, &step.action) {
                Ok(label) => out.records.push(StepRecord {
                    instruction: t.task.instruction.clone(),
                    task: t.task.clone(),
                    seed: t.seed,
                    step_index: i as u32,
                    state: step.state.clone(),
                    action: step.action.clone(),
                    label,
                    oracle_label: label,
                    source: Source::TrajectoryPipeline,
                    annotator: Annotator::Oracle,
                }),
                Err(DataError::Unreachable { .. }) => out.skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Samples states by uniform random-walk prefixes of random length, then labels
/// one policy action per state. Tasks are drawn uniformly from `task_bank`.
pub fn single_step_pipeline(
    fixture: Arc<Fixture>,
    oracles: &mut OracleBank,
    task_bank: &[TaskSpec],
    policy: &dyn Policy,
    n_samples: usize,
    seed: u64,
    obstacle_prob: f64,
) -> Result<PipelineOutput, DataError> {
    if n_samples == 0 {
        return Ok(PipelineOutput::default());
    }
    if task_bank.is_empty() {
        return Err(DataError::EmptyTaskBank);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = LocalEnv::new(fixture);
    let mut out = PipelineOutput::default();
    for _ in 0..n_samples {
        let task = &task_bank[rng.gen_range(0..task_bank.len())];
        let world_seed = rng.gen_range(0..crate::ppo::TRAIN_SEED_LIMIT);
        let prefix = rng.gen_range(0..task.max_steps);
        let mut state = env.reset(task, world_seed, obstacle_prob)?;
        for _ in 0..prefix {
            let moves: Vec<Action> =
                env.enumerate_actions()?.into_iter().filter(|a| a.kind != ActionKind::Finished).collect();
            let a = &moves[rng.gen_range(0..moves.len())];
            state = env.step(a)?.state;
        }
        let candidates = env.enumerate_actions()?;
        let mut prng = step_rng(world_seed, state.step_count);
        let d = policy.decide(task, &state, &candidates, &mut prng)?;
        let action = candidates[d.index].clone();
        match oracles.annotate(task, &state, &action) {
            Ok(label) => out.records.push(StepRecord {
                instruction: task.instruction.clone(),
                task: task.clone(),
                seed: world_seed,
                step_index: state.step_count,
                state,
                action,
                label,
                oracle_label: label,
                source: Source::SingleStepPipeline,
                annotator: Annotator::Oracle,
            }),
            Err(DataError::Unreachable { .. }) => out.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Keeps `label` with probability `accuracy`, flips it otherwise.
pub fn annotate_noisy(label: Label, accuracy: f64, rng: &mut impl Rng) -> Result<Label, DataError> {
    if !(0.5..=1.0).contains(&accuracy) {
        return Err(DataError::BadAccuracy(accuracy));
    }
    Ok(if rng.gen::<f64>() < accuracy { label } else { label.flip() })
}

/// Relabels records from their oracle labels with a noisy annotator.
pub fn apply_annotator(records: &[StepRecord], accuracy: f64, seed: u64) -> Result<Vec<StepRecord>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records
        .iter()
        .map(|r| {
            let label = annotate_noisy(r.oracle_label, accuracy, &mut rng)?;
            let annotator = if accuracy >= 1.0 { Annotator::Oracle } else { Annotator::Noisy { accuracy } };
            Ok(StepRecord { label, annotator, ..r.clone() })
        })
        .collect()
}

/// Down-samples the majority class to `ratio` positives per negative,
/// apportioning the kept majority records across sources in proportion.
fn balance(records: Vec<StepRecord>, ratio: f64, by_oracle: bool, rng: &mut ChaCha8Rng) -> Result<Vec<StepRecord>, DataError> {
    let label_of = |r: &StepRecord| if by_oracle { r.oracle_label } else { r.label };
    let (pos, neg): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| label_of(r).is_positive());
    match (pos.is_empty(), neg.is_empty()) {
        (true, true) => return Err(DataError::Empty),
        (true, false) => return Err(DataError::SingleClass(Label::Negative)),
        (false, true) => return Err(DataError::SingleClass(Label::Positive)),
        _ => {}
    }
    let want_pos = ((neg.len() as f64 * ratio).round() as usize).min(pos.len());
    let want_neg = ((pos.len() as f64 / ratio).round() as usize).min(neg.len());
    let (keep_all, majority, target) = if want_pos < pos.len() { (neg, pos, want_pos) } else { (pos, neg, want_neg) };
    let mut by_source: BTreeMap<Source, Vec<StepRecord>> = BTreeMap::new();
    for r in majority {
        by_source.entry(r.source).or_default().push(r);
    }
    let total: usize = by_source.values().map(Vec::len).sum();
    // largest-remainder apportionment of `target` across sources
    let mut quotas: Vec<(Source, usize, f64)> = by_source
        .iter()
        .map(|(s, v)| {
            let exact = target as f64 * v.len() as f64 / total as f64;
            (*s, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut left = target - quotas.iter().map(|q| q.1).sum::<usize>();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|a, b| quotas[*b].2.total_cmp(&quotas[*a].2).then(a.cmp(b)));
    for i in order {
        if left == 0 {
            break;
        }
        quotas[i].1 += 1;
        left -= 1;
    }
    let mut out = keep_all;
    for (source, quota, _) in quotas {
        let mut pool = by_source.remove(&source).unwrap_or_default();
        pool.shuffle(rng);
        pool.truncate(quota);
        out.extend(pool);
    }
    out.sort_by(|a, b| (a.task.task_id.as_str(), a.seed, a.step_index).cmp(&(b.task.task_id.as_str(), b.seed, b.step_index)));
    Ok(out)
}

/// Balances on `label` without splitting.
pub fn balance_records(records: Vec<StepRecord>, ratio: f64, seed: u64) -> Result<Vec<StepRecord>, DataError> {
    balance(records, ratio, false, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Splits by (task_id, seed) group, then balances each side. The training side
/// is balanced on `label`; the held-out side on the oracle labels it is scored
/// against.
pub fn balance_and_split(
    records: Vec<StepRecord>,
    ratio: f64,
    heldout_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
        return Err(DataError::BadFraction(heldout_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: BTreeSet<(String, u64)> = records.iter().map(|r| (r.task.task_id.clone(), r.seed)).collect();
    let mut groups: Vec<_> = groups.into_iter().collect();
    groups.shuffle(&mut rng);
    let n_held = ((groups.len() as f64 * heldout_fraction).round() as usize).clamp(1, groups.len().saturating_sub(1).max(1));
    let held: BTreeSet<(String, u64)> = groups.into_iter().take(n_held).collect();
    let (h, t): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| held.contains(&(r.task.task_id.clone(), r.seed)));
    let train = balance(t, ratio, false, &mut rng)?;
    let heldout = balance(h, ratio, true, &mut rng)?;
    Ok((LabeledDataset::new(train, Split::Train), LabeledDataset::new(heldout, Split::Heldout)))
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

pub fn write_jsonl(path: &Path, records: &[StepRecord]) -> Result<(), DataError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &Header { schema: SCHEMA_NAME.into(), version: SCHEMA_VERSION })
        .map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<StepRecord>, DataError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let first = lines.next().ok_or(DataError::Format { line: 1, message: "missing header".into() })??;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| DataError::Format { line: 1, message: e.to_string() })?;
    if header.schema != SCHEMA_NAME || header.version != SCHEMA_VERSION {
        return Err(DataError::Format {
            line: 1,
            message: format!("unsupported schema {} v{}", header.schema, header.version),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DataError::Format { line: i + 2, message: e.to_string() })?);
    }
    Ok(out)
}
