//! Environment and policy abstractions shared by local and remote rollouts.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::world::{Action, DistanceOracle, Fixture, GuiState, StepOutcome, TaskSpec, WorldError, WorldInstance};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("remote error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("connection failure: {0}")]
    Connection(String),
    #[error("session pool exhausted: {0}")]
    PoolExhausted(String),
    #[error("replay diverged after {steps} steps")]
    ReplayDiverged { steps: usize },
    #[error("no active episode; reset first")]
    NoSession,
    #[error("policy failure: {0}")]
    Policy(String),
    #[error("batch failed after completing {completed:?}: {message}")]
    PartialBatch { completed: Vec<usize>, message: String },
}

/// Something that hosts one episode at a time.
pub trait Env {
    fn reset(&mut self, task: &TaskSpec, seed: u64, obstacle_prob: f64) -> Result<GuiState, EnvError>;
    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError>;
    fn check_success(&mut self) -> Result<bool, EnvError>;
    fn enumerate_actions(&mut self) -> Result<Vec<Action>, EnvError>;
}

/// In-process environment.
pub struct LocalEnv {
    fixture: Arc<Fixture>,
    world: Option<WorldInstance>,
}

impl LocalEnv {
    pub fn new(fixture: Arc<Fixture>) -> Self {
        Self { fixture, world: None }
    }

    pub fn world(&self) -> Option<&WorldInstance> {
        self.world.as_ref()
    }
}

impl Env for LocalEnv {
    fn reset(&mut self, task: &TaskSpec, seed: u64, obstacle_prob: f64) -> Result<GuiState, EnvError> {
        let w = WorldInstance::new(self.fixture.clone(), task.clone(), seed, obstacle_prob)?;
        let s = w.state.clone();
        self.world = Some(w);
        Ok(s)
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        Ok(self.world.as_mut().ok_or(EnvError::NoSession)?.step(action)?)
    }

    fn check_success(&mut self) -> Result<bool, EnvError> {
        Ok(self.world.as_ref().ok_or(EnvError::NoSession)?.check_success())
    }

    fn enumerate_actions(&mut self) -> Result<Vec<Action>, EnvError> {
        Ok(self.world.as_ref().ok_or(EnvError::NoSession)?.enumerate_actions())
    }
}

/// One scored candidate kept for auditing verified steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub action: Action,
    pub logp: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    /// Index into the candidate list.
    pub index: usize,
    /// Log-probability of `index` under the acting policy's own sampling
    /// distribution (the unverified policy for verified decisions).
    pub logp: f64,
    pub audit: Option<Vec<ScoredCandidate>>,
}

pub trait Policy: Send + Sync {
    fn decide(&self, task: &TaskSpec, state: &GuiState, candidates: &[Action], rng: &mut ChaCha8Rng) -> Result<Decision, EnvError>;
}

/// Rng for the policy's draws at one step of one episode. Keyed by (seed,
/// step) so results do not depend on scheduling or on other episodes.
pub fn step_rng(seed: u64, step: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a11_u64);
    rng.set_stream(step as u64 + 1);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndReason {
    Success,
    Finished,
    StepCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: GuiState,
    pub candidates: Vec<Action>,
    pub chosen: usize,
    pub action: Action,
    pub logp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<Vec<ScoredCandidate>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: TaskSpec,
    pub seed: u64,
    pub obstacle_prob: f64,
    pub steps: Vec<TrajectoryStep>,
    pub final_state: GuiState,
    pub success: bool,
    pub end: EndReason,
}

impl Trajectory {
    /// Canonical encoding used for byte-level comparisons.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("trajectory serializes")
    }
}

/// Runs one episode until success, `Finished`, or the step cap.
pub fn run_episode(
    env: &mut dyn Env,
    task: &TaskSpec,
    seed: u64,
    obstacle_prob: f64,
    policy: &dyn Policy,
) -> Result<Trajectory, EnvError> {
    let mut state = env.reset(task, seed, obstacle_prob)?;
    let mut steps = Vec::new();
    let end = loop {
        if env.check_success()? {
            break EndReason::Success;
        }
        let candidates = env.enumerate_actions()?;
        let mut rng = step_rng(seed, state.step_count);
        let d = policy.decide(task, &state, &candidates, &mut rng)?;
        let action = candidates[d.index].clone();
        let out = env.step(&action)?;
        steps.push(TrajectoryStep {
            state: std::mem::replace(&mut state, out.state),
            candidates,
            chosen: d.index,
            action,
            logp: d.logp,
            audit: d.audit,
        });
        if out.terminated {
            break if env.check_success()? {
                EndReason::Success
            } else if steps.last().is_some_and(|s| s.action.kind == crate::world::ActionKind::Finished) {
                EndReason::Finished
            } else {
                EndReason::StepCap
            };
        }
    };
    Ok(Trajectory {
        task: task.clone(),
        seed,
        obstacle_prob,
        steps,
        final_state: state,
        success: end == EndReason::Success,
        end,
    })
}

/// Picks uniformly among candidates.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn decide(&self, _: &TaskSpec, _: &GuiState, candidates: &[Action], rng: &mut ChaCha8Rng) -> Result<Decision, EnvError> {
        let n = candidates.len();
        Ok(Decision { index: rng.gen_range(0..n), logp: -(n as f64).ln(), audit: None })
    }
}

/// Follows the BFS oracle: the first optimal candidate, or a random one when
/// no candidate makes progress.
pub struct OraclePolicy {
    fixture: Arc<Fixture>,
    oracles: Mutex<HashMap<String, DistanceOracle>>,
}

impl OraclePolicy {
    pub fn new(fixture: Arc<Fixture>) -> Self {
        Self { fixture, oracles: Mutex::new(HashMap::new()) }
    }

    pub fn optimal_indices(&self, task: &TaskSpec, state: &GuiState, candidates: &[Action]) -> Vec<usize> {
        let mut map = self.oracles.lock().expect("oracle cache lock");
        let oracle = map
            .entry(task.task_id.clone())
            .or_insert_with(|| DistanceOracle::new(self.fixture.clone(), task.clone()));
        let best = oracle.optimal_actions(state);
        candidates.iter().enumerate().filter(|(_, a)| best.contains(a)).map(|(i, _)| i).collect()
    }
}

impl Policy for OraclePolicy {
    fn decide(&self, task: &TaskSpec, state: &GuiState, candidates: &[Action], rng: &mut ChaCha8Rng) -> Result<Decision, EnvError> {
        match self.optimal_indices(task, state, candidates).first() {
            Some(i) => Ok(Decision { index: *i, logp: 0.0, audit: None }),
            None => UniformPolicy.decide(task, state, candidates, rng),
        }
    }
}

/// Runs a batch of (task, seed) episodes; results keep input order.
pub trait RolloutBackend: Sync {
    fn rollouts(&self, policy: &dyn Policy, jobs: &[(TaskSpec, u64)], obstacle_prob: f64) -> Result<Vec<Trajectory>, EnvError>;
}

/// Sequential in-process backend.
pub struct LocalRollouts {
    pub fixture: Arc<Fixture>,
}

impl LocalRollouts {
    pub fn new(fixture: Arc<Fixture>) -> Self {
        Self { fixture }
    }
}

impl RolloutBackend for LocalRollouts {
    fn rollouts(&self, policy: &dyn Policy, jobs: &[(TaskSpec, u64)], obstacle_prob: f64) -> Result<Vec<Trajectory>, EnvError> {
        let mut env = LocalEnv::new(self.fixture.clone());
        jobs.iter()
            .map(|(task, seed)| run_episode(&mut env, task, *seed, obstacle_prob, policy))
            .collect()
    }
}
