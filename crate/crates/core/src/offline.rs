//! Single-state evaluation data: sampled states with an oracle-optimal ground
//! truth action, plus Type Match / Exact Match scoring.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rollout::{step_rng, Env, EnvError, LocalEnv, OraclePolicy, Policy};
use crate::stats::Proportion;
use crate::world::{Action, ActionKind, Fixture, GuiState, TaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineExample {
    pub task: TaskSpec,
    pub seed: u64,
    pub state: GuiState,
    pub candidates: Vec<Action>,
    pub ground_truth: Action,
}

/// States reached by uniform random-walk prefixes (no `Finished`), labeled with
/// the first oracle-optimal candidate. States already at the goal, and states
/// whose optimal candidates span several action kinds, are skipped.
pub fn sample_offline_examples(
    fixture: Arc<Fixture>,
    tasks: &[TaskSpec],
    n: usize,
    seed: u64,
    obstacle_prob: f64,
) -> Result<Vec<OfflineExample>, EnvError> {
    if n > 0 && tasks.is_empty() {
        return Err(EnvError::Policy("empty task list".into()));
    }
    let oracle = OraclePolicy::new(fixture.clone());
    let mut env = LocalEnv::new(fixture);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > n * 20 + 100 {
            return Err(EnvError::Policy(format!("only {} of {n} examples after {attempts} attempts", out.len())));
        }
        let task = &tasks[rng.gen_range(0..tasks.len())];
        let world_seed = rng.gen_range(0..crate::ppo::TRAIN_SEED_LIMIT);
        let prefix = rng.gen_range(0..task.max_steps);
        let mut state = env.reset(task, world_seed, obstacle_prob)?;
        for _ in 0..prefix {
            let moves: Vec<Action> = env.enumerate_actions()?.into_iter().filter(|a| a.kind != ActionKind::Finished).collect();
            state = env.step(&moves[rng.gen_range(0..moves.len())])?.state;
        }
        if env.check_success()? {
            continue;
        }
        let candidates = env.enumerate_actions()?;
        let best = oracle.optimal_indices(task, &state, &candidates);
        let Some(&gt) = best.first() else { continue };
        // Type Match is ill-defined when equally good actions differ in kind
        if best.iter().any(|&i| candidates[i].kind != candidates[gt].kind) {
            continue;
        }
        out.push(OfflineExample { task: task.clone(), seed: world_seed, ground_truth: candidates[gt].clone(), state, candidates });
    }
    Ok(out)
}

pub fn type_match(pred: &Action, gt: &Action) -> bool {
    pred.kind == gt.kind
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Kind plus arguments. Pointer actions match when the predicted point lies
/// inside the bounds of the widget the ground-truth point hits.
pub fn exact_match(pred: &Action, gt: &Action, state: &GuiState) -> bool {
    if !type_match(pred, gt) {
        return false;
    }
    match gt.kind {
        ActionKind::Click | ActionKind::LongPress => {
            let (Some(pp), Some(gp)) = (pred.point, gt.point) else { return false };
            match state.widgets.iter().find(|w| w.enabled && w.bounds.contains(gp)) {
                Some(w) => w.bounds.contains(pp),
                None => pp == gp,
            }
        }
        ActionKind::Type | ActionKind::Finished => {
            pred.content.as_deref().map(normalize_ws) == gt.content.as_deref().map(normalize_ws)
        }
        ActionKind::Scroll => pred.direction == gt.direction,
        ActionKind::OpenApp => pred.app_name == gt.app_name,
        ActionKind::PressHome | ActionKind::PressBack | ActionKind::Wait => true,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    pub type_match: Proportion,
    pub exact_match: Proportion,
}

/// Scores one prediction per example. The policy draws from `step_rng(seed ^
/// index, 0)` so sampled policies stay reproducible.
pub fn eval_offline(policy: &dyn Policy, examples: &[OfflineExample], seed: u64) -> Result<OfflineReport, EnvError> {
    if examples.is_empty() {
        return Err(EnvError::Policy("empty offline dataset".into()));
    }
    let (mut tm, mut em) = (0u64, 0u64);
    for (i, ex) in examples.iter().enumerate() {
        let mut rng = step_rng(seed ^ i as u64, 0);
        let d = policy.decide(&ex.task, &ex.state, &ex.candidates, &mut rng)?;
        let pred = &ex.candidates[d.index];
        if type_match(pred, &ex.ground_truth) {
            tm += 1;
        }
        if exact_match(pred, &ex.ground_truth, &ex.state) {
            em += 1;
        }
    }
    let n = examples.len() as u64;
    Ok(OfflineReport { type_match: Proportion::new(tm, n), exact_match: Proportion::new(em, n) })
}
