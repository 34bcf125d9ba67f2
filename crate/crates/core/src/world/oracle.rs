//! Breadth-first reachability oracle over the deterministic state graph.
//!
//! Obstacle spawns are exogenous and ignored: a search starts from whatever
//! obstacle the state already carries and never adds new ones.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::fixture::Fixture;
use super::sim::{apply, candidate_actions, is_dead_end, is_success, render, WorldInstance};
use super::types::{Action, ActionKind, GuiState, TaskSpec, UiCore};

pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reachability {
    Steps(u32),
    Unreachable { budget_exhausted: bool },
}

impl Reachability {
    pub fn steps(self) -> Option<u32> {
        match self {
            Reachability::Steps(n) => Some(n),
            Reachability::Unreachable { .. } => None,
        }
    }
}

/// Successors of `core` under the candidate action set, excluding `Finished`
/// (which ends the episode) and self-loops.
pub fn successors(fixture: &Fixture, task: &TaskSpec, core: &UiCore) -> Vec<(Action, UiCore)> {
    let widgets = render(fixture, core);
    candidate_actions(fixture, task, core.screen, core.obstacle, &widgets)
        .into_iter()
        .filter(|a| a.kind != ActionKind::Finished)
        .filter_map(|a| {
            let next = apply(fixture, core, &a);
            (next != *core).then_some((a, next))
        })
        .collect()
}

/// Nodes lying on some shortest path from the search start to a goal.
struct ShortestPaths {
    distance: u32,
    /// (node, distance to goal, optimal successors)
    nodes: Vec<(UiCore, u32, Vec<UiCore>)>,
}

struct Node {
    core: UiCore,
    depth: u32,
    parents: Vec<usize>,
    goal: bool,
}

/// Layered BFS from `start` that keeps every parent edge between consecutive
/// layers, so all shortest paths (not just one) can be recovered. `Err(true)`
/// means the node budget ran out; `Err(false)` means no goal is reachable.
fn shortest_paths(fixture: &Fixture, task: &TaskSpec, start: &UiCore, budget: usize) -> Result<ShortestPaths, bool> {
    if is_success(fixture, task, &start.data) {
        return Ok(ShortestPaths { distance: 0, nodes: vec![(start.clone(), 0, Vec::new())] });
    }
    if is_dead_end(fixture, task, &start.data) {
        return Err(false);
    }
    let mut nodes = vec![Node { core: start.clone(), depth: 0, parents: Vec::new(), goal: false }];
    let mut index: HashMap<UiCore, usize> = HashMap::new();
    index.insert(start.clone(), 0);
    let mut queue = VecDeque::from([0usize]);
    let mut goal_depth: Option<u32> = None;
    while let Some(u) = queue.pop_front() {
        let depth = nodes[u].depth;
        if goal_depth.is_some_and(|d| depth + 1 > d) {
            break;
        }
        let current = nodes[u].core.clone();
        for (_, next) in successors(fixture, task, &current) {
            if let Some(&v) = index.get(&next) {
                if nodes[v].depth == depth + 1 && !nodes[v].parents.contains(&u) {
                    nodes[v].parents.push(u);
                }
                continue;
            }
            if index.len() >= budget {
                return Err(true);
            }
            let goal = is_success(fixture, task, &next.data);
            let dead = !goal && is_dead_end(fixture, task, &next.data);
            let v = nodes.len();
            index.insert(next.clone(), v);
            nodes.push(Node { core: next, depth: depth + 1, parents: vec![u], goal });
            if goal {
                goal_depth.get_or_insert(depth + 1);
            } else if !dead {
                queue.push_back(v);
            }
        }
    }
    let distance = goal_depth.ok_or(false)?;

    let mut marked = vec![false; nodes.len()];
    let mut stack: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].goal && nodes[i].depth == distance).collect();
    for &g in &stack {
        marked[g] = true;
    }
    while let Some(v) = stack.pop() {
        for &p in &nodes[v].parents {
            if !marked[p] {
                marked[p] = true;
                stack.push(p);
            }
        }
    }
    let mut next: HashMap<usize, Vec<UiCore>> = HashMap::new();
    for v in (0..nodes.len()).filter(|&v| marked[v] && v != 0) {
        for &p in nodes[v].parents.iter().filter(|&&p| marked[p]) {
            next.entry(p).or_default().push(nodes[v].core.clone());
        }
    }
    let out = (0..nodes.len())
        .filter(|&v| marked[v])
        .map(|v| (nodes[v].core.clone(), distance - nodes[v].depth, next.remove(&v).unwrap_or_default()))
        .collect();
    Ok(ShortestPaths { distance, nodes: out })
}

/// Minimal number of steps from `core` to a success state.
pub fn min_steps_from(fixture: &Fixture, task: &TaskSpec, core: &UiCore, budget: usize) -> Reachability {
    match shortest_paths(fixture, task, core, budget) {
        Ok(sp) => Reachability::Steps(sp.distance),
        Err(budget_exhausted) => Reachability::Unreachable { budget_exhausted },
    }
}

pub fn min_steps_to_success(world: &WorldInstance) -> Reachability {
    min_steps_from(&world.fixture, &world.task, &world.state.core(), DEFAULT_NODE_BUDGET)
}

/// Memoizing distance oracle for one (fixture, task) pair.
#[derive(Debug)]
pub struct DistanceOracle {
    fixture: Arc<Fixture>,
    task: TaskSpec,
    budget: usize,
    distance: HashMap<UiCore, Reachability>,
    /// Successor states that are one step closer to success.
    next: HashMap<UiCore, Vec<UiCore>>,
}

impl DistanceOracle {
    pub fn new(fixture: Arc<Fixture>, task: TaskSpec) -> Self {
        Self::with_budget(fixture, task, DEFAULT_NODE_BUDGET)
    }

    pub fn with_budget(fixture: Arc<Fixture>, task: TaskSpec, budget: usize) -> Self {
        Self {
            fixture,
            task,
            budget,
            distance: HashMap::new(),
            next: HashMap::new(),
        }
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn fixture(&self) -> &Arc<Fixture> {
        &self.fixture
    }

    fn search(&mut self, core: &UiCore) -> Reachability {
        if let Some(r) = self.distance.get(core) {
            if self.next.contains_key(core) || !matches!(r, Reachability::Steps(d) if *d > 0) {
                return *r;
            }
        }
        match shortest_paths(&self.fixture, &self.task, core, self.budget) {
            Ok(sp) => {
                for (node, d, next) in sp.nodes {
                    if d > 0 {
                        self.next.insert(node.clone(), next);
                    }
                    self.distance.insert(node, Reachability::Steps(d));
                }
                Reachability::Steps(sp.distance)
            }
            Err(budget_exhausted) => {
                let r = Reachability::Unreachable { budget_exhausted };
                self.distance.insert(core.clone(), r);
                r
            }
        }
    }

    pub fn distance(&mut self, core: &UiCore) -> Reachability {
        if let Some(r) = self.distance.get(core) {
            return *r;
        }
        self.search(core)
    }

    pub fn distance_after(&mut self, core: &UiCore, action: &Action) -> Reachability {
        let next = apply(&self.fixture, core, action);
        self.distance(&next)
    }

    /// Successor states one step closer to success (empty at distance 0 or
    /// when unreachable).
    pub fn optimal_next(&mut self, core: &UiCore) -> (Reachability, &[UiCore]) {
        let r = self.search(core);
        let next = self.next.get(core).map(Vec::as_slice).unwrap_or(&[]);
        (r, next)
    }

    /// Candidate actions that move one step closer to success; `Finished` on a
    /// successful state, empty when unreachable.
    pub fn optimal_actions(&mut self, state: &GuiState) -> Vec<Action> {
        let core = state.core();
        let candidates = candidate_actions(&self.fixture, &self.task, state.screen, state.obstacle, &state.widgets);
        let fixture = self.fixture.clone();
        match self.optimal_next(&core) {
            (Reachability::Steps(0), _) => candidates.into_iter().filter(|a| a.kind == ActionKind::Finished).collect(),
            (Reachability::Steps(_), next) => candidates
                .into_iter()
                .filter(|a| a.kind != ActionKind::Finished && next.contains(&apply(&fixture, &core, a)))
                .collect(),
            (Reachability::Unreachable { .. }, _) => Vec::new(),
        }
    }

    pub fn cache_len(&self) -> usize {
        self.distance.len()
    }
}
