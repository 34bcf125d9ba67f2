//! Session pool with backup promotion and replay-based failover.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::client::{remote_actions, remote_reset, remote_step, remote_success, Connection};
use super::protocol::Endpoint;
use crate::rollout::{run_episode, Env, EnvError, Policy, RolloutBackend, Trajectory};
use crate::world::{Action, GuiState, StepOutcome, TaskSpec};

pub const DEFAULT_ACTIVE: usize = 8;
pub const DEFAULT_BACKUPS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub active: Vec<Endpoint>,
    pub backups: Vec<Endpoint>,
    /// Failovers one session may perform before giving up.
    pub retry_budget: usize,
    pub connect_timeout_ms: u64,
}

impl PoolConfig {
    pub fn new(active: Vec<Endpoint>, backups: Vec<Endpoint>) -> Self {
        let retry_budget = backups.len().max(1);
        Self { active, backups, retry_budget, connect_timeout_ms: 2_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Health {
    Up,
    Down,
}

struct PoolState {
    /// Designated active endpoints; a Down slot is backfilled from `backups`.
    slots: Vec<Endpoint>,
    backups: VecDeque<Endpoint>,
    health: BTreeMap<Endpoint, Health>,
    busy: BTreeSet<Endpoint>,
}

impl PoolState {
    fn mark_down(&mut self, ep: &Endpoint) {
        self.health.insert(ep.clone(), Health::Down);
        self.busy.remove(ep);
        if let Some(pos) = self.slots.iter().position(|s| s == ep) {
            while let Some(b) = self.backups.pop_front() {
                if self.health.get(&b) == Some(&Health::Up) {
                    self.slots[pos] = b;
                    return;
                }
            }
        }
    }

    fn any_up(&self) -> bool {
        self.slots.iter().any(|s| self.health.get(s) == Some(&Health::Up))
    }
}

pub struct SessionPool {
    config: PoolConfig,
    state: Mutex<PoolState>,
    freed: Condvar,
    failovers: AtomicUsize,
}

impl SessionPool {
    pub fn new(config: PoolConfig) -> Result<Self, EnvError> {
        if config.active.is_empty() {
            return Err(EnvError::PoolExhausted("no active endpoints configured".into()));
        }
        let all: BTreeSet<&Endpoint> = config.active.iter().chain(&config.backups).collect();
        if all.len() != config.active.len() + config.backups.len() {
            return Err(EnvError::PoolExhausted("endpoints must be distinct".into()));
        }
        let health = all.into_iter().map(|e| (e.clone(), Health::Up)).collect();
        let state = PoolState {
            slots: config.active.clone(),
            backups: config.backups.iter().cloned().collect(),
            health,
            busy: BTreeSet::new(),
        };
        Ok(Self { config, state: Mutex::new(state), freed: Condvar::new(), failovers: AtomicUsize::new(0) })
    }

    pub fn config(&self) -> &PoolConfig {
        &self.config
    }

    /// Number of slots, which bounds rollout concurrency.
    pub fn width(&self) -> usize {
        self.config.active.len()
    }

    pub fn active(&self) -> Vec<Endpoint> {
        let st = self.state.lock().expect("pool lock");
        st.slots.iter().filter(|s| st.health.get(*s) == Some(&Health::Up)).cloned().collect()
    }

    pub fn health(&self, ep: &Endpoint) -> Option<Health> {
        self.state.lock().expect("pool lock").health.get(ep).copied()
    }

    /// Total failovers performed by sessions of this pool.
    pub fn failover_count(&self) -> usize {
        self.failovers.load(Ordering::SeqCst)
    }

    /// Marks `ep` Down and promotes a backup into its slot.
    pub fn mark_down(&self, ep: &Endpoint) {
        self.state.lock().expect("pool lock").mark_down(ep);
        self.freed.notify_all();
    }

    fn release(&self, ep: &Endpoint) {
        self.state.lock().expect("pool lock").busy.remove(ep);
        self.freed.notify_all();
    }

    fn connect_any(&self) -> Result<Connection, EnvError> {
        let timeout = Duration::from_millis(self.config.connect_timeout_ms);
        loop {
            let ep = {
                let mut st = self.state.lock().expect("pool lock");
                loop {
                    if !st.any_up() {
                        return Err(EnvError::PoolExhausted("all endpoints are down".into()));
                    }
                    let free = st
                        .slots
                        .iter()
                        .find(|s| st.health.get(*s) == Some(&Health::Up) && !st.busy.contains(*s))
                        .cloned();
                    if let Some(ep) = free {
                        st.busy.insert(ep.clone());
                        break ep;
                    }
                    st = self.freed.wait(st).expect("pool lock");
                }
            };
            match Connection::connect(&ep, timeout) {
                Ok(c) => return Ok(c),
                Err(_) => self.mark_down(&ep),
            }
        }
    }

    /// A connected session on a free, Up endpoint; blocks while all Up slots
    /// are busy.
    pub fn acquire(&self) -> Result<PooledSession<'_>, EnvError> {
        Ok(PooledSession { pool: self, conn: Some(self.connect_any()?), episode: None, prefix: Vec::new(), last: None, failovers: 0 })
    }
}

/// A session that survives endpoint loss by replaying the episode on a
/// promoted backup.
pub struct PooledSession<'a> {
    pool: &'a SessionPool,
    conn: Option<Connection>,
    episode: Option<(TaskSpec, u64, f64)>,
    prefix: Vec<Action>,
    last: Option<GuiState>,
    failovers: usize,
}

impl PooledSession<'_> {
    pub fn endpoint(&self) -> Option<&Endpoint> {
        self.conn.as_ref().map(|c| c.endpoint())
    }

    pub fn failovers(&self) -> usize {
        self.failovers
    }

    fn failover(&mut self) -> Result<(), EnvError> {
        if let Some(c) = self.conn.take() {
            self.pool.mark_down(c.endpoint());
        }
        if self.failovers >= self.pool.config.retry_budget {
            return Err(EnvError::PoolExhausted(format!("retry budget {} spent", self.pool.config.retry_budget)));
        }
        self.failovers += 1;
        self.pool.failovers.fetch_add(1, Ordering::SeqCst);
        let mut conn = self.pool.connect_any()?;
        if let Some((task, seed, p)) = &self.episode {
            let mut state = remote_reset(&mut conn, task, *seed, *p)?;
            for a in &self.prefix {
                state = remote_step(&mut conn, a)?.state;
            }
            if Some(&state) != self.last.as_ref() {
                self.pool.release(conn.endpoint());
                return Err(EnvError::ReplayDiverged { steps: self.prefix.len() });
            }
        }
        self.conn = Some(conn);
        Ok(())
    }

    fn with_failover<T>(&mut self, mut op: impl FnMut(&mut Connection) -> Result<T, EnvError>) -> Result<T, EnvError> {
        loop {
            if self.conn.is_none() {
                self.failover()?;
            }
            let conn = self.conn.as_mut().expect("connected");
            match op(conn) {
                Err(EnvError::Connection(_)) => self.failover()?,
                other => return other,
            }
        }
    }
}

impl Drop for PooledSession<'_> {
    fn drop(&mut self) {
        if let Some(c) = self.conn.take() {
            self.pool.release(c.endpoint());
        }
    }
}

impl Env for PooledSession<'_> {
    fn reset(&mut self, task: &TaskSpec, seed: u64, obstacle_prob: f64) -> Result<GuiState, EnvError> {
        self.episode = None;
        self.prefix.clear();
        self.last = None;
        let state = self.with_failover(|c| remote_reset(c, task, seed, obstacle_prob))?;
        self.episode = Some((task.clone(), seed, obstacle_prob));
        self.last = Some(state.clone());
        Ok(state)
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        let out = self.with_failover(|c| remote_step(c, action))?;
        self.prefix.push(action.clone());
        self.last = Some(out.state.clone());
        Ok(out)
    }

    fn check_success(&mut self) -> Result<bool, EnvError> {
        self.with_failover(remote_success)
    }

    fn enumerate_actions(&mut self) -> Result<Vec<Action>, EnvError> {
        self.with_failover(remote_actions)
    }
}

/// One trajectory per job using up to `pool.width()` concurrent sessions.
/// Results keep input order. If a worker cannot continue, the error lists the
/// indices that did complete.
pub fn parallel_rollouts(
    pool: &SessionPool,
    policy: &dyn Policy,
    jobs: &[(TaskSpec, u64)],
    obstacle_prob: f64,
) -> Result<Vec<Trajectory>, EnvError> {
    if jobs.is_empty() {
        return Ok(Vec::new());
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Trajectory>>> = Mutex::new(vec![None; jobs.len()]);
    let first_error: Mutex<Option<EnvError>> = Mutex::new(None);
    let workers = pool.width().min(jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut session = match pool.acquire() {
                    Ok(s) => s,
                    Err(e) => {
                        first_error.lock().expect("error slot").get_or_insert(e);
                        return;
                    }
                };
                loop {
                    if first_error.lock().expect("error slot").is_some() {
                        return;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((task, seed)) = jobs.get(i) else { return };
                    match run_episode(&mut session, task, *seed, obstacle_prob, policy) {
                        Ok(t) => results.lock().expect("results")[i] = Some(t),
                        Err(e) => {
                            first_error.lock().expect("error slot").get_or_insert(e);
                            return;
                        }
                    }
                }
            });
        }
    });
    let results = results.into_inner().expect("results");
    if let Some(e) = first_error.into_inner().expect("error slot") {
        let completed = results.iter().enumerate().filter(|(_, r)| r.is_some()).map(|(i, _)| i).collect();
        return Err(EnvError::PartialBatch { completed, message: e.to_string() });
    }
    Ok(results.into_iter().map(|r| r.expect("every job ran")).collect())
}

impl RolloutBackend for SessionPool {
    fn rollouts(&self, policy: &dyn Policy, jobs: &[(TaskSpec, u64)], obstacle_prob: f64) -> Result<Vec<Trajectory>, EnvError> {
        parallel_rollouts(self, policy, jobs, obstacle_prob)
    }
}
