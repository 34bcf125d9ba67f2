use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prmgui::policy::{candidate_features, PolicyModel};
use prmgui::ppo::*;
use prmgui::prm::{PrmModel, PrmScore, DEFAULT_HIDDEN};
use prmgui::rollout::{LocalRollouts, RolloutBackend, UniformPolicy};
use prmgui::world::*;

fn bank() -> (Arc<Fixture>, Vec<TaskSpec>) {
    let cfg = FixtureConfig::default();
    (Arc::new(cfg.fixture), cfg.tasks)
}

/// Advantages straight from the truncated double sum
/// `sum_k (gamma*lambda)^k * (r + gamma*V' - V)` at each t.
fn double_sum(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            (0..n - t)
                .map(|k| {
                    let i = t + k;
                    (gamma * lambda).powi(k as i32) * (rewards[i] + gamma * values[i + 1] - values[i])
                })
                .sum()
        })
        .collect()
}

fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len()).map(|t| rewards[t..].iter().enumerate().map(|(k, r)| gamma.powi(k as i32) * r).sum()).collect()
}

#[test]
fn compose_reward_examples() {
    let w = RewardWeights::default();
    assert_eq!(compose_reward(1.0, true, &w), 1.0);
    assert!((compose_reward(-1.0, false, &w) + 1.1).abs() < 1e-15);
    let w0 = RewardWeights { w_f: 0.0, w_p: 0.7, ..w };
    assert_eq!(compose_reward(0.3, false, &w0), 0.7 * 0.3);
}

#[test]
fn malformed_actions_are_not_parsable() {
    assert!(action_parsable(&Action::wait()));
    assert!(action_parsable(&Action::click(0.25, 0.5)));
    let mut bad = Action::click(0.25, 0.5);
    bad.point = None;
    assert!(!action_parsable(&bad));
}

#[test]
fn gae_examples() {
    let (adv, ret) = gae(&[1.0, 0.0], &[0.5, 0.2, 0.0], 1.0, 1.0).unwrap();
    let want = double_sum(&[1.0, 0.0], &[0.5, 0.2, 0.0], 1.0, 1.0);
    for ((a, b), c) in adv.iter().zip(&want).zip([0.5, -0.2]) {
        assert!((a - b).abs() < 1e-12 && (b - c).abs() < 1e-12);
    }
    assert!((ret[0] - 1.0).abs() < 1e-12 && ret[1].abs() < 1e-12);

    let (td, _) = gae(&[0.3, -0.4, 1.0], &[0.1, 0.6, -0.2, 0.0], 0.9, 0.0).unwrap();
    let v = [0.1, 0.6, -0.2, 0.0];
    for t in 0..3 {
        let want = [0.3, -0.4, 1.0][t] + 0.9 * v[t + 1] - v[t];
        assert!((td[t] - want).abs() < 1e-12);
    }

    let r = [0.5, -1.0, 2.0];
    let (adv, _) = gae(&r, &[0.0; 4], 0.8, 1.0).unwrap();
    for (a, b) in adv.iter().zip(discounted_returns(&r, 0.8)) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(gae(&r, &[0.0; 3], 0.8, 1.0).is_err());
}

#[test]
fn clip_examples() {
    let (loss, grad) = ppo_clip_loss(&[0.0], &[0.0], &[-3.0], 0.2).unwrap();
    assert_eq!(loss, 3.0);
    assert_eq!(grad, vec![3.0]);

    let lp = 1.5f64.ln();
    let (loss, grad) = ppo_clip_loss(&[lp], &[0.0], &[2.0], 0.2).unwrap();
    assert!((loss + 2.4).abs() < 1e-12, "{loss}");
    assert_eq!(grad, vec![0.0]);
    let h = 1e-6;
    let fd = (ppo_clip_loss(&[lp + h], &[0.0], &[2.0], 0.2).unwrap().0 - ppo_clip_loss(&[lp - h], &[0.0], &[2.0], 0.2).unwrap().0) / (2.0 * h);
    assert!(fd.abs() < 1e-9);
}

#[test]
fn value_loss_examples_and_gradient() {
    assert_eq!(value_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
    assert_eq!(value_loss(&[2.0, 3.0], &[1.0, 2.0]).unwrap().0, 1.0);
    let v = [0.3, -1.2, 2.5];
    let r = [1.0, 0.4, -0.5];
    let (_, g) = value_loss(&v, &r).unwrap();
    let h = 1e-6;
    for i in 0..3 {
        let mut up = v;
        let mut dn = v;
        up[i] += h;
        dn[i] -= h;
        let fd = (value_loss(&up, &r).unwrap().0 - value_loss(&dn, &r).unwrap().0) / (2.0 * h);
        assert!((fd - g[i]).abs() < 1e-4);
    }
}

#[test]
fn value_init_copies_prm_trunk() {
    let (f, tasks) = bank();
    let mut prm = PrmModel::new(&DEFAULT_HIDDEN, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in prm.mlp.params_mut() {
        *p = rng.gen_range(-0.5..0.5);
    }
    let v = init_value_from_prm(&prm).unwrap();
    for l in 0..prm.mlp.num_layers() - 1 {
        let a = &prm.mlp.params()[prm.mlp.layer_range(l)];
        let b = &v.mlp.params()[v.mlp.layer_range(l)];
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let s = WorldInstance::new(f, tasks[2].clone(), 0, 0.0).unwrap().state;
    assert_eq!(v.value(&prmgui::prm::state_features(&tasks[2], &s)), 0.0);
}

#[test]
fn first_step_equals_plain_policy_gradient() {
    let (f, tasks) = bank();
    let back = LocalRollouts::new(f.clone());
    let mut policy = PolicyModel::new(&[16], 1.0, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for p in policy.mlp.params_mut() {
        *p = rng.gen_range(-0.3..0.3);
    }
    let trajs = back.rollouts(&policy, &[(tasks[0].clone(), 1), (tasks[9].clone(), 2)], 0.15).unwrap();
    let mut samples = Vec::new();
    for t in &trajs {
        for s in &t.steps {
            let feats = candidate_features(&t.task, &s.state, &s.candidates);
            let logp = policy.log_probs_from_features(&feats)[s.chosen];
            samples.push(PpoSample {
                feats,
                chosen: s.chosen,
                logp_old: logp,
                state_x: vec![],
                reward: 0.0,
                value: 0.0,
                advantage: rng.gen_range(-2.0..2.0),
                ret: 0.0,
            });
        }
    }
    let (_, g) = policy_loss_and_grad(&policy, &samples, 0.2).unwrap();
    let mut want = policy.mlp.zero_grads();
    let n = samples.len() as f64;
    for s in &samples {
        policy.accumulate_logp_grad(&s.feats, s.chosen, -s.advantage / n, &mut want);
    }
    for (a, b) in g.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Scores the final step of each recorded trajectory by its outcome and every
/// other step as neutral.
struct TerminalOracle(HashMap<(Vec<u8>, String), f64>);

impl StepScorer for TerminalOracle {
    fn score_step(&self, _: &TaskSpec, state: &GuiState, action: &Action) -> Result<PrmScore, RlError> {
        let r = self.0.get(&(state.canonical_bytes(), action.to_string())).copied().unwrap_or(0.0);
        Ok(PrmScore::from_logits(50.0 * r, -50.0 * r))
    }
}

#[test]
fn orm_matches_terminal_oracle_prm() {
    let (f, tasks) = bank();
    let back = LocalRollouts::new(f.clone());
    let jobs: Vec<_> = tasks.iter().take(12).enumerate().map(|(i, t)| (t.clone(), i as u64)).collect();
    let trajs = back.rollouts(&UniformPolicy, &jobs, 0.15).unwrap();
    let mut table = HashMap::new();
    for t in &trajs {
        let last = t.steps.last().unwrap();
        table.insert((last.state.canonical_bytes(), last.action.to_string()), if t.success { 1.0 } else { -1.0 });
    }
    let oracle = TerminalOracle(table);
    let w = RewardWeights::default();
    for t in &trajs {
        let orm = trajectory_rewards(t, RewardMode::Orm, None, false, &w).unwrap();
        let prm = trajectory_rewards(t, RewardMode::Prm, Some(&oracle), false, &w).unwrap();
        assert_eq!(orm, prm);
    }
    assert!(trajs.iter().any(|t| !t.success));
}

fn small_cfg(reward: RewardMode) -> PpoConfig {
    PpoConfig { iters: 2, tasks_per_iter: 4, reward, seed: 3, ..PpoConfig::default() }
}

#[test]
fn zero_iterations_leave_policy_unchanged() {
    let (f, tasks) = bank();
    let back = LocalRollouts::new(f);
    let policy = PolicyModel::new(&[16], 1.0, 1).unwrap();
    let mut p = policy.clone();
    let mut v = ValueModel::new(&[16], 2).unwrap();
    let prm = PrmModel::new(&[16], 0).unwrap();
    let m = train_ppo(&mut p, &mut v, Some(&prm), &back, &tasks, &PpoConfig { iters: 0, ..small_cfg(RewardMode::Prm) }).unwrap();
    assert!(m.is_empty());
    assert_eq!(p, policy);
}

#[test]
fn training_is_deterministic() {
    let (f, tasks) = bank();
    let back = LocalRollouts::new(f);
    let prm = PrmModel::new(&[16], 0).unwrap();
    let run = || {
        let mut p = PolicyModel::new(&[16], 1.0, 1).unwrap();
        let mut v = init_value_from_prm(&prm).unwrap();
        let m = train_ppo(&mut p, &mut v, Some(&prm), &back, &tasks, &small_cfg(RewardMode::Prm)).unwrap();
        let mut csv = Vec::new();
        write_metrics_csv(&mut csv, &m).unwrap();
        (p, csv)
    };
    let (pa, a) = run();
    let (pb, b) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert!(String::from_utf8(a).unwrap().starts_with(&METRICS_HEADER.join(",")));
}

#[test]
fn prm_mode_requires_a_scorer() {
    let (f, tasks) = bank();
    let back = LocalRollouts::new(f);
    let mut p = PolicyModel::new(&[16], 1.0, 1).unwrap();
    let mut v = ValueModel::new(&[16], 2).unwrap();
    assert!(train_ppo(&mut p, &mut v, None, &back, &tasks, &small_cfg(RewardMode::Prm)).is_err());
    assert!(train_ppo(&mut p, &mut v, None, &back, &tasks, &small_cfg(RewardMode::Orm)).is_ok());
}

#[test]
fn training_seeds_stay_below_limit() {
    for run in [0, 5, 96, 97, u64::MAX] {
        for it in [0, 29, 500] {
            for k in [0, 7, 63] {
                assert!(train_seed(run, it, k) < TRAIN_SEED_LIMIT);
            }
        }
    }
}

fn arb_episode() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
    (1usize..=15).prop_flat_map(|n| {
        (prop::collection::vec(-2.0f64..2.0, n), prop::collection::vec(-2.0f64..2.0, n), 0.0f64..=1.0, 0.0f64..=1.0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gae_matches_double_sum((r, mut v, gamma, lambda) in arb_episode()) {
        v.push(0.0);
        let (adv, ret) = gae(&r, &v, gamma, lambda).unwrap();
        for (a, b) in adv.iter().zip(double_sum(&r, &v, gamma, lambda)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for t in 0..r.len() {
            prop_assert!((ret[t] - adv[t] - v[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_one_gives_monte_carlo_returns((r, mut v, gamma, _l) in arb_episode()) {
        v.push(0.0);
        let (_, ret) = gae(&r, &v, gamma, 1.0).unwrap();
        for (a, b) in ret.iter().zip(discounted_returns(&r, gamma)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn clip_at_old_policy_is_identity(a in -5.0f64..5.0, lp in -4.0f64..0.0) {
        let (loss, grad) = ppo_clip_loss(&[lp], &[lp], &[a], 0.2).unwrap();
        prop_assert!((loss + a).abs() < 1e-12);
        prop_assert!((grad[0] + a).abs() < 1e-12);
    }
}
