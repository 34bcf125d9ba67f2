use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prmgui::grpo::*;
use prmgui::offline::sample_offline_examples;
use prmgui::policy::{candidate_features, PolicyModel};
use prmgui::prm::PrmModel;
use prmgui::rollout::LocalRollouts;
use prmgui::world::*;

fn bank() -> (Arc<Fixture>, Vec<TaskSpec>) {
    let cfg = FixtureConfig::default();
    (Arc::new(cfg.fixture), cfg.tasks)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

#[test]
fn group_advantage_examples() {
    assert_eq!(group_advantages(&[1.0, 0.0, 0.0, 1.0], 1e-8), vec![1.0, -1.0, -1.0, 1.0]);
    assert_eq!(group_advantages(&[0.7; 5], 1e-8), vec![0.0; 5]);
    assert!(group_advantages(&[], 1e-8).is_empty());
}

#[test]
fn oracle_reward_examples() {
    let john = Action::type_text("John");
    assert_eq!(oracle_reward(&john, &Action::type_text("John")), 2.0);
    assert_eq!(oracle_reward(&Action::type_text(" John  "), &john), 2.0);
    assert_eq!(oracle_reward(&Action::type_text("Jane"), &john), 1.0);
    assert_eq!(oracle_reward(&Action::click(0.5, 0.5), &Action::scroll(Direction::Down)), 0.0);
    assert_eq!(oracle_reward(&Action::click(0.1, 0.1), &Action::click(0.9, 0.9)), 1.0);
}

#[test]
fn zero_init_prm_reward_is_zero() {
    let (f, tasks) = bank();
    let prm = PrmModel::new(&[16], 0).unwrap();
    let s = WorldInstance::new(f.clone(), tasks[1].clone(), 0, 0.0).unwrap().state;
    for a in enumerate_actions(&f, &s, &tasks[1]) {
        assert_eq!(prm_reward(&prm, &tasks[1], &s, &a).unwrap(), 0.0);
    }
}

#[test]
fn grpo_loss_examples() {
    let (loss, grad) = grpo_loss(&[-0.4, -1.2], &[-0.4, -1.2], &[0.0, 0.0], 0.3).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(grad, vec![0.0, 0.0]);

    let new = [-0.4, -1.2, -2.0];
    let adv = [1.0, -0.5, 0.25];
    let (loss, grad) = grpo_loss(&new, &[-1.0, -0.1, -3.0], &adv, 0.0).unwrap();
    let surrogate = -(new.iter().zip(&adv).map(|(l, a)| l * a).sum::<f64>()) / 3.0;
    assert!((loss - surrogate).abs() < 1e-15);
    for (g, a) in grad.iter().zip(&adv) {
        assert!((g + a / 3.0).abs() < 1e-15);
    }
    assert!(grpo_loss(&[0.0], &[0.0, 1.0], &[0.0], 0.1).is_err());
}

#[test]
fn grpo_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let new: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..0.0)).collect();
    let rf: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..0.0)).collect();
    let adv: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let (_, g) = grpo_loss(&new, &rf, &adv, 0.2).unwrap();
    let h = 1e-6;
    for i in 0..6 {
        let mut up = new.clone();
        let mut dn = new.clone();
        up[i] += h;
        dn[i] -= h;
        let fd = (grpo_loss(&up, &rf, &adv, 0.2).unwrap().0 - grpo_loss(&dn, &rf, &adv, 0.2).unwrap().0) / (2.0 * h);
        assert!((fd - g[i]).abs() < 1e-6, "{i}: {fd} vs {}", g[i]);
    }
}

#[test]
fn degenerate_group_has_zero_surrogate_gradient() {
    let (f, tasks) = bank();
    let s = WorldInstance::new(f.clone(), tasks[0].clone(), 0, 0.0).unwrap().state;
    let acts = enumerate_actions(&f, &s, &tasks[0]);
    let feats = candidate_features(&tasks[0], &s, &acts);
    let mut policy = PolicyModel::new(&[16], 1.0, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in policy.mlp.params_mut() {
        *p = rng.gen_range(-0.3..0.3);
    }
    let adv = group_advantages(&[1.0; 4], 1e-8);
    let samples: Vec<GroupSample> = adv
        .iter()
        .enumerate()
        .map(|(k, a)| GroupSample { feats: feats.clone(), chosen: k % acts.len(), logp_ref: 0.0, advantage: *a })
        .collect();
    let (_, _, g) = grpo_loss_and_grad(&policy, &samples, 0.0).unwrap();
    assert!(g.iter().all(|x| *x == 0.0));
}

#[test]
fn mixed_group_favours_successes() {
    let adv = group_advantages(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 1e-8);
    for (r, a) in [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0].iter().zip(&adv) {
        assert_eq!(*r > 0.5, *a > 0.0);
    }
}

#[test]
fn zero_steps_leave_policy_unchanged() {
    let (f, tasks) = bank();
    let reference = PolicyModel::new(&[16], 1.0, 4).unwrap();
    let mut p = reference.clone();
    let back = LocalRollouts::new(f.clone());
    assert!(train_grpo_trajectory(&mut p, &reference, &back, &tasks, &GrpoHyper::default(), 0, 0.15, 0).unwrap().is_empty());
    assert_eq!(p, reference);
    let train = sample_offline_examples(f, &tasks, 10, 1, 0.15).unwrap();
    assert!(train_grpo_offline(&mut p, &reference, &train, &[], &OfflineReward::Oracle, &GrpoHyper::default(), 0, 1, 0)
        .unwrap()
        .is_empty());
    assert_eq!(p, reference);
}

#[test]
fn offline_oracle_reward_raises_type_match() {
    let (f, tasks) = bank();
    let train = sample_offline_examples(f.clone(), &tasks, 300, 1, 0.15).unwrap();
    let val = sample_offline_examples(f, &tasks, 100, 2, 0.15).unwrap();
    let reference = PolicyModel::new(&[32], 1.0, 4).unwrap();
    let mut p = reference.clone();
    let hyper = GrpoHyper { lr: 3e-3, ..GrpoHyper::default() };
    let m = train_grpo_offline(&mut p, &reference, &train, &val, &OfflineReward::Oracle, &hyper, 150, 50, 0).unwrap();
    let evals: Vec<f64> = m.iter().filter_map(|r| r.type_match).collect();
    assert_eq!(evals.len(), 3);
    let base = prmgui::offline::eval_offline(&prmgui::policy::GreedyPolicy(&reference), &val, 0).unwrap().type_match.value;
    assert!(evals[2] > base, "{base} -> {evals:?}");
    assert!(m.iter().all(|r| r.kl >= 0.0));
}

#[test]
fn group_size_one_is_rejected() {
    let (f, tasks) = bank();
    let reference = PolicyModel::new(&[16], 1.0, 4).unwrap();
    let mut p = reference.clone();
    let back = LocalRollouts::new(f);
    let hyper = GrpoHyper { group_size: 1, ..GrpoHyper::default() };
    assert!(train_grpo_trajectory(&mut p, &reference, &back, &tasks, &hyper, 1, 0.15, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn advantages_are_standardized(r in prop::collection::vec(-5.0f64..5.0, 2..16)) {
        let (_, s) = mean_std(&r);
        prop_assume!(s > 1e-6);
        let a = group_advantages(&r, 1e-8);
        let (m, sd) = mean_std(&a);
        prop_assert!(m.abs() < 1e-9);
        prop_assert!((sd - 1.0).abs() < 1e-9);
    }

    #[test]
    fn advantages_ignore_shift_and_positive_scale(r in prop::collection::vec(-5.0f64..5.0, 2..16), c in -10.0f64..10.0, k in 0.1f64..10.0) {
        prop_assume!(mean_std(&r).1 > 1e-3);
        let a = group_advantages(&r, 1e-8);
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        let scaled: Vec<f64> = r.iter().map(|x| x * k).collect();
        for (x, y) in a.iter().zip(group_advantages(&shifted, 1e-8)) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        for (x, y) in a.iter().zip(group_advantages(&scaled, 1e-8)) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn equal_rewards_give_zero(v in -5.0f64..5.0, n in 1usize..16) {
        prop_assert!(group_advantages(&vec![v; n], 1e-8).iter().all(|a| *a == 0.0));
    }

    #[test]
    fn kl_estimate_is_nonnegative(a in -20.0f64..0.0, b in -20.0f64..0.0) {
        let k = kl_estimate(a, b);
        prop_assert!(k >= 0.0);
        prop_assert_eq!(kl_estimate(a, a), 0.0);
        if (a - b).abs() > 1e-6 {
            prop_assert!(k > 0.0);
        }
    }
}
