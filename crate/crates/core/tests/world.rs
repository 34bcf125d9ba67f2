use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use proptest::prelude::*;

use prmgui::world::*;

fn bank() -> (Arc<Fixture>, Vec<TaskSpec>) {
    let cfg = FixtureConfig::default();
    (Arc::new(cfg.fixture), cfg.tasks)
}

fn key(state: &GuiState) -> Vec<u8> {
    let mut s = state.clone();
    s.step_count = 0;
    s.canonical_bytes()
}

/// Plain breadth-first search over public `step` calls, keyed by the
/// serialized state. Shares nothing with the library's oracle.
fn reference_distance(world: &WorldInstance) -> Option<u32> {
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(key(&world.state));
    queue.push_back((world.clone(), 0u32));
    while let Some((w, d)) = queue.pop_front() {
        if w.check_success() {
            return Some(d);
        }
        for a in w.enumerate_actions() {
            if a.kind == ActionKind::Finished {
                continue;
            }
            let mut next = w.clone();
            let out = next.step(&a).unwrap();
            if out.terminated && !next.check_success() {
                continue;
            }
            if seen.insert(key(&next.state)) {
                queue.push_back((next, d + 1));
            }
        }
    }
    None
}

#[test]
fn add_john_distance_is_frozen_at_five() {
    let (f, _) = bank();
    let task = TaskSpec::new("add-john", Template::AddContact, [("name", "John")]).unwrap();
    let w = WorldInstance::new(f, task, 7, 0.0).unwrap();
    assert_eq!(reference_distance(&w), Some(5));
    assert_eq!(min_steps_to_success(&w), Reachability::Steps(5));
}

#[test]
fn library_bfs_matches_reference_on_every_bank_task() {
    let (f, tasks) = bank();
    for t in &tasks {
        let w = WorldInstance::new(f.clone(), t.clone(), 0, 0.0).unwrap();
        assert_eq!(min_steps_to_success(&w).steps(), reference_distance(&w), "{}", t.task_id);
    }
}

#[test]
fn removed_app_is_unreachable() {
    let (f, tasks) = bank();
    let alarm = tasks.iter().find(|t| t.template == Template::SetAlarm).unwrap().clone();
    let g = Arc::new(f.without_app(App::Clock));
    let w = WorldInstance::new(g, alarm, 0, 0.0).unwrap();
    assert!(min_steps_to_success(&w).steps().is_none());
    assert!(reference_distance(&w).is_none());
}

#[test]
fn fifteenth_step_terminates() {
    let (f, tasks) = bank();
    let mut w = WorldInstance::new(f, tasks[0].clone(), 3, 0.0).unwrap();
    for i in 1..=15 {
        let out = w.step(&Action::wait()).unwrap();
        assert_eq!(out.terminated, i == 15);
    }
    assert!(w.step(&Action::wait()).is_err());
}

#[test]
fn toggle_already_at_target_is_success() {
    let (f, _) = bank();
    let current = f.initial.settings.get(SettingKey::Wifi);
    let value = if current { "on" } else { "off" };
    let t = TaskSpec::new("t", Template::ToggleSetting, [("setting", "wifi"), ("value", value)]).unwrap();
    assert!(WorldInstance::new(f, t, 0, 0.0).unwrap().check_success());
}

#[test]
fn enumeration_is_deterministic() {
    let (f, tasks) = bank();
    for t in &tasks {
        let w = WorldInstance::new(f.clone(), t.clone(), 11, 0.0).unwrap();
        assert_eq!(w.enumerate_actions(), w.enumerate_actions());
    }
}

fn arb_run() -> impl Strategy<Value = (usize, u64, f64, Vec<usize>)> {
    (0usize..36, any::<u64>(), prop_oneof![Just(0.0), Just(0.15), Just(0.5), Just(1.0)], prop::collection::vec(any::<usize>(), 0..20))
}

/// Plays choice indices (mod the candidate count) until termination; returns
/// the visited states.
fn play(f: &Arc<Fixture>, task: &TaskSpec, seed: u64, p: f64, choices: &[usize]) -> Vec<GuiState> {
    let mut w = WorldInstance::new(f.clone(), task.clone(), seed, p).unwrap();
    let mut states = vec![w.state.clone()];
    for c in choices {
        let acts = w.enumerate_actions();
        let out = w.step(&acts[c % acts.len()]).unwrap();
        states.push(out.state);
        if out.terminated {
            break;
        }
    }
    states
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_is_bit_identical((ti, seed, p, choices) in arb_run()) {
        let (f, tasks) = bank();
        let a = play(&f, &tasks[ti], seed, p, &choices);
        let b = play(&f, &tasks[ti], seed, p, &choices);
        let enc = |v: &[GuiState]| v.iter().map(|s| s.canonical_bytes()).collect::<Vec<_>>();
        prop_assert_eq!(enc(&a), enc(&b));
    }

    #[test]
    fn step_counter_is_monotone((ti, seed, p, choices) in arb_run()) {
        let (f, tasks) = bank();
        let states = play(&f, &tasks[ti], seed, p, &choices);
        for (i, s) in states.iter().enumerate() {
            prop_assert_eq!(s.step_count, i as u32);
            prop_assert!(s.step_count <= tasks[ti].max_steps);
        }
    }

    #[test]
    fn obstacle_masks_task_state((ti, seed, choices) in (0usize..36, any::<u64>(), prop::collection::vec(any::<usize>(), 0..12)),
                                 x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let (f, tasks) = bank();
        let mut w = WorldInstance::new(f.clone(), tasks[ti].clone(), seed, 1.0).unwrap();
        for c in &choices {
            if w.state.obstacle.is_some() {
                let buttons: Vec<Rect> = w.state.widgets.iter().filter(|wd| wd.id.starts_with("dialog")).map(|wd| wd.bounds).collect();
                let p = Point { x, y };
                if w.done || buttons.iter().any(|b| b.contains(p)) {
                    break;
                }
                let before = w.state.data.clone();
                let out = w.step(&Action::click(x, y)).unwrap();
                prop_assert_eq!(&out.state.data, &before);
                if out.terminated {
                    break;
                }
                continue;
            }
            let acts = w.enumerate_actions();
            if w.step(&acts[c % acts.len()]).unwrap().terminated {
                break;
            }
        }
    }

    #[test]
    fn check_success_is_pure((ti, seed, p, choices) in arb_run()) {
        let (f, tasks) = bank();
        let mut w = WorldInstance::new(f.clone(), tasks[ti].clone(), seed, p).unwrap();
        for c in &choices {
            let before = w.state.canonical_bytes();
            let a = w.check_success();
            prop_assert_eq!(a, w.check_success());
            prop_assert_eq!(before, w.state.canonical_bytes());
            let acts = w.enumerate_actions();
            if w.step(&acts[c % acts.len()]).unwrap().terminated {
                break;
            }
        }
    }

    #[test]
    fn optimal_path_takes_exactly_min_steps((ti, seed, prefix) in (0usize..36, any::<u64>(), prop::collection::vec(any::<usize>(), 0..5))) {
        let (f, tasks) = bank();
        let task = &tasks[ti];
        let mut w = WorldInstance::new(f.clone(), task.clone(), seed, 0.0).unwrap();
        for c in &prefix {
            let acts: Vec<Action> = w.enumerate_actions().into_iter().filter(|a| a.kind != ActionKind::Finished).collect();
            w.step(&acts[c % acts.len()]).unwrap();
        }
        let Some(d) = min_steps_to_success(&w).steps() else { return Ok(()) };
        prop_assume!(w.state.step_count + d < task.max_steps);
        let mut oracle = DistanceOracle::new(f.clone(), task.clone());
        for _ in 0..d {
            prop_assert!(!w.check_success());
            let best = oracle.optimal_actions(&w.state);
            w.step(&best[0]).unwrap();
        }
        prop_assert!(w.check_success());
    }
}
