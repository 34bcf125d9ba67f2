use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use prmgui::harness::*;
use prmgui::offline::{sample_offline_examples, OfflineExample};
use prmgui::ppo::{write_metrics_csv, IterMetrics, TRAIN_SEED_LIMIT};
use prmgui::rollout::*;
use prmgui::stats::Proportion;
use prmgui::verify::SweepRow;
use prmgui::world::*;

/// Success rate of a uniform random policy on the default suite, from an
/// independent 10k-episode Monte-Carlo run (9 successes) that plays
/// `WorldInstance` directly with its own rng.
const RANDOM_FLOOR: f64 = 0.0009;

fn bank() -> (Arc<Fixture>, Vec<TaskSpec>) {
    let cfg = FixtureConfig::default();
    (Arc::new(cfg.fixture), cfg.tasks)
}

fn suite(tasks: &[TaskSpec], p: f64) -> BenchmarkSuite {
    BenchmarkSuite::from_bank(tasks, &BenchmarkConfig { obstacle_prob: p, ..BenchmarkConfig::default() }).unwrap()
}

#[test]
fn default_suite_shape() {
    let (_, tasks) = bank();
    let s = suite(&tasks, 0.15);
    assert_eq!(s.tasks.len(), 20);
    assert_eq!(s.len(), 200);
    for t in Template::ALL {
        assert_eq!(s.tasks.iter().filter(|x| x.template == t).count(), 4);
    }
    assert_eq!(s.content_hash(), suite(&tasks, 0.15).content_hash());
    assert_ne!(s.content_hash(), suite(&tasks, 0.0).content_hash());
}

#[test]
fn suite_seeds_are_disjoint_from_training() {
    let (_, tasks) = bank();
    let s = suite(&tasks, 0.15);
    assert!(s.jobs().iter().all(|(_, seed)| *seed >= TRAIN_SEED_LIMIT));
    let bad = BenchmarkConfig { seed_base: TRAIN_SEED_LIMIT - 5, ..BenchmarkConfig::default() };
    assert!(matches!(BenchmarkSuite::from_bank(&tasks, &bad), Err(HarnessError::SeedOverlap { .. })));
    let mut hand = s.clone();
    hand.seeds[3][1] = 42;
    assert!(hand.check().is_err());
}

#[test]
fn random_policy_sits_at_the_floor() {
    let (f, tasks) = bank();
    let s = suite(&tasks, 0.15);
    let r = run_benchmark(&LocalRollouts::new(f), &UniformPolicy, &s, "cfg", 0).unwrap();
    assert_eq!(r.success.n, 200);
    assert!(r.success.interval.contains(RANDOM_FLOOR), "{:?}", r.success);
    // P(X >= 4) for Binomial(200, 0.0009) is below 1e-4
    assert!(r.success.successes <= 3);
}

#[test]
fn oracle_solves_everything_without_obstacles() {
    let (f, tasks) = bank();
    let s = suite(&tasks, 0.0);
    let r = run_benchmark(&LocalRollouts::new(f.clone()), &OraclePolicy::new(f), &s, "cfg", 0).unwrap();
    assert_eq!(r.success.value, 1.0);
    assert!(r.per_task.iter().all(|t| t.success.value == 1.0));
}

#[test]
fn rerun_gives_identical_report_hash() {
    let (f, tasks) = bank();
    let s = suite(&tasks, 0.15);
    let back = LocalRollouts::new(f);
    let a = run_benchmark(&back, &UniformPolicy, &s, "h", 3).unwrap();
    let b = run_benchmark(&back, &UniformPolicy, &s, "h", 3).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a, b);
    assert_eq!(a.meta.suite_hash, s.content_hash());
    assert_eq!(a.meta.config_hash, "h");
    assert!(!a.meta.version.is_empty());
}

/// Picks the candidate equal to the recorded ground truth.
struct Replay(HashMap<(String, Vec<u8>), Action>);

impl Policy for Replay {
    fn decide(&self, task: &TaskSpec, state: &GuiState, candidates: &[Action], _: &mut ChaCha8Rng) -> Result<Decision, EnvError> {
        let gt = &self.0[&(task.task_id.clone(), state.canonical_bytes())];
        let index = candidates.iter().position(|c| c == gt).unwrap();
        Ok(Decision { index, logp: 0.0, audit: None })
    }
}

struct AlwaysWait;

impl Policy for AlwaysWait {
    fn decide(&self, _: &TaskSpec, _: &GuiState, candidates: &[Action], _: &mut ChaCha8Rng) -> Result<Decision, EnvError> {
        let index = candidates.iter().position(|c| c.kind == ActionKind::Wait).unwrap();
        Ok(Decision { index, logp: 0.0, audit: None })
    }
}

fn offline_set() -> Vec<OfflineExample> {
    let (f, tasks) = bank();
    sample_offline_examples(f, &tasks, 300, 5, 0.3).unwrap()
}

#[test]
fn replaying_ground_truth_is_perfect() {
    let ex = offline_set();
    let policy = Replay(ex.iter().map(|e| ((e.task.task_id.clone(), e.state.canonical_bytes()), e.ground_truth.clone())).collect());
    let r = eval_offline(&policy, &ex, 0).unwrap();
    assert_eq!((r.type_match.value, r.exact_match.value), (1.0, 1.0));
}

#[test]
fn always_wait_matches_wait_frequency() {
    let ex = offline_set();
    let waits = ex.iter().filter(|e| e.ground_truth.kind == ActionKind::Wait).count() as u64;
    let r = eval_offline(&AlwaysWait, &ex, 0).unwrap();
    assert_eq!(r.type_match, Proportion::new(waits, ex.len() as u64));
    assert!(r.exact_match.value <= r.type_match.value);
    assert!(eval_offline(&AlwaysWait, &[], 0).is_err());
}

#[test]
fn exact_match_never_exceeds_type_match() {
    let ex = offline_set();
    for seed in 0..5 {
        let r = eval_offline(&UniformPolicy, &ex, seed).unwrap();
        assert!(r.exact_match.successes <= r.type_match.successes);
    }
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = ExperimentConfig::default();
    let back = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    let partial = ExperimentConfig::parse("[benchmark]\nseeds_per_task = 3\n").unwrap();
    assert_eq!(partial.benchmark.seeds_per_task, 3);
    assert_eq!(partial.baseline, cfg.baseline);
    assert_ne!(partial.hash(), cfg.hash());
    assert!(ExperimentConfig::parse("[benchmark]\nseed_base = 12\n").and_then(|c| c.validate()).is_err());
}

#[test]
fn pool_file_parses() {
    let pool = PoolFile::parse("active = [\"127.0.0.1:7001\", \"127.0.0.1:7002\"]\nbackups = [\"127.0.0.1:7003\"]\n").unwrap();
    assert_eq!(pool.active.len(), 2);
    assert_eq!(pool.backups.len(), 1);
    assert!(PoolFile::parse("active = [\"nope\"]\n").is_err());
}

fn write(dir: &Path, name: &str, body: impl FnOnce(&mut Vec<u8>)) {
    let mut buf = Vec::new();
    body(&mut buf);
    std::fs::write(dir.join(name), buf).unwrap();
}

fn sample_inputs(dir: &Path) {
    let metrics: Vec<IterMetrics> = (0..4)
        .map(|i| IterMetrics { iteration: i, success_rate: 0.4 + 0.05 * i as f64, mean_reward: 0.1, policy_loss: 0.2, value_loss: 0.3 })
        .collect();
    write(dir, "ppo-prm.csv", |b| write_metrics_csv(b, &metrics).unwrap());
    let sweep: Vec<SweepRow> = [1, 3, 5, 8, 16]
        .iter()
        .enumerate()
        .map(|(i, &n)| SweepRow { n, success: Proportion::new(100 + 10 * i as u64, 200), ms_per_step: 1.0, steps: 900 })
        .collect();
    write(dir, "sweep.csv", |b| write_sweep_csv(b, &sweep).unwrap());
    let mut abl = ABLATION_HEADER.join(",");
    for (p, a) in [("gpt4o-base", 0.86), ("gpt4o-improved", 0.92), ("human", 0.98)] {
        abl.push_str(&format!("\n{p},{a:.2},0,1000,{:.6},0.800000,160", a - 0.01));
    }
    abl.push('\n');
    std::fs::write(dir.join("ablation.csv"), abl).unwrap();
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn empty_inputs_get_a_no_runs_banner() {
    let inp = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let s = make_report(inp.path(), out.path()).unwrap();
    assert_eq!(s.runs, 0);
    let md = std::fs::read_to_string(out.path().join("index.md")).unwrap();
    assert!(md.contains("no runs"));
}

#[test]
fn report_regeneration_is_byte_identical() {
    let inp = tempfile::tempdir().unwrap();
    sample_inputs(inp.path());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    make_report(inp.path(), a.path()).unwrap();
    make_report(inp.path(), b.path()).unwrap();
    let (ra, rb) = (read_all(a.path()), read_all(b.path()));
    assert!(ra.len() >= 4);
    assert_eq!(ra, rb);
    let names: Vec<&str> = ra.iter().map(|(n, _)| n.as_str()).collect();
    for want in ["index.md", "n-sweep.svg", "annotation-quality.svg", "ppo-metrics-curves.svg"] {
        assert!(names.contains(&want), "{names:?}");
    }
}

#[test]
fn sweep_plot_ticks_are_the_n_values() {
    let inp = tempfile::tempdir().unwrap();
    sample_inputs(inp.path());
    let out = tempfile::tempdir().unwrap();
    make_report(inp.path(), out.path()).unwrap();
    let svg = std::fs::read_to_string(out.path().join("n-sweep.svg")).unwrap();
    let ticks: Vec<&str> = svg
        .lines()
        .filter(|l| l.starts_with("<text") && l.contains("text-anchor=\"middle\""))
        .filter_map(|l| l.split('>').nth(1).and_then(|x| x.strip_suffix("</text")))
        .filter(|t| t.parse::<usize>().is_ok())
        .collect();
    assert_eq!(ticks, ["1", "3", "5", "8", "16"]);
}

#[test]
fn schema_mismatch_names_the_column() {
    let inp = tempfile::tempdir().unwrap();
    std::fs::write(inp.path().join("bad.csv"), "iteration,success_rate,mean_reward,policy_loss,value_lss\n0,0.1,0.1,0.1,0.1\n").unwrap();
    let out = tempfile::tempdir().unwrap();
    let err = make_report(inp.path(), out.path()).unwrap_err();
    assert!(err.to_string().contains("value_lss"), "{err}");
    assert!(matches!(err, ReportError::Schema { index: 4, .. }));

    std::fs::write(inp.path().join("bad.csv"), "iteration,success_rate,mean_reward,policy_loss,value_loss\n0,abc,0.1,0.1,0.1\n").unwrap();
    let err = make_report(inp.path(), out.path()).unwrap_err();
    assert!(matches!(&err, ReportError::Value { column, .. } if column == "success_rate"), "{err}");
}

#[test]
fn csv_headers_are_detected() {
    for k in [CsvKind::Ppo, CsvKind::Grpo, CsvKind::Sweep, CsvKind::Ablation, CsvKind::Episodes] {
        let cols: Vec<String> = k.header().iter().map(|s| s.to_string()).collect();
        assert_eq!(CsvKind::detect("f.csv", &cols).unwrap(), k);
    }
}
