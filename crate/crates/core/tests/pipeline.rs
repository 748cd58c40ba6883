use std::path::Path;

use stategp::harness::{Coverage, CoverageReport, ExperimentConfig, Pipeline, Status};
use stategp::trajectory::SplitName;

const SMALL: &str = "gen.search = astar_hmax:5:200000,gbfs_hadd:30
gen.train.sizes = 3,4,5
gen.train.count = 6
gen.validation.sizes = 5
gen.validation.count = 2
gen.interpolation.sizes = 4
gen.interpolation.count = 2
gen.extrapolation.sizes = 6,7
gen.extrapolation.count = 2
train.seeds = 0,1
";

fn config(dir: &Path, domain: &str, extra: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(domain).unwrap();
    c.data_dir = dir.to_path_buf();
    c.apply_text(SMALL).unwrap();
    c.apply_text(extra).unwrap();
    c
}

fn run(c: ExperimentConfig) -> CoverageReport {
    Pipeline::open(c).unwrap().run().unwrap()
}

#[test]
fn oracle_model_solves_every_instance() {
    let dir = tempfile::tempdir().unwrap();
    for domain in ["blocksworld", "gripper"] {
        let r = run(config(dir.path(), domain, "model = oracle"));
        for split in [SplitName::Interpolation, SplitName::Extrapolation] {
            assert_eq!(r.coverage(split), Some(Coverage::Rate { mean: 1.0, std: 0.0 }), "{domain} {split}");
        }
        assert!(r.failures.is_empty());
    }
}

#[test]
fn reruns_reproduce_outcomes_from_scratch() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(config(a.path(), "blocksworld", ""));
    let rb = run(config(b.path(), "blocksworld", ""));
    let plans = |r: &CoverageReport| r.outcomes.iter().map(|o| (o.problem.clone(), o.seed, o.plan.clone())).collect::<Vec<_>>();
    assert_eq!(plans(&ra), plans(&rb));
    assert_eq!(ra.splits, rb.splits);
}

#[test]
fn empty_split_is_reported_as_not_applicable() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(config(dir.path(), "blocksworld", "gen.extrapolation.count = 0\nmodel = oracle"));
    assert_eq!(r.coverage(SplitName::Extrapolation), Some(Coverage::NoInstances));
    assert_eq!(r.coverage(SplitName::Extrapolation).unwrap().to_string(), "n/a");
}

#[test]
fn second_run_reuses_the_cache_and_force_recomputes() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(config(dir.path(), "gripper", ""));
    let entries = |p: &Path| walk(&p.join("cache"));
    let cached = entries(dir.path());
    assert!(cached.len() > 10);
    let second = run(config(dir.path(), "gripper", ""));
    assert_eq!(entries(dir.path()), cached);
    assert_eq!(first.splits, second.splits);

    let mut forced = config(dir.path(), "gripper", "");
    forced.force = true;
    let third = run(forced);
    assert_eq!(first.splits, third.splits);
    let rewritten = entries(dir.path());
    assert!(rewritten.iter().zip(&cached).any(|(new, old)| new.0 == old.0 && new.1 > old.1));
}

fn walk(dir: &Path) -> Vec<(String, std::time::SystemTime)> {
    let mut out = Vec::new();
    let Ok(read) = std::fs::read_dir(dir) else { return out };
    for e in read.flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push((p.display().to_string(), e.metadata().unwrap().modified().unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn logistics_runs_without_stage_failures() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(config(dir.path(), "logistics", "gen.extrapolation.sizes = 7\ngen.train.sizes = 1,2,3"));
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    assert!(r.outcomes.iter().all(|o| !matches!(o.status, Status::Error(_) | Status::Invalid(_))));
    assert_eq!(r.seeds, vec![0, 1]);
}
