use std::fs;
use std::path::{Path, PathBuf};

use bforest_cli::commands::{self, write_synth, SynthKind};
use bforest_cli::{RunConfig, Settings, EXIT_ERROR, EXIT_FAILED, EXIT_OK};
use bforest_core::evaluation::{evaluate_result, macro_pass_rate, micro_pass_rate, Rate};
use bforest_core::pipeline::PlanResult;

fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/demo")
}

fn config(dir: &Path, out: &Path) -> RunConfig {
    let mut s = Settings::load(&dir.join("bforest.toml")).unwrap();
    s.set(
        "out",
        toml::Value::String(out.to_string_lossy().into_owned()),
    );
    RunConfig::from_settings(&s, true).unwrap()
}

#[test]
fn feasible_batch_exits_zero_with_one_file_per_query() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(&demo_dir(), tmp.path());
    assert_eq!(commands::cmd_plan(&cfg), EXIT_OK);
    let results = commands::load_results(tmp.path()).unwrap();
    assert_eq!(results.len(), 6);
    assert!(tmp.path().join("trace.jsonl").exists());
}

#[test]
fn one_infeasible_query_exits_one_and_still_writes_it() {
    let tmp = tempfile::tempdir().unwrap();
    let batch = tmp.path().join("batch");
    write_synth(SynthKind::Infeasible, 5, 2, &batch).unwrap();
    let out = tmp.path().join("plans");
    let cfg = config(&batch, &out);
    assert_eq!(commands::cmd_plan(&cfg), EXIT_FAILED);
    let failed: PlanResult =
        serde_json::from_str(&fs::read_to_string(out.join("infeas-000.json")).unwrap()).unwrap();
    assert!(!failed.is_delivered());
    let trace = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 6);
}

#[test]
fn missing_catalog_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(&demo_dir(), tmp.path());
    cfg.catalog = tmp.path().join("absent.json");
    assert_eq!(commands::cmd_plan(&cfg), EXIT_ERROR);
    assert_eq!(commands::cmd_bench(&cfg), EXIT_ERROR);
}

#[test]
fn evaluating_passing_plans_gives_full_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(&demo_dir(), tmp.path());
    commands::run_plan(&cfg).unwrap();
    let report = commands::run_evaluate(&cfg, tmp.path()).unwrap();
    let one = Rate::new(1, 1);
    for rate in [
        report.delivery_rate,
        report.commonsense_micro,
        report.hard_macro,
        report.final_pass_rate,
    ] {
        assert_eq!(rate, one);
    }
    for name in ["report.json", "report.txt", "violations.csv"] {
        assert!(tmp.path().join(name).exists());
    }
    // Rerunning over the same directory skips the written report.
    assert_eq!(commands::cmd_evaluate(&cfg, tmp.path()), EXIT_OK);
}

#[test]
fn mixed_batch_rates_match_the_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let batch = tmp.path().join("batch");
    write_synth(SynthKind::Ablation, 3, 4, &batch).unwrap();
    let out = tmp.path().join("plans");
    let mut cfg = config(&batch, &out);
    cfg.planner.ablation.no_coordination = true;
    commands::run_plan(&cfg).unwrap();
    let report = commands::run_evaluate(&cfg, &out).unwrap();
    let work = commands::Workload::load(&cfg).unwrap();
    let results = commands::load_results(&out).unwrap();
    let checks: Vec<_> = results
        .iter()
        .map(|r| {
            evaluate_result(
                r,
                &work.catalog,
                work.queries.iter().find(|q| q.id == r.query_id).unwrap(),
            )
        })
        .collect();
    let hard: Vec<Vec<_>> = checks
        .iter()
        .map(|c| {
            c.iter()
                .filter(|c| c.kind.category() == "hard")
                .cloned()
                .collect()
        })
        .collect();
    assert_eq!(report.hard_micro, micro_pass_rate(&hard));
    assert_eq!(report.hard_macro, macro_pass_rate(&hard));
    assert!(report.final_pass_rate < Rate::new(1, 1));
}

#[test]
fn empty_plan_directory_gives_zero_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let plans = tmp.path().join("empty");
    fs::create_dir(&plans).unwrap();
    let cfg = config(&demo_dir(), tmp.path());
    let report = commands::run_evaluate(&cfg, &plans).unwrap();
    assert_eq!(report.queries, 0);
    assert_eq!(report.final_pass_rate, Rate::ZERO);
    assert_eq!(report.hard_micro, Rate::ZERO);
}

#[test]
fn bench_without_latency_keeps_plans_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(&demo_dir(), tmp.path());
    let bench = commands::run_bench(&cfg).unwrap();
    assert!(bench.mismatched.is_empty());
    assert_eq!(bench.parallel.token_usage, bench.sequential.token_usage);
    assert_eq!(commands::cmd_bench(&cfg), EXIT_OK);
    assert!(tmp.path().join("bench.json").exists());
}

#[test]
fn query_loading_accepts_files_arrays_and_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let qdir = demo_dir().join("queries");
    let one = commands::load_queries(&[qdir.join("feas-000.json")]).unwrap();
    assert_eq!(one.len(), 1);
    let arr = tmp.path().join("two.json");
    fs::write(
        &arr,
        serde_json::to_string(&commands::load_queries(std::slice::from_ref(&qdir)).unwrap()[..2])
            .unwrap(),
    )
    .unwrap();
    assert_eq!(
        commands::load_queries(std::slice::from_ref(&arr))
            .unwrap()
            .len(),
        2
    );
    assert!(
        commands::load_queries(&[arr, qdir]).is_err(),
        "duplicate ids are refused"
    );
}
