use std::collections::BTreeMap;
use std::path::PathBuf;

use bforest_core::catalog::{load_catalog, Catalog};
use bforest_core::config::{ExecutionMode, PlannerConfig};
use bforest_core::coordination::{validate_global, GlobalVerdict};
use bforest_core::domain::{total_cost, validate_plan, ConstraintSet, Money, Plan, Query};
use bforest_core::evaluation::evaluate_plan;
use bforest_core::extraction::parse_query;
use bforest_core::llm::{MockBackend, MockRules};
use bforest_core::pipeline::{plan, FailureReason};
use bforest_core::prompts::Prompts;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn demo() -> (Catalog, Vec<Query>, MockBackend) {
    let dir = fixtures().join("demo");
    let catalog = load_catalog(dir.join("catalog.json")).unwrap();
    let mut files: Vec<_> = std::fs::read_dir(dir.join("queries"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    let queries = files
        .iter()
        .map(|f| serde_json::from_str(&std::fs::read_to_string(f).unwrap()).unwrap())
        .collect();
    let rules = MockRules::load(dir.join("mock-rules.json")).unwrap();
    (catalog, queries, MockBackend::new(rules))
}

#[test]
fn delivered_plans_survive_independent_rechecks() {
    let (catalog, queries, backend) = demo();
    let prompts = Prompts::default();
    for q in &queries {
        let r = plan(q, &catalog, &backend, &prompts, &PlannerConfig::default());
        let p = r
            .plan()
            .unwrap_or_else(|| panic!("{} not delivered: {:?}", q.id, r.status));
        assert!(validate_plan(p, &catalog).is_empty());
        let subplans: BTreeMap<_, _> = p.subplans.iter().map(|s| (s.task, s.clone())).collect();
        assert_eq!(
            validate_global(&subplans, &r.constraints.globals, &catalog, q),
            GlobalVerdict::Feasible
        );
        assert!(evaluate_plan(p, &r.constraints, &catalog, q)
            .iter()
            .all(|c| c.passed));
        let summed: Money = p.subplans.iter().map(|s| s.total_cost).sum();
        assert_eq!(p.total_cost, summed);
        assert_eq!(total_cost(p, &catalog).unwrap(), summed);
        assert!(p.total_cost <= q.budget);
    }
}

#[test]
fn runs_repeat_exactly_in_both_modes() {
    let (catalog, queries, backend) = demo();
    let prompts = Prompts::default();
    let seq = PlannerConfig {
        mode: ExecutionMode::Sequential,
        ..PlannerConfig::default()
    };
    for q in &queries {
        let a = plan(q, &catalog, &backend, &prompts, &PlannerConfig::default());
        let b = plan(q, &catalog, &backend, &prompts, &PlannerConfig::default());
        let c = plan(q, &catalog, &backend, &prompts, &seq);
        assert_eq!(a.canonical_json(), b.canonical_json());
        assert_eq!(a.canonical_json(), c.canonical_json());
    }
}

#[test]
fn usage_adds_up_across_queries() {
    let (catalog, queries, backend) = demo();
    let prompts = Prompts::default();
    let before = backend.usage();
    let mut summed = bforest_core::llm::TokenUsage::default();
    for q in &queries {
        summed += plan(q, &catalog, &backend, &prompts, &PlannerConfig::default()).token_usage;
    }
    let after = backend.usage();
    assert_eq!(after.call_count - before.call_count, summed.call_count);
    assert_eq!(
        after.input_tokens - before.input_tokens,
        summed.input_tokens
    );
    assert_eq!(
        after.output_tokens - before.output_tokens,
        summed.output_tokens
    );
}

#[test]
fn extraction_is_repeatable() {
    let (_, queries, backend) = demo();
    let prompts = Prompts::default();
    for q in &queries {
        let a = serde_json::to_string(&parse_query(q, &backend, &prompts).unwrap()).unwrap();
        let b = serde_json::to_string(&parse_query(q, &backend, &prompts).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn fixtures_round_trip() {
    let (catalog, queries, backend) = demo();
    let prompts = Prompts::default();
    for q in &queries {
        let text = serde_json::to_string(q).unwrap();
        assert_eq!(&serde_json::from_str::<Query>(&text).unwrap(), q);
        let r = plan(q, &catalog, &backend, &prompts, &PlannerConfig::default());
        let cs_text = serde_json::to_string(&r.constraints).unwrap();
        assert_eq!(
            serde_json::from_str::<ConstraintSet>(&cs_text).unwrap(),
            r.constraints
        );
        let p = r.plan().unwrap();
        let plan_text = serde_json::to_string(p).unwrap();
        assert_eq!(&serde_json::from_str::<Plan>(&plan_text).unwrap(), p);
    }
    let again = Catalog::from_json_str(&catalog.to_json_pretty()).unwrap();
    assert_eq!(again, catalog);
}

#[test]
fn tiny_fixture_cannot_fill_nine_distinct_meals() {
    let catalog = load_catalog(fixtures().join("tiny.json")).unwrap();
    let q: Query =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("tiny-query.json")).unwrap())
            .unwrap();
    let backend = MockBackend::new(MockRules::with_default(
        r#"{"constraints":[],"candidates":[]}"#,
    ));
    let r = plan(
        &q,
        &catalog,
        &backend,
        &Prompts::default(),
        &PlannerConfig::default(),
    );
    assert_eq!(r.failure(), Some(FailureReason::Unsat));
}
