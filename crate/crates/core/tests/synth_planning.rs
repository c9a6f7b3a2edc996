use bforest_core::config::PlannerConfig;
use bforest_core::evaluation::evaluate_result;
use bforest_core::llm::MockBackend;
use bforest_core::pipeline::{plan, FailureReason, PlanResult};
use bforest_core::prompts::Prompts;
use bforest_core::synth::{ablation_batch, feasible_batch, infeasible_batch, SynthBatch};

fn run(batch: &SynthBatch, config: &PlannerConfig) -> Vec<PlanResult> {
    let backend = MockBackend::new(batch.mock_rules.clone());
    let prompts = Prompts::default();
    batch
        .queries
        .iter()
        .map(|q| plan(q, &batch.catalog, &backend, &prompts, config))
        .collect()
}

fn all_pass(batch: &SynthBatch, result: &PlanResult) -> bool {
    let q = batch
        .queries
        .iter()
        .find(|q| q.id == result.query_id)
        .unwrap();
    result.is_delivered()
        && evaluate_result(result, &batch.catalog, q)
            .iter()
            .all(|c| c.passed)
}

#[test]
fn feasible_queries_deliver_compliant_plans() {
    let batch = feasible_batch(11, 12);
    for r in run(&batch, &batch.config) {
        assert!(all_pass(&batch, &r), "{}: {:?}", r.query_id, r.status);
        assert_eq!(r.rounds_used, 1, "{}", r.query_id);
    }
}

#[test]
fn budgets_below_the_cheapest_trip_are_refused() {
    let batch = infeasible_batch(12, 6);
    for r in run(&batch, &batch.config) {
        assert!(!r.is_delivered(), "{}", r.query_id);
        assert_eq!(r.failure(), Some(FailureReason::Unsat));
        assert_eq!(r.rounds_used, 3, "{}", r.query_id);
        assert!(r
            .violation_trace
            .iter()
            .all(|round| round.violations.iter().any(|v| v.constraint_id == "budget")));
    }
}

#[test]
fn budget_feedback_finds_the_affordable_stay() {
    let batch = ablation_batch(13, 4);
    let mut ablated = batch.config.clone();
    ablated.ablation.no_coordination = true;
    for r in run(&batch, &batch.config) {
        assert!(all_pass(&batch, &r), "{}: {:?}", r.query_id, r.status);
        assert_eq!(r.rounds_used, 2);
    }
    for r in run(&batch, &ablated) {
        assert!(!all_pass(&batch, &r), "{}", r.query_id);
    }
}
