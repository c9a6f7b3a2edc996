//! End-to-end planning of one query, and integration of the four subplans
//! into a day-by-day itinerary.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::btree::BehaviorTree;
use crate::catalog::Catalog;
use crate::config::PlannerConfig;
use crate::coordination::{
    commit_top_candidates, coordinate, CoordinationEnv, CoordinationError, GlobalState, Outcome,
    RoundRecord,
};
use crate::domain::{CommonsenseKind, ConstraintSet, DayEntry, Plan, Query, SubPlan, TaskKind};
use crate::extraction::{
    build_forest, decouple_constraints, parse_query, standard_commonsense, ExtractionError,
};
use crate::llm::{CompletionBackend, Metered, TokenUsage};
use crate::prompts::{render, Prompts};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntegrationError {
    #[error("inconsistent subplans: {0}")]
    InconsistentSubplans(String),
}

fn assemble(
    subplans: &BTreeMap<TaskKind, SubPlan>,
    query: &Query,
    strict: bool,
) -> Result<Plan, IntegrationError> {
    let n = query.num_days();
    let mut days: Vec<DayEntry> = (1..=n)
        .map(|day| DayEntry {
            day,
            ..DayEntry::default()
        })
        .collect();
    let slot = |day: u32| (day.clamp(1, n) - 1) as usize;
    let empty = |t| SubPlan::empty(t);
    let get = |t: TaskKind| subplans.get(&t).cloned().unwrap_or_else(|| empty(t));

    let transport = get(TaskKind::Transportation);
    for e in &transport.entries {
        days[slot(e.day)].transport.push(e.resource_id.clone());
    }

    let lodging = get(TaskKind::Accommodation);
    for e in &lodging.entries {
        if strict && (e.day == 0 || e.day >= n) {
            return Err(IntegrationError::InconsistentSubplans(format!(
                "accommodation entry for night {} outside nights 1..{}",
                e.day,
                n.saturating_sub(1)
            )));
        }
        days[slot(e.day)].accommodation = Some(e.resource_id.clone());
    }

    let dining = get(TaskKind::Dining);
    let meals_needed = 3 * n as usize;
    if strict && dining.entries.len() != meals_needed {
        return Err(IntegrationError::InconsistentSubplans(format!(
            "{} dining entries for {meals_needed} meal slots",
            dining.entries.len()
        )));
    }
    for (i, e) in dining.entries.iter().take(meals_needed).enumerate() {
        let day = &mut days[i / 3];
        let meal = Some(e.resource_id.clone());
        match i % 3 {
            0 => day.breakfast = meal,
            1 => day.lunch = meal,
            _ => day.dinner = meal,
        }
    }

    let attractions = get(TaskKind::Attractions);
    for e in &attractions.entries {
        days[slot(e.day)].attractions.push(e.resource_id.clone());
    }

    let subplans: Vec<SubPlan> = vec![transport, lodging, dining, attractions];
    let total_cost = subplans.iter().map(|s| s.total_cost).sum();
    Ok(Plan {
        query_id: query.id.clone(),
        days,
        total_cost,
        subplans,
    })
}

/// Merges the subplans into a day-indexed itinerary: legs and nights on
/// their entry days, three meals per day in dining-entry order, attractions
/// on their entry days. Fails when the meal entries do not fill the trip
/// exactly, or repeat a restaurant while diverse restaurants are required.
pub fn integrate(
    subplans: &BTreeMap<TaskKind, SubPlan>,
    query: &Query,
    constraints: &ConstraintSet,
) -> Result<Plan, IntegrationError> {
    if constraints.has_commonsense(CommonsenseKind::DiverseRestaurants) {
        if let Some(dining) = subplans.get(&TaskKind::Dining) {
            let ids = dining.sorted_ids();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(IntegrationError::InconsistentSubplans(format!(
                    "{} meal slots need distinct restaurants but the dining subplan repeats one",
                    dining.entries.len()
                )));
            }
        }
    }
    assemble(subplans, query, true)
}

/// Best-effort integration used for validation: gaps stay empty for the
/// checkers to report.
pub fn integrate_provisional(subplans: &BTreeMap<TaskKind, SubPlan>, query: &Query) -> Plan {
    assemble(subplans, query, false).expect("lenient assembly never fails")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Unsat,
    Backend,
    Extraction,
    Integration,
    InvalidQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PlanStatus {
    Delivered {
        plan: Plan,
    },
    Failed {
        reason: FailureReason,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub query_id: String,
    #[serde(flatten)]
    pub status: PlanStatus,
    pub rounds_used: u32,
    pub violation_trace: Vec<RoundRecord>,
    /// Fingerprints of the combinations validated, in order.
    pub validation_log: Vec<String>,
    pub token_usage: TokenUsage,
    pub wall_time_ms: u64,
    pub constraints: ConstraintSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_verification: Option<String>,
}

impl PlanResult {
    pub fn is_delivered(&self) -> bool {
        matches!(self.status, PlanStatus::Delivered { .. })
    }

    pub fn plan(&self) -> Option<&Plan> {
        match &self.status {
            PlanStatus::Delivered { plan } => Some(plan),
            PlanStatus::Failed { .. } => None,
        }
    }

    pub fn failure(&self) -> Option<FailureReason> {
        match &self.status {
            PlanStatus::Failed { reason, .. } => Some(*reason),
            PlanStatus::Delivered { .. } => None,
        }
    }

    /// JSON with the run-dependent wall time zeroed, for comparing runs.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.wall_time_ms = 0;
        serde_json::to_string_pretty(&copy).expect("plan results serialize")
    }
}

/// The extracted constraints plus the configured commonsense checks.
fn full_constraints(
    extracted: ConstraintSet,
    config: &PlannerConfig,
) -> Result<ConstraintSet, ExtractionError> {
    let mut all = extracted.all;
    for c in standard_commonsense(&config.commonsense) {
        if !all.iter().any(|e| e.id == c.id || e.kind == c.kind) {
            all.push(c);
        }
    }
    decouple_constraints(all)
}

/// Plans one query end to end. Every failure is reported in the result;
/// this never panics on bad input or backend trouble.
pub fn plan(
    query: &Query,
    catalog: &Catalog,
    backend: &dyn CompletionBackend,
    prompts: &Prompts,
    config: &PlannerConfig,
) -> PlanResult {
    let started = Instant::now();
    let metered = Metered::new(backend);
    let mut result = PlanResult {
        query_id: query.id.clone(),
        status: PlanStatus::Failed {
            reason: FailureReason::InvalidQuery,
            message: String::new(),
        },
        rounds_used: 0,
        violation_trace: Vec::new(),
        validation_log: Vec::new(),
        token_usage: TokenUsage::default(),
        wall_time_ms: 0,
        constraints: ConstraintSet::default(),
        llm_verification: None,
    };
    let outcome = run(query, catalog, &metered, prompts, config, &mut result);
    result.status = match outcome {
        Ok(status) => status,
        Err((reason, message)) => PlanStatus::Failed { reason, message },
    };

    if config.llm_verify {
        if let PlanStatus::Delivered { plan } = &result.status {
            result.llm_verification = Some(verify(plan, &result.constraints, &metered, prompts));
        }
    }
    result.token_usage = metered.usage();
    result.wall_time_ms = started.elapsed().as_millis() as u64;
    result
}

type Failure = (FailureReason, String);

fn run(
    query: &Query,
    catalog: &Catalog,
    backend: &dyn CompletionBackend,
    prompts: &Prompts,
    config: &PlannerConfig,
    result: &mut PlanResult,
) -> Result<PlanStatus, Failure> {
    query
        .validate()
        .map_err(|e| (FailureReason::InvalidQuery, e.to_string()))?;
    config.validate().map_err(|e| {
        (
            FailureReason::InvalidQuery,
            format!("invalid configuration: {e}"),
        )
    })?;

    let extraction_failure = |e: ExtractionError| match e {
        ExtractionError::Backend(b) => (FailureReason::Backend, b.to_string()),
        other => (FailureReason::Extraction, other.to_string()),
    };
    let extracted = parse_query(query, backend, prompts).map_err(extraction_failure)?;
    let constraints = full_constraints(extracted, config).map_err(extraction_failure)?;
    result.constraints = constraints.clone();

    let forest = build_forest(query, &constraints);
    let tasks: Vec<TaskKind> = forest.trees.iter().map(|t| t.task).collect();
    let mut trees: Vec<BehaviorTree> = forest
        .trees
        .iter()
        .map(|t| BehaviorTree::new(t.task, &t.locals))
        .collect();
    let budget = constraints.budget().unwrap_or(query.budget);
    let mut state = GlobalState::new(
        budget,
        &tasks,
        &config.budget_shares,
        forest.dependency_edges,
        config.max_rounds,
    );
    let env = CoordinationEnv {
        catalog,
        query,
        constraints: &constraints,
        backend,
        prompts,
        config,
    };

    let report = if config.ablation.no_coordination {
        commit_top_candidates(&mut trees, &mut state, &env)
    } else {
        coordinate(&mut trees, &mut state, &env)
    }
    .map_err(|e| match e {
        CoordinationError::Backend(b) => (FailureReason::Backend, b.to_string()),
        CoordinationError::Integration(i) => (FailureReason::Integration, i.to_string()),
        CoordinationError::Tree(t) => (FailureReason::Integration, t),
    })?;

    result.rounds_used = report.rounds_used;
    result.validation_log = report
        .validation_log
        .iter()
        .map(|k| k.to_string())
        .collect();
    result.violation_trace = report.trace;
    match report.outcome {
        Outcome::Feasible(plan) => Ok(PlanStatus::Delivered { plan }),
        Outcome::Unsat(reason) => Err((FailureReason::Unsat, reason.to_string())),
    }
}

/// Asks the backend for a free-text judgement of a delivered plan. The
/// answer is informational only.
fn verify(
    plan: &Plan,
    constraints: &ConstraintSet,
    backend: &dyn CompletionBackend,
    prompts: &Prompts,
) -> String {
    let constraints = serde_json::to_string_pretty(&constraints.all).unwrap_or_default();
    let plan_json = serde_json::to_string_pretty(plan).unwrap_or_default();
    let prompt = render(
        &prompts.verify,
        &[("constraints", &constraints), ("plan", &plan_json)],
    );
    match backend.complete(&prompt) {
        Ok(c) => c.text,
        Err(e) => format!("verification unavailable: {e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Money, SubPlanEntry};
    use chrono::NaiveDate;

    fn query(days: u32) -> Query {
        let start = NaiveDate::from_ymd_opt(2024, 5, 1).unwrap();
        Query {
            id: "q".into(),
            text: String::new(),
            origin: "Seattle".into(),
            destination: "Portland".into(),
            start_date: start,
            end_date: start + chrono::Days::new(u64::from(days - 1)),
            party_size: 1,
            budget: Money(1_000_000),
            raw_preferences: vec![],
        }
    }

    fn entries(ids: &[(u32, &str)], price: i64) -> Vec<SubPlanEntry> {
        ids.iter()
            .map(|(day, id)| SubPlanEntry {
                day: *day,
                resource_id: (*id).into(),
                quantity: 1,
                unit_cost: Money(price),
            })
            .collect()
    }

    fn three_day() -> BTreeMap<TaskKind, SubPlan> {
        let meals: Vec<(u32, &str)> = ["R1", "R2", "R3", "R4", "R5", "R6", "R7", "R8", "R9"]
            .iter()
            .enumerate()
            .map(|(i, id)| (i as u32 / 3 + 1, *id))
            .collect();
        [
            (
                TaskKind::Transportation,
                SubPlan::new(
                    TaskKind::Transportation,
                    entries(&[(1, "F1"), (3, "F2")], 20000),
                ),
            ),
            (
                TaskKind::Accommodation,
                SubPlan::new(
                    TaskKind::Accommodation,
                    entries(&[(1, "H1"), (2, "H1")], 10000),
                ),
            ),
            (
                TaskKind::Dining,
                SubPlan::new(TaskKind::Dining, entries(&meals, 1000)),
            ),
            (
                TaskKind::Attractions,
                SubPlan::new(
                    TaskKind::Attractions,
                    entries(&[(1, "A1"), (2, "A2"), (3, "A3")], 500),
                ),
            ),
        ]
        .into()
    }

    #[test]
    fn three_day_itinerary() {
        let plan = integrate(&three_day(), &query(3), &ConstraintSet::default()).unwrap();
        assert_eq!(
            plan.days.iter().map(|d| d.day).collect::<Vec<_>>(),
            [1, 2, 3]
        );
        assert_eq!(plan.days[0].accommodation.as_deref(), Some("H1"));
        assert_eq!(plan.days[1].accommodation.as_deref(), Some("H1"));
        assert_eq!(plan.days[2].accommodation, None);
        assert_eq!(plan.days[2].transport, ["F2"]);
        assert_eq!(plan.days[1].lunch.as_deref(), Some("R5"));
        assert_eq!(plan.total_cost, Money(40000 + 20000 + 9000 + 1500));
        assert_eq!(plan.total_cost, plan.total_cost());
    }

    #[test]
    fn day_trip_has_no_lodging() {
        let mut subs = three_day();
        subs.insert(
            TaskKind::Accommodation,
            SubPlan::empty(TaskKind::Accommodation),
        );
        subs.insert(
            TaskKind::Dining,
            SubPlan::new(
                TaskKind::Dining,
                entries(&[(1, "R1"), (1, "R2"), (1, "R3")], 1000),
            ),
        );
        subs.insert(
            TaskKind::Transportation,
            SubPlan::new(
                TaskKind::Transportation,
                entries(&[(1, "F1"), (1, "F2")], 1),
            ),
        );
        subs.insert(
            TaskKind::Attractions,
            SubPlan::new(TaskKind::Attractions, entries(&[(1, "A1")], 1)),
        );
        let plan = integrate(&subs, &query(1), &ConstraintSet::default()).unwrap();
        assert_eq!(plan.days.len(), 1);
        assert!(plan.days.iter().all(|d| d.accommodation.is_none()));
    }

    #[test]
    fn too_few_restaurants_for_diverse_meals() {
        let mut subs = three_day();
        let meals: Vec<(u32, &str)> = (0..9)
            .map(|i| (i / 3 + 1, if i % 2 == 0 { "R1" } else { "R2" }))
            .collect();
        subs.insert(
            TaskKind::Dining,
            SubPlan::new(TaskKind::Dining, entries(&meals, 1000)),
        );
        let constraints =
            decouple_constraints(standard_commonsense(&[CommonsenseKind::DiverseRestaurants]))
                .unwrap();
        let err = integrate(&subs, &query(3), &constraints).unwrap_err();
        assert!(matches!(err, IntegrationError::InconsistentSubplans(_)));
    }

    #[test]
    fn short_dining_is_inconsistent_but_provisional_is_lenient() {
        let mut subs = three_day();
        subs.insert(
            TaskKind::Dining,
            SubPlan::new(TaskKind::Dining, entries(&[(1, "R1")], 1000)),
        );
        assert!(integrate(&subs, &query(3), &ConstraintSet::default()).is_err());
        let plan = integrate_provisional(&subs, &query(3));
        assert_eq!(plan.days[0].breakfast.as_deref(), Some("R1"));
        assert_eq!(plan.days[0].lunch, None);
    }
}
