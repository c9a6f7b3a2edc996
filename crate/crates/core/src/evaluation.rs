//! Constraint checkers and pass-rate metrics.
//!
//! Rates are exact rationals; percentages exist only for display. Empty
//! inputs give a rate of 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::catalog::{Catalog, TransportOption};
use crate::domain::{
    validate_plan, CommonsenseKind, Constraint, ConstraintKind, ConstraintParams, ConstraintSet,
    Plan, Query, StructuralDefect, TaskKind, TransportMode,
};
use crate::llm::TokenUsage;
use crate::pipeline::{PlanResult, PlanStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub constraint_id: String,
    pub plan_id: String,
    pub kind: ConstraintKind,
    pub passed: bool,
    /// Why the check failed; empty on a pass.
    pub detail: String,
    /// Trees whose subplans the failure points at.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub implicated: Vec<TaskKind>,
}

struct Verdict {
    failures: Vec<String>,
    implicated: BTreeSet<TaskKind>,
}

impl Verdict {
    fn new() -> Self {
        Verdict {
            failures: Vec::new(),
            implicated: BTreeSet::new(),
        }
    }

    fn fail(&mut self, task: TaskKind, detail: String) {
        self.failures.push(detail);
        self.implicated.insert(task);
    }
}

/// Transport legs in itinerary order, with the day each is listed on.
fn legs<'a>(plan: &Plan, catalog: &'a Catalog) -> Vec<(u32, &'a TransportOption)> {
    plan.days
        .iter()
        .flat_map(|d| d.transport.iter().map(move |id| (d.day, id)))
        .filter_map(|(day, id)| {
            catalog
                .lookup(TaskKind::Transportation, id)
                .and_then(|o| o.as_transport())
                .map(|t| (day, t))
        })
        .collect()
}

fn used_ids(plan: &Plan, task: TaskKind) -> Vec<&str> {
    plan.days
        .iter()
        .flat_map(|d| -> Vec<&str> {
            match task {
                TaskKind::Transportation => d.transport.iter().map(String::as_str).collect(),
                TaskKind::Accommodation => d.accommodation.iter().map(String::as_str).collect(),
                TaskKind::Dining => d.meals().collect(),
                TaskKind::Attractions => d.attractions.iter().map(String::as_str).collect(),
            }
        })
        .collect()
}

fn check_sandbox(plan: &Plan, catalog: &Catalog, v: &mut Verdict) {
    for defect in validate_plan(plan, catalog) {
        if let StructuralDefect::UnknownResource { task, id } = defect {
            v.fail(task, format!("{task} id {id} is not in the catalog"));
        }
    }
}

fn check_complete(plan: &Plan, query: &Query, v: &mut Verdict) {
    let n = query.num_days();
    if plan.days.len() as u32 != n {
        v.fail(
            TaskKind::Transportation,
            format!("plan covers {} of {n} days", plan.days.len()),
        );
    }
    for day in &plan.days {
        let d = day.day;
        for (slot, meal) in [
            ("breakfast", &day.breakfast),
            ("lunch", &day.lunch),
            ("dinner", &day.dinner),
        ] {
            if meal.is_none() {
                v.fail(TaskKind::Dining, format!("day {d} has no {slot}"));
            }
        }
        if day.attractions.is_empty() {
            v.fail(TaskKind::Attractions, format!("day {d} has no attraction"));
        }
        if d < n && day.accommodation.is_none() {
            v.fail(
                TaskKind::Accommodation,
                format!("night {d} has no accommodation"),
            );
        }
        if (d == 1 || d == n) && day.transport.is_empty() {
            v.fail(
                TaskKind::Transportation,
                format!("day {d} has no transport"),
            );
        }
    }
}

fn check_current_city(plan: &Plan, query: &Query, catalog: &Catalog, v: &mut Verdict) {
    let mut current = query.origin.clone();
    for day in &plan.days {
        let mut occupied = BTreeSet::from([current.clone()]);
        for id in &day.transport {
            if let Some(t) = catalog
                .lookup(TaskKind::Transportation, id)
                .and_then(|o| o.as_transport())
            {
                occupied.insert(t.destination.clone());
                current = t.destination.clone();
            }
        }
        let mut allowed = occupied.clone();
        allowed.remove(&query.origin);
        if allowed.is_empty() {
            allowed = occupied;
        }
        let activities = day
            .meals()
            .map(|id| (TaskKind::Dining, id))
            .chain(
                day.attractions
                    .iter()
                    .map(|id| (TaskKind::Attractions, id.as_str())),
            )
            .chain(
                day.accommodation
                    .iter()
                    .map(|id| (TaskKind::Accommodation, id.as_str())),
            );
        for (task, id) in activities {
            if let Some(o) = catalog.lookup(task, id) {
                if !allowed.contains(o.city()) {
                    v.fail(
                        task,
                        format!(
                            "day {}: {id} is in {} but the party is in {allowed:?}",
                            day.day,
                            o.city()
                        ),
                    );
                }
            }
        }
    }
}

fn check_route(plan: &Plan, query: &Query, catalog: &Catalog, v: &mut Verdict) {
    let t = TaskKind::Transportation;
    let legs = legs(plan, catalog);
    let (Some((_, first)), Some((_, last))) = (legs.first(), legs.last()) else {
        v.fail(t, "no transport legs".into());
        return;
    };
    if first.origin != query.origin {
        v.fail(
            t,
            format!(
                "route starts in {} instead of {}",
                first.origin, query.origin
            ),
        );
    }
    if last.destination != query.origin {
        v.fail(
            t,
            format!(
                "route ends in {} instead of {}",
                last.destination, query.origin
            ),
        );
    }
    if !legs.iter().any(|(_, l)| l.destination == query.destination) {
        v.fail(t, format!("route never reaches {}", query.destination));
    }
    if first.departure_date != query.start_date {
        v.fail(
            t,
            format!(
                "first leg departs {} not {}",
                first.departure_date, query.start_date
            ),
        );
    }
    if last.departure_date != query.end_date {
        v.fail(
            t,
            format!(
                "last leg departs {} not {}",
                last.departure_date, query.end_date
            ),
        );
    }
    for pair in legs.windows(2) {
        let (a, b) = (pair[0].1, pair[1].1);
        if a.destination != b.origin {
            v.fail(
                t,
                format!(
                    "{} ends in {} but {} starts in {}",
                    a.id, a.destination, b.id, b.origin
                ),
            );
        }
    }
    for (day, leg) in &legs {
        if leg.departure_date != query.date_of_day(*day) {
            v.fail(
                t,
                format!(
                    "{} is listed on day {day} but departs {}",
                    leg.id, leg.departure_date
                ),
            );
        }
    }
}

fn check_non_conflicting(plan: &Plan, catalog: &Catalog, v: &mut Verdict) {
    let t = TaskKind::Transportation;
    let legs = legs(plan, catalog);
    for pair in legs.windows(2) {
        let (a, b) = (pair[0].1, pair[1].1);
        if b.departure_date < a.arrival_date {
            v.fail(
                t,
                format!(
                    "{} departs {} before {} arrives {}",
                    b.id, b.departure_date, a.id, a.arrival_date
                ),
            );
        }
    }
    let driving = legs
        .iter()
        .any(|(_, l)| l.mode == TransportMode::SelfDriving);
    if driving
        && legs
            .iter()
            .any(|(_, l)| l.mode != TransportMode::SelfDriving)
    {
        v.fail(t, "self-driving is mixed with other modes".into());
    }
}

fn check_diverse(plan: &Plan, task: TaskKind, v: &mut Verdict) {
    let mut seen = BTreeSet::new();
    for id in used_ids(plan, task) {
        if !seen.insert(id) {
            v.fail(task, format!("{id} is used more than once"));
        }
    }
}

fn check_min_nights(plan: &Plan, catalog: &Catalog, v: &mut Verdict) {
    // Lengths of each maximal run of consecutive nights at one listing.
    let mut runs: Vec<(&str, u32)> = Vec::new();
    let mut prev_day = 0;
    for day in &plan.days {
        if let Some(id) = day.accommodation.as_deref() {
            match runs.last_mut() {
                Some((last, len)) if *last == id && prev_day + 1 == day.day => *len += 1,
                _ => runs.push((id, 1)),
            }
            prev_day = day.day;
        }
    }
    for (id, nights) in runs {
        if let Some(a) = catalog
            .lookup(TaskKind::Accommodation, id)
            .and_then(|o| o.as_accommodation())
        {
            if nights < a.min_nights {
                v.fail(
                    TaskKind::Accommodation,
                    format!("{id} requires {} nights, stay is {nights}", a.min_nights),
                );
            }
        }
    }
}

fn check_tags(plan: &Plan, constraint: &Constraint, catalog: &Catalog, v: &mut Verdict) {
    use ConstraintParams as P;
    match &constraint.params {
        P::Budget { amount } => {
            let total = plan.total_cost();
            if total > *amount {
                for task in TaskKind::ALL {
                    v.implicated.insert(task);
                }
                v.failures
                    .push(format!("total {total} exceeds budget {amount}"));
            }
        }
        P::RoomRule { allowed } => {
            for id in used_ids(plan, TaskKind::Accommodation) {
                if let Some(a) = catalog
                    .lookup(TaskKind::Accommodation, id)
                    .and_then(|o| o.as_accommodation())
                {
                    for act in allowed.iter().filter(|act| !a.allows(act)) {
                        v.fail(
                            TaskKind::Accommodation,
                            format!("{id} does not allow {act}"),
                        );
                    }
                }
            }
        }
        P::RoomType { room_type } => {
            for id in used_ids(plan, TaskKind::Accommodation) {
                if let Some(a) = catalog
                    .lookup(TaskKind::Accommodation, id)
                    .and_then(|o| o.as_accommodation())
                {
                    if a.room_type != *room_type {
                        v.fail(
                            TaskKind::Accommodation,
                            format!("{id} is {:?}, wanted {room_type:?}", a.room_type),
                        );
                    }
                }
            }
        }
        P::Cuisine { cuisines } => {
            for id in used_ids(plan, TaskKind::Dining) {
                if let Some(r) = catalog
                    .lookup(TaskKind::Dining, id)
                    .and_then(|o| o.as_restaurant())
                {
                    if !r.serves_any(cuisines) {
                        v.fail(
                            TaskKind::Dining,
                            format!("{id} serves none of {cuisines:?}"),
                        );
                    }
                }
            }
        }
        P::Transportation { modes } => {
            for (_, leg) in legs(plan, catalog) {
                if !modes.contains(&leg.mode) {
                    v.fail(
                        TaskKind::Transportation,
                        format!("{} is {:?}, allowed {modes:?}", leg.id, leg.mode),
                    );
                }
            }
        }
        P::MinRating { task, rating } => {
            for id in used_ids(plan, *task) {
                let r = catalog.lookup(*task, id).and_then(|o| o.rating());
                if r.is_none_or(|r| r < *rating) {
                    v.fail(*task, format!("{id} is rated {r:?}, below {rating}"));
                }
            }
        }
        P::None => {}
    }
}

/// Runs the checker for `constraint` against `plan`.
pub fn check(
    plan: &Plan,
    constraint: &Constraint,
    catalog: &Catalog,
    query: &Query,
) -> ConstraintCheck {
    use CommonsenseKind as C;
    let mut v = Verdict::new();
    match constraint.kind {
        ConstraintKind::Commonsense(C::WithinSandbox) => check_sandbox(plan, catalog, &mut v),
        ConstraintKind::Commonsense(C::CompleteInformation) => check_complete(plan, query, &mut v),
        ConstraintKind::Commonsense(C::WithinCurrentCity) => {
            check_current_city(plan, query, catalog, &mut v)
        }
        ConstraintKind::Commonsense(C::ReasonableCityRoute) => {
            check_route(plan, query, catalog, &mut v)
        }
        ConstraintKind::Commonsense(C::NonConflictingTransportation) => {
            check_non_conflicting(plan, catalog, &mut v)
        }
        ConstraintKind::Commonsense(C::DiverseRestaurants) => {
            check_diverse(plan, TaskKind::Dining, &mut v)
        }
        ConstraintKind::Commonsense(C::DiverseAttractions) => {
            check_diverse(plan, TaskKind::Attractions, &mut v)
        }
        ConstraintKind::Commonsense(C::MinimumNightsStay) => {
            check_min_nights(plan, catalog, &mut v)
        }
        ConstraintKind::Hard(_) | ConstraintKind::Preference => {
            check_tags(plan, constraint, catalog, &mut v)
        }
    }
    ConstraintCheck {
        constraint_id: constraint.id.clone(),
        plan_id: plan.query_id.clone(),
        kind: constraint.kind,
        passed: v.failures.is_empty(),
        detail: v.failures.join("; "),
        implicated: v.implicated.into_iter().collect(),
    }
}

/// Checks every hard-severity constraint of the set. Soft preferences are
/// scored during planning and not evaluated here.
pub fn evaluate_plan(
    plan: &Plan,
    constraints: &ConstraintSet,
    catalog: &Catalog,
    query: &Query,
) -> Vec<ConstraintCheck> {
    constraints
        .all
        .iter()
        .filter(|c| c.is_hard())
        .map(|c| check(plan, c, catalog, query))
        .collect()
}

/// Checks for one planning result; an undelivered plan fails everything.
pub fn evaluate_result(
    result: &PlanResult,
    catalog: &Catalog,
    query: &Query,
) -> Vec<ConstraintCheck> {
    match &result.status {
        PlanStatus::Delivered { plan } => evaluate_plan(plan, &result.constraints, catalog, query),
        PlanStatus::Failed { .. } => result
            .constraints
            .all
            .iter()
            .filter(|c| c.is_hard())
            .map(|c| ConstraintCheck {
                constraint_id: c.id.clone(),
                plan_id: result.query_id.clone(),
                kind: c.kind,
                passed: false,
                detail: "no plan delivered".into(),
                implicated: Vec::new(),
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Rates

/// An exact rate in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rate(pub Ratio<u64>);

impl Rate {
    pub const ZERO: Rate = Rate(Ratio::new_raw(0, 1));

    /// `num / den`, with an empty denominator defined as 0.
    pub fn new(num: u64, den: u64) -> Rate {
        if den == 0 {
            Rate::ZERO
        } else {
            Rate(Ratio::new(num, den))
        }
    }

    pub fn value(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    pub fn percent(self) -> f64 {
        self.value() * 100.0
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.percent())
    }
}

#[derive(Serialize, Deserialize)]
struct RateRepr {
    num: u64,
    den: u64,
    value: f64,
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RateRepr {
            num: *self.0.numer(),
            den: *self.0.denom(),
            value: self.value(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = RateRepr::deserialize(d)?;
        if r.num > r.den {
            return Err(serde::de::Error::custom(
                "rate numerator exceeds denominator",
            ));
        }
        Ok(Rate::new(r.num, r.den))
    }
}

/// Constraints passed over constraints applied, pooled across plans.
pub fn micro_pass_rate<P: AsRef<[ConstraintCheck]>>(plans: &[P]) -> Rate {
    let total: u64 = plans.iter().map(|p| p.as_ref().len() as u64).sum();
    let passed: u64 = plans
        .iter()
        .map(|p| p.as_ref().iter().filter(|c| c.passed).count() as u64)
        .sum();
    Rate::new(passed, total)
}

/// Fraction of plans passing every one of their checks.
pub fn macro_pass_rate<P: AsRef<[ConstraintCheck]>>(plans: &[P]) -> Rate {
    let passing = plans
        .iter()
        .filter(|p| p.as_ref().iter().all(|c| c.passed))
        .count() as u64;
    Rate::new(passing, plans.len() as u64)
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TypeCount {
    pub applied: u64,
    pub violated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub queries: u64,
    pub delivered: u64,
    pub delivery_rate: Rate,
    pub commonsense_micro: Rate,
    pub commonsense_macro: Rate,
    pub hard_micro: Rate,
    pub hard_macro: Rate,
    pub final_pass_rate: Rate,
    /// Applied and violated counts per constraint type name.
    pub per_type: BTreeMap<String, TypeCount>,
    pub token_usage: TokenUsage,
    pub total_wall_time_ms: u64,
}

fn category_slice(checks: &[ConstraintCheck], commonsense: bool) -> Vec<ConstraintCheck> {
    checks
        .iter()
        .filter(|c| matches!(c.kind, ConstraintKind::Commonsense(_)) == commonsense)
        .filter(|c| !matches!(c.kind, ConstraintKind::Preference))
        .cloned()
        .collect()
}

/// Aggregates per-plan checks (one entry per result, same order) into the
/// headline metrics.
pub fn report(results: &[PlanResult], checks: &[Vec<ConstraintCheck>]) -> MetricsReport {
    assert_eq!(results.len(), checks.len(), "one check list per result");
    let queries = results.len() as u64;
    let delivered = results.iter().filter(|r| r.is_delivered()).count() as u64;
    let commonsense: Vec<Vec<ConstraintCheck>> =
        checks.iter().map(|c| category_slice(c, true)).collect();
    let hard: Vec<Vec<ConstraintCheck>> = checks.iter().map(|c| category_slice(c, false)).collect();
    let final_passing = results
        .iter()
        .zip(checks)
        .filter(|(r, c)| r.is_delivered() && c.iter().all(|c| c.passed))
        .count() as u64;

    let mut per_type: BTreeMap<String, TypeCount> = BTreeMap::new();
    for c in checks.iter().flatten() {
        let entry = per_type.entry(c.kind.name().to_string()).or_default();
        entry.applied += 1;
        entry.violated += u64::from(!c.passed);
    }

    MetricsReport {
        queries,
        delivered,
        delivery_rate: Rate::new(delivered, queries),
        commonsense_micro: micro_pass_rate(&commonsense),
        commonsense_macro: macro_pass_rate(&commonsense),
        hard_micro: micro_pass_rate(&hard),
        hard_macro: macro_pass_rate(&hard),
        final_pass_rate: Rate::new(final_passing, queries),
        per_type,
        token_usage: results.iter().map(|r| r.token_usage).sum(),
        total_wall_time_ms: results.iter().map(|r| r.wall_time_ms).sum(),
    }
}

impl MetricsReport {
    /// Plain-text table with one column per headline metric, in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let header = [
            "Delivery",
            "Commonsense Micro",
            "Commonsense Macro",
            "Hard Micro",
            "Hard Macro",
            "Final",
        ];
        let values = [
            self.delivery_rate,
            self.commonsense_micro,
            self.commonsense_macro,
            self.hard_micro,
            self.hard_macro,
            self.final_pass_rate,
        ];
        let widths: Vec<usize> = header.iter().map(|h| h.len().max(6)).collect();
        let row = |cells: Vec<String>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let _ = writeln!(
            out,
            "{}",
            row(header.iter().map(|h| h.to_string()).collect())
        );
        let _ = writeln!(
            out,
            "{}",
            widths
                .iter()
                .map(|w| "-".repeat(*w))
                .collect::<Vec<_>>()
                .join("-+-")
        );
        let _ = writeln!(
            out,
            "{}",
            row(values.iter().map(|v| v.to_string()).collect())
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "queries: {}  delivered: {}",
            self.queries, self.delivered
        );
        let _ = writeln!(
            out,
            "tokens: {} in / {} out over {} calls",
            self.token_usage.input_tokens,
            self.token_usage.output_tokens,
            self.token_usage.call_count
        );
        if !self.per_type.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<32} {:>8} {:>8}",
                "constraint", "applied", "violated"
            );
            for (name, count) in &self.per_type {
                let _ = writeln!(out, "{name:<32} {:>8} {:>8}", count.applied, count.violated);
            }
        }
        out
    }
}

/// Violation rows (`query_id,constraint_id,kind,category,detail`) as CSV.
pub fn violations_csv(checks: &[Vec<ConstraintCheck>]) -> Result<String, csv::Error> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["query_id", "constraint_id", "kind", "category", "detail"])?;
    for c in checks.iter().flatten().filter(|c| !c.passed) {
        writer.write_record([
            c.plan_id.as_str(),
            c.constraint_id.as_str(),
            c.kind.name(),
            c.kind.category(),
            c.detail.as_str(),
        ])?;
    }
    let bytes = writer.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
