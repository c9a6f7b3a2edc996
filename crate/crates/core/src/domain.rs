//! Value types shared by every stage of the planner: queries, constraints,
//! tasks, subplans, integrated plans and money.
//!
//! Everything here is an immutable value. Amounts are integer minor units
//! (cents) so budget arithmetic is exact.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;

/// An amount of money in minor units. Signed so that slack and overrun
/// share one type.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Money(pub i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn cents(self) -> i64 {
        self.0
    }

    pub fn times(self, quantity: u32) -> Money {
        Money(self.0 * i64::from(quantity))
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl SubAssign for Money {
    fn sub_assign(&mut self, rhs: Money) {
        self.0 -= rhs.0;
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Money> for Money {
    fn sum<I: Iterator<Item = &'a Money>>(iter: I) -> Money {
        iter.copied().sum()
    }
}

/// The four planning dimensions, one behavior tree each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Transportation,
    Accommodation,
    Dining,
    Attractions,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Transportation,
        TaskKind::Accommodation,
        TaskKind::Dining,
        TaskKind::Attractions,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Transportation => "transportation",
            TaskKind::Accommodation => "accommodation",
            TaskKind::Dining => "dining",
            TaskKind::Attractions => "attractions",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = DomainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| DomainError::Parse(format!("unknown task kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    Flight,
    Train,
    Bus,
    Taxi,
    SelfDriving,
}

impl TransportMode {
    /// Billable units for a party: seats for scheduled modes, vehicles for
    /// taxis (4 seats) and self-driving (5 seats).
    pub fn units(self, party_size: u32) -> u32 {
        match self {
            TransportMode::Flight | TransportMode::Train | TransportMode::Bus => party_size,
            TransportMode::Taxi => party_size.div_ceil(4),
            TransportMode::SelfDriving => party_size.div_ceil(5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomType {
    EntireHome,
    PrivateRoom,
    SharedRoom,
}

/// A natural-language travel request together with its structured fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub origin: String,
    pub destination: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub party_size: u32,
    pub budget: Money,
    #[serde(default)]
    pub raw_preferences: Vec<String>,
}

impl Query {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.end_date < self.start_date {
            return Err(DomainError::InvalidQuery(format!(
                "end date {} precedes start date {}",
                self.end_date, self.start_date
            )));
        }
        if self.party_size == 0 {
            return Err(DomainError::InvalidQuery(
                "party size must be at least 1".into(),
            ));
        }
        if self.budget.is_negative() {
            return Err(DomainError::InvalidQuery(
                "budget must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Trip length in days, counting both endpoints.
    pub fn num_days(&self) -> u32 {
        let span = (self.end_date - self.start_date).num_days().max(0);
        u32::try_from(span).unwrap_or(u32::MAX - 1) + 1
    }

    pub fn nights(&self) -> u32 {
        self.num_days() - 1
    }

    /// Calendar date of itinerary day `day` (1-based).
    pub fn date_of_day(&self, day: u32) -> NaiveDate {
        self.start_date + chrono::Days::new(u64::from(day.saturating_sub(1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommonsenseKind {
    WithinSandbox,
    CompleteInformation,
    WithinCurrentCity,
    ReasonableCityRoute,
    DiverseRestaurants,
    DiverseAttractions,
    NonConflictingTransportation,
    MinimumNightsStay,
}

impl CommonsenseKind {
    pub const ALL: [CommonsenseKind; 8] = [
        CommonsenseKind::WithinSandbox,
        CommonsenseKind::CompleteInformation,
        CommonsenseKind::WithinCurrentCity,
        CommonsenseKind::ReasonableCityRoute,
        CommonsenseKind::DiverseRestaurants,
        CommonsenseKind::DiverseAttractions,
        CommonsenseKind::NonConflictingTransportation,
        CommonsenseKind::MinimumNightsStay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CommonsenseKind::WithinSandbox => "within_sandbox",
            CommonsenseKind::CompleteInformation => "complete_information",
            CommonsenseKind::WithinCurrentCity => "within_current_city",
            CommonsenseKind::ReasonableCityRoute => "reasonable_city_route",
            CommonsenseKind::DiverseRestaurants => "diverse_restaurants",
            CommonsenseKind::DiverseAttractions => "diverse_attractions",
            CommonsenseKind::NonConflictingTransportation => "non_conflicting_transportation",
            CommonsenseKind::MinimumNightsStay => "minimum_nights_stay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardKind {
    Budget,
    RoomRule,
    Cuisine,
    RoomType,
    Transportation,
}

impl HardKind {
    pub const ALL: [HardKind; 5] = [
        HardKind::Budget,
        HardKind::RoomRule,
        HardKind::Cuisine,
        HardKind::RoomType,
        HardKind::Transportation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HardKind::Budget => "budget",
            HardKind::RoomRule => "room_rule",
            HardKind::Cuisine => "cuisine",
            HardKind::RoomType => "room_type",
            HardKind::Transportation => "transportation",
        }
    }
}

/// Constraint taxonomy: eight commonsense checks, five hard query
/// constraints, and free-form preferences (always soft, scored not checked).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Commonsense(CommonsenseKind),
    Hard(HardKind),
    Preference,
}

impl ConstraintKind {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::Commonsense(c) => c.as_str(),
            ConstraintKind::Hard(h) => h.as_str(),
            ConstraintKind::Preference => "preference",
        }
    }

    pub fn category(self) -> &'static str {
        match self {
            ConstraintKind::Commonsense(_) => "commonsense",
            ConstraintKind::Hard(_) => "hard",
            ConstraintKind::Preference => "preference",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Local(TaskKind),
    Global,
}

/// Typed parameters carried by a constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintParams {
    None,
    Budget {
        amount: Money,
    },
    Cuisine {
        cuisines: Vec<String>,
    },
    RoomType {
        room_type: RoomType,
    },
    /// Activities the party needs the house rules to allow, e.g. `"parties"`
    /// rules out any listing carrying the rule `"No parties"`.
    RoomRule {
        allowed: Vec<String>,
    },
    Transportation {
        modes: Vec<TransportMode>,
    },
    MinRating {
        task: TaskKind,
        rating: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub id: String,
    pub kind: ConstraintKind,
    pub severity: Severity,
    pub scope: Scope,
    pub params: ConstraintParams,
}

impl Constraint {
    pub fn new(
        id: impl Into<String>,
        kind: ConstraintKind,
        severity: Severity,
        scope: Scope,
        params: ConstraintParams,
    ) -> Result<Self, DomainError> {
        let c = Constraint {
            id: id.into(),
            kind,
            severity,
            scope,
            params,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn budget(amount: Money) -> Self {
        Constraint {
            id: "budget".into(),
            kind: ConstraintKind::Hard(HardKind::Budget),
            severity: Severity::Hard,
            scope: Scope::Global,
            params: ConstraintParams::Budget { amount },
        }
    }

    pub fn is_hard(&self) -> bool {
        self.severity == Severity::Hard
    }

    pub fn is_soft(&self) -> bool {
        self.severity == Severity::Soft
    }

    pub fn local_task(&self) -> Option<TaskKind> {
        match self.scope {
            Scope::Local(t) => Some(t),
            Scope::Global => None,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        use ConstraintParams as P;
        let fits = match (self.kind, &self.params) {
            (ConstraintKind::Hard(HardKind::Budget), P::Budget { amount }) => !amount.is_negative(),
            (ConstraintKind::Hard(HardKind::Cuisine), P::Cuisine { cuisines }) => {
                !cuisines.is_empty()
            }
            (ConstraintKind::Hard(HardKind::RoomType), P::RoomType { .. }) => true,
            (ConstraintKind::Hard(HardKind::RoomRule), P::RoomRule { allowed }) => {
                !allowed.is_empty()
            }
            (ConstraintKind::Hard(HardKind::Transportation), P::Transportation { modes }) => {
                !modes.is_empty()
            }
            (ConstraintKind::Commonsense(_), P::None) => true,
            (ConstraintKind::Preference, P::MinRating { rating, .. }) => rating.is_finite(),
            _ => false,
        };
        if !fits {
            return Err(DomainError::InvalidConstraint(format!(
                "{}: parameters do not match kind {}",
                self.id,
                self.kind.name()
            )));
        }
        if self.kind == ConstraintKind::Hard(HardKind::Budget) && self.scope != Scope::Global {
            return Err(DomainError::InvalidConstraint(format!(
                "{}: budget constraints are always global",
                self.id
            )));
        }
        if self.kind == ConstraintKind::Preference && self.severity == Severity::Hard {
            return Err(DomainError::InvalidConstraint(format!(
                "{}: preferences are soft",
                self.id
            )));
        }
        Ok(())
    }
}

/// All constraints of a query, partitioned into per-task locals and
/// globals. The partition is disjoint and covers `all`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub all: Vec<Constraint>,
    pub locals: BTreeMap<TaskKind, Vec<Constraint>>,
    pub globals: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn locals_for(&self, task: TaskKind) -> &[Constraint] {
        self.locals.get(&task).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn budget(&self) -> Option<Money> {
        self.all.iter().find_map(|c| match c.params {
            ConstraintParams::Budget { amount } => Some(amount),
            _ => None,
        })
    }

    pub fn has_commonsense(&self, kind: CommonsenseKind) -> bool {
        self.all
            .iter()
            .any(|c| c.kind == ConstraintKind::Commonsense(kind))
    }

    /// Checks the partition invariant: every constraint of `all` appears
    /// exactly once across `locals` and `globals`, and nothing else does.
    pub fn validate(&self) -> Result<(), DomainError> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (task, list) in &self.locals {
            for c in list {
                if c.scope != Scope::Local(*task) {
                    return Err(DomainError::InvalidPartition(format!(
                        "{} filed under {task} but scoped {:?}",
                        c.id, c.scope
                    )));
                }
                *seen.entry(c.id.as_str()).or_default() += 1;
            }
        }
        for c in &self.globals {
            if c.scope != Scope::Global {
                return Err(DomainError::InvalidPartition(format!(
                    "{} is not global",
                    c.id
                )));
            }
            *seen.entry(c.id.as_str()).or_default() += 1;
        }
        let mut expected: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &self.all {
            *expected.entry(c.id.as_str()).or_default() += 1;
        }
        if let Some((id, _)) = expected.iter().find(|(_, n)| **n > 1) {
            return Err(DomainError::InvalidPartition(format!(
                "duplicate constraint id {id}"
            )));
        }
        if seen != expected {
            return Err(DomainError::InvalidPartition(
                "locals and globals do not partition the constraint list".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubPlanEntry {
    pub day: u32,
    pub resource_id: String,
    pub quantity: u32,
    pub unit_cost: Money,
}

impl SubPlanEntry {
    pub fn cost(&self) -> Money {
        self.unit_cost.times(self.quantity)
    }
}

/// One tree's planning result.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubPlan {
    pub task: TaskKind,
    pub entries: Vec<SubPlanEntry>,
    pub total_cost: Money,
}

impl SubPlan {
    pub fn new(task: TaskKind, entries: Vec<SubPlanEntry>) -> Self {
        let total_cost = entries.iter().map(SubPlanEntry::cost).sum();
        SubPlan {
            task,
            entries,
            total_cost,
        }
    }

    pub fn empty(task: TaskKind) -> Self {
        SubPlan::new(task, Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry_cost_sum(&self) -> Money {
        self.entries.iter().map(SubPlanEntry::cost).sum()
    }

    /// Resource ids in canonical (sorted) order.
    pub fn sorted_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.entries.iter().map(|e| e.resource_id.clone()).collect();
        ids.sort();
        ids
    }

    pub fn first_id(&self) -> Option<&str> {
        self.entries.first().map(|e| e.resource_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DayEntry {
    pub day: u32,
    pub transport: Vec<String>,
    pub breakfast: Option<String>,
    pub lunch: Option<String>,
    pub dinner: Option<String>,
    pub attractions: Vec<String>,
    pub accommodation: Option<String>,
}

impl DayEntry {
    pub fn meals(&self) -> impl Iterator<Item = &str> {
        [&self.breakfast, &self.lunch, &self.dinner]
            .into_iter()
            .filter_map(|m| m.as_deref())
    }
}

/// An integrated end-to-end itinerary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub query_id: String,
    pub days: Vec<DayEntry>,
    pub total_cost: Money,
    pub subplans: Vec<SubPlan>,
}

impl Plan {
    /// Sum of subplan totals; exact integer arithmetic.
    pub fn total_cost(&self) -> Money {
        self.subplans.iter().map(|s| s.total_cost).sum()
    }

    pub fn subplan(&self, task: TaskKind) -> Option<&SubPlan> {
        self.subplans.iter().find(|s| s.task == task)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "defect", rename_all = "snake_case")]
pub enum StructuralDefect {
    UnknownResource {
        task: TaskKind,
        id: String,
    },
    NonContiguousDays {
        days: Vec<u32>,
    },
    SubPlanCostMismatch {
        task: TaskKind,
        stated: Money,
        computed: Money,
    },
    PlanCostMismatch {
        stated: Money,
        computed: Money,
    },
    DuplicateSubPlan {
        task: TaskKind,
    },
    MissingSubPlan {
        task: TaskKind,
    },
}

/// Structural validation of a plan against its invariants and the catalog.
/// Returns every defect found; an empty list means the plan is well formed.
pub fn validate_plan(plan: &Plan, catalog: &Catalog) -> Vec<StructuralDefect> {
    let mut defects = Vec::new();

    let days: Vec<u32> = plan.days.iter().map(|d| d.day).collect();
    if days.iter().enumerate().any(|(i, d)| *d as usize != i + 1) {
        defects.push(StructuralDefect::NonContiguousDays { days });
    }

    for task in TaskKind::ALL {
        match plan.subplans.iter().filter(|s| s.task == task).count() {
            0 => defects.push(StructuralDefect::MissingSubPlan { task }),
            1 => {}
            _ => defects.push(StructuralDefect::DuplicateSubPlan { task }),
        }
    }

    for sub in &plan.subplans {
        let computed = sub.entry_cost_sum();
        if computed != sub.total_cost {
            defects.push(StructuralDefect::SubPlanCostMismatch {
                task: sub.task,
                stated: sub.total_cost,
                computed,
            });
        }
        for e in &sub.entries {
            if catalog.lookup(sub.task, &e.resource_id).is_none() {
                defects.push(StructuralDefect::UnknownResource {
                    task: sub.task,
                    id: e.resource_id.clone(),
                });
            }
        }
    }

    // Ids referenced from the day view must resolve too.
    for day in &plan.days {
        let refs = day
            .transport
            .iter()
            .map(|id| (TaskKind::Transportation, id.as_str()))
            .chain(day.meals().map(|id| (TaskKind::Dining, id)))
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
        for (task, id) in refs {
            let known = catalog.lookup(task, id).is_some();
            let dup = defects.iter().any(|d| {
                matches!(d, StructuralDefect::UnknownResource { task: t, id: i } if *t == task && i == id)
            });
            if !known && !dup {
                defects.push(StructuralDefect::UnknownResource {
                    task,
                    id: id.to_string(),
                });
            }
        }
    }

    let computed = plan.total_cost();
    if computed != plan.total_cost {
        defects.push(StructuralDefect::PlanCostMismatch {
            stated: plan.total_cost,
            computed,
        });
    }
    defects
}

/// Total plan cost, failing when any referenced resource does not resolve.
pub fn total_cost(plan: &Plan, catalog: &Catalog) -> Result<Money, DomainError> {
    let unresolved: Vec<StructuralDefect> = validate_plan(plan, catalog)
        .into_iter()
        .filter(|d| matches!(d, StructuralDefect::UnknownResource { .. }))
        .collect();
    if unresolved.is_empty() {
        Ok(plan.total_cost())
    } else {
        Err(DomainError::Structural(unresolved))
    }
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
    #[error("invalid constraint partition: {0}")]
    InvalidPartition(String),
    #[error("structural defects: {0:?}")]
    Structural(Vec<StructuralDefect>),
    #[error("{0}")]
    Parse(String),
}
