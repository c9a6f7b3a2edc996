//! Query parsing, task decoupling and constraint partitioning.
//!
//! Routing of constraints to trees is a fixed table: each constraint type
//! has a single owner tree, or is global when checking it needs the
//! integrated plan.

use chrono::NaiveDate;
use serde::Deserialize;
use thiserror::Error;

use crate::coordination::DependencyEdge;
use crate::domain::{
    CommonsenseKind, Constraint, ConstraintKind, ConstraintParams, ConstraintSet, DomainError,
    HardKind, Money, Query, RoomType, Scope, Severity, TaskKind, TransportMode,
};
use crate::llm::{extract_json_object, BackendError, CompletionBackend};
use crate::prompts::{render, Prompts};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("malformed extraction after re-prompt: {0}")]
    MalformedExtraction(String),
    #[error("constraint {id} of kind {kind} cannot be routed")]
    UnroutableConstraint { id: String, kind: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn hard() -> Severity {
    Severity::Hard
}

fn soft() -> Severity {
    Severity::Soft
}

/// One constraint as emitted by the backend.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ExtractedConstraint {
    Cuisine {
        values: Vec<String>,
        #[serde(default = "hard")]
        severity: Severity,
    },
    RoomType {
        value: RoomType,
        #[serde(default = "hard")]
        severity: Severity,
    },
    RoomRule {
        values: Vec<String>,
        #[serde(default = "hard")]
        severity: Severity,
    },
    Transportation {
        values: Vec<TransportMode>,
        #[serde(default = "hard")]
        severity: Severity,
    },
    MinRating {
        task: TaskKind,
        value: f64,
        #[serde(default = "soft")]
        #[allow(dead_code)]
        severity: Severity,
    },
    Commonsense {
        name: CommonsenseKind,
    },
    /// Accepted for robustness; the query's structured budget always wins.
    Budget {
        #[allow(dead_code)]
        amount: Option<i64>,
    },
}

/// The backend's extraction document.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct ExtractionDoc {
    constraints: Vec<ExtractedConstraint>,
    party_size: Option<u32>,
    start_date: Option<NaiveDate>,
    end_date: Option<NaiveDate>,
    budget: Option<i64>,
}

fn interpret(text: &str) -> Result<ExtractionDoc, String> {
    let json = extract_json_object(text).ok_or_else(|| "no JSON object in response".to_string())?;
    serde_json::from_str::<ExtractionDoc>(json).map_err(|e| e.to_string())
}

fn to_constraints(doc: &ExtractionDoc) -> Result<Vec<Constraint>, String> {
    let mut out = Vec::new();
    for (i, extracted) in doc.constraints.iter().enumerate() {
        let n = i + 1;
        let (id, kind, severity, params) = match extracted {
            ExtractedConstraint::Cuisine { values, severity } => (
                format!("c{n}-cuisine"),
                ConstraintKind::Hard(HardKind::Cuisine),
                *severity,
                ConstraintParams::Cuisine {
                    cuisines: values.clone(),
                },
            ),
            ExtractedConstraint::RoomType { value, severity } => (
                format!("c{n}-room_type"),
                ConstraintKind::Hard(HardKind::RoomType),
                *severity,
                ConstraintParams::RoomType { room_type: *value },
            ),
            ExtractedConstraint::RoomRule { values, severity } => (
                format!("c{n}-room_rule"),
                ConstraintKind::Hard(HardKind::RoomRule),
                *severity,
                ConstraintParams::RoomRule {
                    allowed: values.clone(),
                },
            ),
            ExtractedConstraint::Transportation { values, severity } => (
                format!("c{n}-transportation"),
                ConstraintKind::Hard(HardKind::Transportation),
                *severity,
                ConstraintParams::Transportation {
                    modes: values.clone(),
                },
            ),
            ExtractedConstraint::MinRating { task, value, .. } => (
                format!("c{n}-min_rating"),
                ConstraintKind::Preference,
                Severity::Soft,
                ConstraintParams::MinRating {
                    task: *task,
                    rating: *value,
                },
            ),
            ExtractedConstraint::Commonsense { name } => (
                format!("cs-{}", name.as_str()),
                ConstraintKind::Commonsense(*name),
                Severity::Hard,
                ConstraintParams::None,
            ),
            ExtractedConstraint::Budget { .. } => continue,
        };
        if out.iter().any(|c: &Constraint| c.id == id) {
            continue;
        }
        let scope = route(kind, &params).map_err(|e| e.to_string())?;
        let c = Constraint::new(id, kind, severity, scope, params).map_err(|e| e.to_string())?;
        out.push(c);
    }
    Ok(out)
}

/// Static routing table from constraint type to owning scope.
pub fn route(kind: ConstraintKind, params: &ConstraintParams) -> Result<Scope, ExtractionError> {
    use CommonsenseKind as C;
    Ok(match kind {
        ConstraintKind::Hard(HardKind::Budget) => Scope::Global,
        ConstraintKind::Hard(HardKind::RoomRule | HardKind::RoomType)
        | ConstraintKind::Commonsense(C::MinimumNightsStay) => {
            Scope::Local(TaskKind::Accommodation)
        }
        ConstraintKind::Hard(HardKind::Cuisine)
        | ConstraintKind::Commonsense(C::DiverseRestaurants) => Scope::Local(TaskKind::Dining),
        ConstraintKind::Hard(HardKind::Transportation)
        | ConstraintKind::Commonsense(C::NonConflictingTransportation) => {
            Scope::Local(TaskKind::Transportation)
        }
        ConstraintKind::Commonsense(C::DiverseAttractions) => Scope::Local(TaskKind::Attractions),
        ConstraintKind::Commonsense(
            C::WithinSandbox
            | C::CompleteInformation
            | C::WithinCurrentCity
            | C::ReasonableCityRoute,
        ) => Scope::Global,
        ConstraintKind::Preference => match params {
            ConstraintParams::MinRating { task, .. } => Scope::Local(*task),
            _ => {
                return Err(ExtractionError::UnroutableConstraint {
                    id: String::new(),
                    kind: kind.name().into(),
                })
            }
        },
    })
}

/// Commonsense constraints applied to every query.
pub fn standard_commonsense(kinds: &[CommonsenseKind]) -> Vec<Constraint> {
    kinds
        .iter()
        .map(|k| {
            let kind = ConstraintKind::Commonsense(*k);
            Constraint {
                id: format!("cs-{}", k.as_str()),
                kind,
                severity: Severity::Hard,
                scope: route(kind, &ConstraintParams::None)
                    .expect("commonsense kinds always route"),
                params: ConstraintParams::None,
            }
        })
        .collect()
}

/// Parses the query into constraints through the backend.
///
/// The set always contains the global budget taken from `query.budget`.
/// Dates, party size and budget in the backend's answer are ignored in
/// favour of the structured query fields. A response that fails the
/// extraction schema is re-prompted once.
pub fn parse_query(
    query: &Query,
    backend: &dyn CompletionBackend,
    prompts: &Prompts,
) -> Result<ConstraintSet, ExtractionError> {
    let mut all = vec![Constraint::budget(query.budget)];
    if query.text.trim().is_empty() {
        return decouple_constraints(all);
    }

    let base = render(&prompts.extract, &[("query_text", &query.text)]);
    let mut prompt = base.clone();
    let mut last_error = String::new();
    for _ in 0..2 {
        let answer = backend.complete(&prompt)?;
        match interpret(&answer.text).and_then(|doc| {
            if doc.party_size.is_some_and(|p| p != query.party_size)
                || doc.start_date.is_some_and(|d| d != query.start_date)
                || doc.end_date.is_some_and(|d| d != query.end_date)
                || doc.budget.is_some_and(|b| Money(b) != query.budget)
            {
                log::debug!(
                    "query {}: extracted trip fields overridden by structured query",
                    query.id
                );
            }
            to_constraints(&doc)
        }) {
            Ok(extracted) => {
                all.extend(extracted);
                return decouple_constraints(all);
            }
            Err(e) => {
                last_error = e;
                prompt = format!(
                    "{base}\n\nYour previous answer could not be used ({last_error}). \
                     Reply with the JSON object only."
                );
            }
        }
    }
    Err(ExtractionError::MalformedExtraction(last_error))
}

/// The fixed four-way task decomposition.
pub fn decouple_tasks(_query: &Query) -> Vec<TaskKind> {
    TaskKind::ALL.to_vec()
}

/// Partitions constraints into per-task locals and globals by the routing
/// table, rewriting each constraint's scope to its routed owner.
pub fn decouple_constraints(all: Vec<Constraint>) -> Result<ConstraintSet, ExtractionError> {
    let mut set = ConstraintSet::default();
    for mut c in all {
        c.scope = route(c.kind, &c.params).map_err(|_| ExtractionError::UnroutableConstraint {
            id: c.id.clone(),
            kind: c.kind.name().into(),
        })?;
        c.validate()?;
        match c.scope {
            Scope::Global => set.globals.push(c.clone()),
            Scope::Local(task) => set.locals.entry(task).or_default().push(c.clone()),
        }
        set.all.push(c);
    }
    set.validate()?;
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeSpec {
    pub task: TaskKind,
    pub locals: Vec<Constraint>,
}

/// The set of trees for one query plus their coordination structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestSpec {
    pub trees: Vec<TreeSpec>,
    pub globals: Vec<Constraint>,
    pub dependency_edges: Vec<DependencyEdge>,
}

/// One tree per task with its locals; every pair of trees is linked through
/// the shared budget with unit weight.
pub fn build_forest(query: &Query, set: &ConstraintSet) -> ForestSpec {
    let tasks = decouple_tasks(query);
    let trees = tasks
        .iter()
        .map(|t| TreeSpec {
            task: *t,
            locals: set.locals_for(*t).to_vec(),
        })
        .collect();
    let mut dependency_edges = Vec::new();
    for (i, from) in tasks.iter().enumerate() {
        for to in &tasks[i + 1..] {
            dependency_edges.push(DependencyEdge::new(*from, *to, 1.0));
        }
    }
    ForestSpec {
        trees,
        globals: set.globals.clone(),
        dependency_edges,
    }
}
