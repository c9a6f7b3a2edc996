//! The resource sandbox: transport, accommodation, dining and attraction
//! options every plan element must be drawn from.

mod csv_import;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_import::import_csv_dir;

use crate::domain::{
    CommonsenseKind, Constraint, ConstraintKind, ConstraintParams, HardKind, Money, Query,
    RoomType, Scope, Severity, TaskKind, TransportMode,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportOption {
    pub id: String,
    pub origin: String,
    pub destination: String,
    pub mode: TransportMode,
    pub departure_date: NaiveDate,
    pub arrival_date: NaiveDate,
    pub price: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accommodation {
    pub id: String,
    pub city: String,
    pub name: String,
    pub price_per_night: Money,
    pub room_type: RoomType,
    #[serde(default)]
    pub house_rules: Vec<String>,
    pub min_nights: u32,
    pub max_occupancy: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
}

impl Accommodation {
    /// Rooms needed to house the party.
    pub fn rooms_for(&self, party_size: u32) -> u32 {
        party_size.div_ceil(self.max_occupancy.max(1))
    }

    /// Whether the listing's rules permit `activity` (e.g. `"parties"`).
    pub fn allows(&self, activity: &str) -> bool {
        !self.house_rules.iter().any(|rule| {
            rule.strip_prefix("No ")
                .is_some_and(|banned| banned.trim().eq_ignore_ascii_case(activity.trim()))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Restaurant {
    pub id: String,
    pub city: String,
    pub name: String,
    pub cuisines: Vec<String>,
    pub avg_cost: Money,
    pub rating: f64,
}

impl Restaurant {
    pub fn serves_any(&self, wanted: &[String]) -> bool {
        self.cuisines
            .iter()
            .any(|c| wanted.iter().any(|w| w.eq_ignore_ascii_case(c)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attraction {
    pub id: String,
    pub city: String,
    pub name: String,
    pub price: Money,
}

/// A borrowed reference to one catalog option of any category.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptionRef<'a> {
    Transport(&'a TransportOption),
    Accommodation(&'a Accommodation),
    Dining(&'a Restaurant),
    Attraction(&'a Attraction),
}

impl<'a> OptionRef<'a> {
    pub fn id(&self) -> &'a str {
        match self {
            OptionRef::Transport(o) => &o.id,
            OptionRef::Accommodation(o) => &o.id,
            OptionRef::Dining(o) => &o.id,
            OptionRef::Attraction(o) => &o.id,
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            OptionRef::Transport(_) => TaskKind::Transportation,
            OptionRef::Accommodation(_) => TaskKind::Accommodation,
            OptionRef::Dining(_) => TaskKind::Dining,
            OptionRef::Attraction(_) => TaskKind::Attractions,
        }
    }

    /// The listed per-unit price.
    pub fn price(&self) -> Money {
        match self {
            OptionRef::Transport(o) => o.price,
            OptionRef::Accommodation(o) => o.price_per_night,
            OptionRef::Dining(o) => o.avg_cost,
            OptionRef::Attraction(o) => o.price,
        }
    }

    /// City where the option is consumed; for transport, the arrival city.
    pub fn city(&self) -> &'a str {
        match self {
            OptionRef::Transport(o) => &o.destination,
            OptionRef::Accommodation(o) => &o.city,
            OptionRef::Dining(o) => &o.city,
            OptionRef::Attraction(o) => &o.city,
        }
    }

    pub fn rating(&self) -> Option<f64> {
        match self {
            OptionRef::Accommodation(o) => o.rating,
            OptionRef::Dining(o) => Some(o.rating),
            _ => None,
        }
    }

    pub fn as_transport(&self) -> Option<&'a TransportOption> {
        match self {
            OptionRef::Transport(o) => Some(o),
            _ => None,
        }
    }

    pub fn as_accommodation(&self) -> Option<&'a Accommodation> {
        match self {
            OptionRef::Accommodation(o) => Some(o),
            _ => None,
        }
    }

    pub fn as_restaurant(&self) -> Option<&'a Restaurant> {
        match self {
            OptionRef::Dining(o) => Some(o),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogFile {
    schema: u32,
    #[serde(default)]
    transport: Vec<TransportOption>,
    #[serde(default)]
    accommodations: Vec<Accommodation>,
    #[serde(default)]
    dining: Vec<Restaurant>,
    #[serde(default)]
    attractions: Vec<Attraction>,
}

/// The validated, immutable resource set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CatalogFile", into = "CatalogFile")]
pub struct Catalog {
    transport: Vec<TransportOption>,
    accommodations: Vec<Accommodation>,
    dining: Vec<Restaurant>,
    attractions: Vec<Attraction>,
    index: [HashMap<String, usize>; 4],
}

impl TryFrom<CatalogFile> for Catalog {
    type Error = CatalogError;
    fn try_from(file: CatalogFile) -> Result<Self, Self::Error> {
        if file.schema != SCHEMA_VERSION {
            return Err(CatalogError::UnsupportedSchema(file.schema));
        }
        Catalog::new(
            file.transport,
            file.accommodations,
            file.dining,
            file.attractions,
        )
    }
}

impl From<Catalog> for CatalogFile {
    fn from(c: Catalog) -> Self {
        CatalogFile {
            schema: SCHEMA_VERSION,
            transport: c.transport,
            accommodations: c.accommodations,
            dining: c.dining,
            attractions: c.attractions,
        }
    }
}

fn task_slot(task: TaskKind) -> usize {
    match task {
        TaskKind::Transportation => 0,
        TaskKind::Accommodation => 1,
        TaskKind::Dining => 2,
        TaskKind::Attractions => 3,
    }
}

fn index_ids<'a>(
    task: TaskKind,
    items: impl Iterator<Item = (&'a str, Money)>,
) -> Result<HashMap<String, usize>, CatalogError> {
    let mut index = HashMap::new();
    for (pos, (id, price)) in items.enumerate() {
        if price.is_negative() {
            return Err(CatalogError::NegativePrice {
                task,
                id: id.to_string(),
                price,
            });
        }
        if index.insert(id.to_string(), pos).is_some() {
            return Err(CatalogError::DuplicateId {
                task,
                id: id.to_string(),
            });
        }
    }
    Ok(index)
}

impl Catalog {
    pub fn new(
        transport: Vec<TransportOption>,
        accommodations: Vec<Accommodation>,
        dining: Vec<Restaurant>,
        attractions: Vec<Attraction>,
    ) -> Result<Self, CatalogError> {
        let index = [
            index_ids(
                TaskKind::Transportation,
                transport.iter().map(|o| (o.id.as_str(), o.price)),
            )?,
            index_ids(
                TaskKind::Accommodation,
                accommodations
                    .iter()
                    .map(|o| (o.id.as_str(), o.price_per_night)),
            )?,
            index_ids(
                TaskKind::Dining,
                dining.iter().map(|o| (o.id.as_str(), o.avg_cost)),
            )?,
            index_ids(
                TaskKind::Attractions,
                attractions.iter().map(|o| (o.id.as_str(), o.price)),
            )?,
        ];
        for a in &accommodations {
            if a.min_nights == 0 {
                return Err(CatalogError::Invalid(format!(
                    "{}: min_nights must be >= 1",
                    a.id
                )));
            }
            if a.max_occupancy == 0 {
                return Err(CatalogError::Invalid(format!(
                    "{}: max_occupancy must be >= 1",
                    a.id
                )));
            }
        }
        for t in &transport {
            if t.arrival_date < t.departure_date {
                return Err(CatalogError::Invalid(format!(
                    "{}: arrives before it departs",
                    t.id
                )));
            }
        }
        Ok(Catalog {
            transport,
            accommodations,
            dining,
            attractions,
            index,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, CatalogError> {
        serde_json::from_str::<Catalog>(text).map_err(|e| CatalogError::from_json(e, text))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn transport(&self) -> &[TransportOption] {
        &self.transport
    }

    pub fn accommodations(&self) -> &[Accommodation] {
        &self.accommodations
    }

    pub fn dining(&self) -> &[Restaurant] {
        &self.dining
    }

    pub fn attractions(&self) -> &[Attraction] {
        &self.attractions
    }

    pub fn len(&self, task: TaskKind) -> usize {
        self.index[task_slot(task)].len()
    }

    pub fn is_empty(&self) -> bool {
        TaskKind::ALL.iter().all(|t| self.len(*t) == 0)
    }

    pub fn lookup(&self, task: TaskKind, id: &str) -> Option<OptionRef<'_>> {
        let pos = *self.index[task_slot(task)].get(id)?;
        Some(match task {
            TaskKind::Transportation => OptionRef::Transport(&self.transport[pos]),
            TaskKind::Accommodation => OptionRef::Accommodation(&self.accommodations[pos]),
            TaskKind::Dining => OptionRef::Dining(&self.dining[pos]),
            TaskKind::Attractions => OptionRef::Attraction(&self.attractions[pos]),
        })
    }

    pub fn options(&self, task: TaskKind) -> Vec<OptionRef<'_>> {
        match task {
            TaskKind::Transportation => self.transport.iter().map(OptionRef::Transport).collect(),
            TaskKind::Accommodation => self
                .accommodations
                .iter()
                .map(OptionRef::Accommodation)
                .collect(),
            TaskKind::Dining => self.dining.iter().map(OptionRef::Dining).collect(),
            TaskKind::Attractions => self.attractions.iter().map(OptionRef::Attraction).collect(),
        }
    }
}

/// Reads and validates a `catalog.json` file.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| CatalogError::Io(format!("{}: {e}", path.display())))?;
    Catalog::from_json_str(&text)
}

/// Whether a transport option is a leg this query can use: outbound on the
/// start date or return on the end date.
pub fn is_trip_leg(option: &TransportOption, query: &Query) -> bool {
    is_outbound_leg(option, query) || is_return_leg(option, query)
}

pub fn is_outbound_leg(option: &TransportOption, query: &Query) -> bool {
    option.origin == query.origin
        && option.destination == query.destination
        && option.departure_date == query.start_date
}

pub fn is_return_leg(option: &TransportOption, query: &Query) -> bool {
    option.origin == query.destination
        && option.destination == query.origin
        && option.departure_date == query.end_date
}

/// Whether one option meets one hard local constraint on its own. Constraints
/// that only make sense over a combination of options (diversity,
/// non-conflicting legs) never exclude a single option.
pub fn option_satisfies(option: &OptionRef<'_>, constraint: &Constraint, query: &Query) -> bool {
    use ConstraintParams as P;
    match (&constraint.kind, &constraint.params, option) {
        (
            ConstraintKind::Hard(HardKind::Cuisine),
            P::Cuisine { cuisines },
            OptionRef::Dining(r),
        ) => r.serves_any(cuisines),
        (
            ConstraintKind::Hard(HardKind::RoomType),
            P::RoomType { room_type },
            OptionRef::Accommodation(a),
        ) => a.room_type == *room_type,
        (
            ConstraintKind::Hard(HardKind::RoomRule),
            P::RoomRule { allowed },
            OptionRef::Accommodation(a),
        ) => allowed.iter().all(|act| a.allows(act)),
        (
            ConstraintKind::Hard(HardKind::Transportation),
            P::Transportation { modes },
            OptionRef::Transport(t),
        ) => modes.contains(&t.mode),
        (
            ConstraintKind::Commonsense(CommonsenseKind::MinimumNightsStay),
            _,
            OptionRef::Accommodation(a),
        ) => a.min_nights <= query.nights(),
        (ConstraintKind::Preference, P::MinRating { rating, .. }, o) => {
            o.rating().is_some_and(|r| r >= *rating)
        }
        _ => true,
    }
}

/// Options of `task` consistent with the query's cities and dates and with
/// every hard local constraint in `locals`. Soft constraints never filter.
/// An empty result signals local infeasibility.
pub fn filter_options<'a>(
    catalog: &'a Catalog,
    task: TaskKind,
    query: &Query,
    locals: &[Constraint],
) -> Vec<OptionRef<'a>> {
    let active: Vec<&Constraint> = locals
        .iter()
        .filter(|c| c.severity == Severity::Hard && c.scope == Scope::Local(task))
        .collect();
    catalog
        .options(task)
        .into_iter()
        .filter(|o| match o {
            OptionRef::Transport(t) => is_trip_leg(t, query),
            other => other.city() == query.destination,
        })
        .filter(|o| active.iter().all(|c| option_satisfies(o, c, query)))
        .collect()
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog parse error at line {line}, column {column}: {message}\n  | {context}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
        context: String,
    },
    #[error("duplicate {task} id {id:?}")]
    DuplicateId { task: TaskKind, id: String },
    #[error("negative price {price} on {task} option {id:?}")]
    NegativePrice {
        task: TaskKind,
        id: String,
        price: Money,
    },
    #[error("unsupported catalog schema version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedSchema(u32),
    #[error("invalid catalog: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("csv import error: {0}")]
    Csv(String),
}

impl CatalogError {
    fn from_json(err: serde_json::Error, text: &str) -> Self {
        // Validation failures surface through serde as custom errors; keep
        // their message but still point at the location serde reports.
        let line = err.line();
        let context = text
            .lines()
            .nth(line.saturating_sub(1))
            .unwrap_or_default()
            .trim()
            .chars()
            .take(120)
            .collect();
        Self::Parse {
            line,
            column: err.column(),
            message: err.to_string(),
            context,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = include_str!("../../fixtures/tiny.json");

    #[test]
    fn tiny_fixture_counts() {
        let c = Catalog::from_json_str(TINY).unwrap();
        assert_eq!(c.len(TaskKind::Transportation), 2);
        assert_eq!(c.len(TaskKind::Accommodation), 2);
        assert_eq!(c.len(TaskKind::Dining), 3);
        assert_eq!(c.len(TaskKind::Attractions), 3);
    }

    #[test]
    fn duplicate_hotel_id_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(TINY).unwrap();
        let hotels = v["accommodations"].as_array_mut().unwrap();
        let id = hotels[0]["id"].clone();
        hotels[1]["id"] = id;
        let err = Catalog::from_json_str(&v.to_string()).unwrap_err();
        assert!(
            err.to_string().contains("duplicate accommodation id"),
            "{err}"
        );
    }

    #[test]
    fn negative_price_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(TINY).unwrap();
        v["attractions"][0]["price"] = serde_json::json!(-5);
        let err = Catalog::from_json_str(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("negative price"), "{err}");
    }

    #[test]
    fn parse_error_reports_line() {
        let broken = TINY.replacen("\"transport\"", "\"transport\" oops", 1);
        match Catalog::from_json_str(&broken).unwrap_err() {
            CatalogError::Parse { line, context, .. } => {
                assert!(line > 1);
                assert!(context.contains("oops"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_schema_version() {
        let mut v: serde_json::Value = serde_json::from_str(TINY).unwrap();
        v["schema"] = serde_json::json!(2);
        assert!(Catalog::from_json_str(&v.to_string()).is_err());
    }

    #[test]
    fn house_rule_tags() {
        let h = Accommodation {
            id: "h".into(),
            city: "c".into(),
            name: "n".into(),
            price_per_night: Money(1),
            room_type: RoomType::PrivateRoom,
            house_rules: vec!["No parties".into(), "No smoking".into()],
            min_nights: 1,
            max_occupancy: 2,
            rating: None,
        };
        assert!(!h.allows("parties"));
        assert!(h.allows("pets"));
        assert_eq!(h.rooms_for(3), 2);
    }
}
