//! Import of TravelPlanner-style sandbox CSVs into a [`Catalog`].
//!
//! Expected files (any missing file yields an empty category):
//! `flights.csv`, `accommodations.csv`, `restaurants.csv`, `attractions.csv`.
//! Prices in those files are whole currency units and are scaled to cents.

use std::fs::File;
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{Accommodation, Attraction, Catalog, CatalogError, Restaurant, TransportOption};
use crate::domain::{Money, RoomType, TransportMode};

#[derive(Debug, Deserialize)]
struct FlightRow {
    #[serde(rename = "Flight Number")]
    flight_number: String,
    #[serde(rename = "Price")]
    price: f64,
    #[serde(rename = "FlightDate")]
    flight_date: String,
    #[serde(rename = "OriginCityName")]
    origin: String,
    #[serde(rename = "DestCityName")]
    destination: String,
}

#[derive(Debug, Deserialize)]
struct AccommodationRow {
    #[serde(rename = "NAME")]
    name: String,
    price: f64,
    #[serde(rename = "room type")]
    room_type: String,
    #[serde(default)]
    house_rules: String,
    #[serde(rename = "minimum nights")]
    minimum_nights: f64,
    #[serde(rename = "maximum occupancy")]
    maximum_occupancy: f64,
    #[serde(rename = "review rate number", default)]
    rating: Option<f64>,
    city: String,
}

#[derive(Debug, Deserialize)]
struct RestaurantRow {
    #[serde(rename = "Name")]
    name: String,
    #[serde(rename = "Average Cost")]
    average_cost: f64,
    #[serde(rename = "Cuisines")]
    cuisines: String,
    #[serde(rename = "Aggregate Rating")]
    rating: f64,
    #[serde(rename = "City")]
    city: String,
}

#[derive(Debug, Deserialize)]
struct AttractionRow {
    #[serde(rename = "Name")]
    name: String,
    #[serde(rename = "City")]
    city: String,
}

fn to_cents(amount: f64) -> Money {
    Money((amount * 100.0).round() as i64)
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CatalogError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file =
        File::open(path).map_err(|e| CatalogError::Io(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| CatalogError::Csv(format!("{} row {}: {e}", path.display(), i + 2)))
        })
        .collect()
}

fn parse_room_type(raw: &str) -> Result<RoomType, CatalogError> {
    let lower = raw.to_ascii_lowercase();
    if lower.starts_with("entire") {
        Ok(RoomType::EntireHome)
    } else if lower.starts_with("private") {
        Ok(RoomType::PrivateRoom)
    } else if lower.starts_with("shared") {
        Ok(RoomType::SharedRoom)
    } else {
        Err(CatalogError::Csv(format!("unknown room type {raw:?}")))
    }
}

fn split_list(raw: &str, sep: &str) -> Vec<String> {
    raw.split(sep)
        .map(str::trim)
        .filter(|s| !s.is_empty() && *s != "nan")
        .map(str::to_string)
        .collect()
}

/// Builds a catalog from a directory of TravelPlanner-style CSV files.
pub fn import_csv_dir(dir: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let dir = dir.as_ref();

    let transport = read_rows::<FlightRow>(&dir.join("flights.csv"))?
        .into_iter()
        .map(|r| {
            let date = NaiveDate::parse_from_str(&r.flight_date, "%Y-%m-%d")
                .map_err(|e| CatalogError::Csv(format!("flight {}: {e}", r.flight_number)))?;
            Ok(TransportOption {
                id: r.flight_number,
                origin: r.origin,
                destination: r.destination,
                mode: TransportMode::Flight,
                departure_date: date,
                arrival_date: date,
                price: to_cents(r.price),
            })
        })
        .collect::<Result<Vec<_>, CatalogError>>()?;

    let accommodations = read_rows::<AccommodationRow>(&dir.join("accommodations.csv"))?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(Accommodation {
                id: format!("H{:05}", i + 1),
                city: r.city,
                name: r.name,
                price_per_night: to_cents(r.price),
                room_type: parse_room_type(&r.room_type)?,
                house_rules: split_list(&r.house_rules, "&"),
                min_nights: (r.minimum_nights.max(1.0)) as u32,
                max_occupancy: (r.maximum_occupancy.max(1.0)) as u32,
                rating: r.rating,
            })
        })
        .collect::<Result<Vec<_>, CatalogError>>()?;

    let dining = read_rows::<RestaurantRow>(&dir.join("restaurants.csv"))?
        .into_iter()
        .enumerate()
        .map(|(i, r)| Restaurant {
            id: format!("R{:05}", i + 1),
            city: r.city,
            name: r.name,
            cuisines: split_list(&r.cuisines, ","),
            avg_cost: to_cents(r.average_cost),
            rating: r.rating,
        })
        .collect();

    let attractions = read_rows::<AttractionRow>(&dir.join("attractions.csv"))?
        .into_iter()
        .enumerate()
        .map(|(i, r)| Attraction {
            id: format!("A{:05}", i + 1),
            city: r.city,
            name: r.name,
            price: Money::ZERO,
        })
        .collect();

    Catalog::new(transport, accommodations, dining, attractions)
}
