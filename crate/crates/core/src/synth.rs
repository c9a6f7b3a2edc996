//! Seeded generators of synthetic catalogs, queries and mock rule tables,
//! used by the test suites, the benchmark and the `synth` command.

use std::fs;
use std::io;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::catalog::{Accommodation, Attraction, Catalog, Restaurant, TransportOption};
use crate::config::{BudgetShares, PlannerConfig};
use crate::domain::{CommonsenseKind, Money, Query, RoomType, TaskKind, TransportMode};
use crate::llm::{MockRule, MockRules};

pub const ORIGIN: &str = "Harbor City";
const CUISINES: [&str; 8] = [
    "Italian", "Thai", "Mexican", "Japanese", "Indian", "French", "Chinese", "American",
];
const ACTIVITIES: [&str; 5] = [
    "parties",
    "smoking",
    "pets",
    "visitors",
    "children under 10",
];
const ROOM_TYPES: [RoomType; 3] = [
    RoomType::EntireHome,
    RoomType::PrivateRoom,
    RoomType::SharedRoom,
];
const SCHEDULED: [TransportMode; 3] = [
    TransportMode::Flight,
    TransportMode::Train,
    TransportMode::Bus,
];

/// Response used for prompts no rule matches: no extracted constraints and
/// no proposals.
pub fn default_response() -> serde_json::Value {
    json!({"constraints": [], "candidates": []})
}

/// A generated workload: one catalog shared by all queries, plus the mock
/// rules that answer the backend calls those queries make.
#[derive(Debug, Clone)]
pub struct SynthBatch {
    pub catalog: Catalog,
    pub queries: Vec<Query>,
    pub mock_rules: MockRules,
    /// Planner settings the batch is meant to run under.
    pub config: PlannerConfig,
}

impl SynthBatch {
    /// Writes `catalog.json`, `mock-rules.json` and `queries/<id>.json`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir.join("queries"))?;
        fs::write(dir.join("catalog.json"), self.catalog.to_json_pretty())?;
        let rules = serde_json::to_string_pretty(&self.mock_rules).map_err(io::Error::other)?;
        fs::write(dir.join("mock-rules.json"), rules)?;
        for q in &self.queries {
            let text = serde_json::to_string_pretty(q).map_err(io::Error::other)?;
            fs::write(dir.join("queries").join(format!("{}.json", q.id)), text)?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Parts {
    transport: Vec<TransportOption>,
    accommodations: Vec<Accommodation>,
    dining: Vec<Restaurant>,
    attractions: Vec<Attraction>,
    queries: Vec<Query>,
    rules: Vec<MockRule>,
}

impl Parts {
    fn finish(self, seed: u64, config: PlannerConfig) -> SynthBatch {
        let catalog = Catalog::new(
            self.transport,
            self.accommodations,
            self.dining,
            self.attractions,
        )
        .expect("generated catalogs are valid");
        SynthBatch {
            catalog,
            queries: self.queries,
            mock_rules: MockRules {
                seed,
                rules: self.rules,
                default: Some(default_response()),
            },
            config,
        }
    }
}

fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2025, 3, 1).expect("valid date")
}

fn cents(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> Money {
    Money(rng.gen_range(lo..=hi) * 100)
}

struct Trip {
    id: String,
    dest: String,
    start: NaiveDate,
    end: NaiveDate,
    days: u32,
    party: u32,
}

impl Trip {
    fn new(id: String, dest: String, start: NaiveDate, days: u32, party: u32) -> Self {
        let end = start + Days::new(u64::from(days - 1));
        Trip {
            id,
            dest,
            start,
            end,
            days,
            party,
        }
    }

    fn nights(&self) -> u32 {
        self.days - 1
    }

    fn leg(
        &self,
        id: String,
        outbound: bool,
        mode: TransportMode,
        price: Money,
    ) -> TransportOption {
        let (from, to, date) = if outbound {
            (ORIGIN, self.dest.as_str(), self.start)
        } else {
            (self.dest.as_str(), ORIGIN, self.end)
        };
        TransportOption {
            id,
            origin: from.into(),
            destination: to.into(),
            mode,
            departure_date: date,
            arrival_date: date,
            price,
        }
    }

    fn query(&self, budget: Money) -> Query {
        Query {
            id: self.id.clone(),
            text: format!(
                "[{}] Plan a {}-day trip from {ORIGIN} to {} for {} traveller(s), {} to {}, budget {}.",
                self.id, self.days, self.dest, self.party, self.start, self.end, budget
            ),
            origin: ORIGIN.into(),
            destination: self.dest.clone(),
            start_date: self.start,
            end_date: self.end,
            party_size: self.party,
            budget,
            raw_preferences: Vec::new(),
        }
    }

    /// Pattern matching the candidate prompt of `task` for this trip only.
    fn task_pattern(&self, task: TaskKind) -> String {
        format!(
            "{task} part of a trip from {ORIGIN} to {}, {}",
            self.dest, self.start
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn hotel(
    id: String,
    city: &str,
    price: Money,
    room_type: RoomType,
    rules: Vec<String>,
    min_nights: u32,
    occupancy: u32,
    rating: f64,
) -> Accommodation {
    Accommodation {
        name: format!("Stay {id}"),
        id,
        city: city.into(),
        price_per_night: price,
        room_type,
        house_rules: rules,
        min_nights,
        max_occupancy: occupancy,
        rating: Some(rating),
    }
}

fn restaurant(
    id: String,
    city: &str,
    cuisines: Vec<String>,
    price: Money,
    rating: f64,
) -> Restaurant {
    Restaurant {
        name: format!("Kitchen {id}"),
        id,
        city: city.into(),
        cuisines,
        avg_cost: price,
        rating,
    }
}

fn attraction(id: String, city: &str, price: Money) -> Attraction {
    Attraction {
        name: format!("Sight {id}"),
        id,
        city: city.into(),
        price,
    }
}

fn top_sum(mut prices: Vec<Money>, k: usize, largest: bool) -> Money {
    prices.sort();
    if largest {
        prices.reverse();
    }
    prices.into_iter().take(k).sum()
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// A batch where every candidate any tree can produce fits the tree's
/// initial budget share, so the first combination tried is feasible.
pub fn feasible_batch(seed: u64, count: usize) -> SynthBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shares = BudgetShares::default();
    let mut parts = Parts::default();
    for i in 0..count {
        let trip = Trip::new(
            format!("feas-{i:03}"),
            format!("Feasville {i:03}"),
            base_date() + Days::new(i as u64),
            rng.gen_range(2..=4),
            rng.gen_range(1..=4),
        );
        let p = &trip.id;
        let n = trip.days as usize;
        let mut constraints = Vec::new();

        let legs_out = rng.gen_range(2..=3);
        let legs_back = rng.gen_range(2..=3);
        for j in 0..legs_out + legs_back {
            let outbound = j < legs_out;
            let mode = *SCHEDULED.choose(&mut rng).expect("non-empty");
            parts.transport.push(trip.leg(
                format!("{p}-T{j}"),
                outbound,
                mode,
                cents(&mut rng, 80, 400),
            ));
        }
        if rng.gen_bool(0.3) {
            let t = &parts.transport[parts.transport.len() - legs_out - legs_back..];
            let mut modes = vec![t[0].mode, t[legs_out].mode];
            modes.dedup();
            constraints.push(json!({"type": "transportation", "values": modes}));
        }

        let hotels = rng.gen_range(3..=5);
        let banned = *ACTIVITIES.choose(&mut rng).expect("non-empty");
        for j in 0..hotels {
            let mut rules: Vec<String> = ACTIVITIES
                .iter()
                .filter(|_| rng.gen_bool(0.3))
                .map(|a| format!("No {a}"))
                .collect();
            if j < 2 {
                rules.retain(|r| r != &format!("No {banned}"));
            }
            let min_nights = if j < 2 {
                rng.gen_range(1..=trip.nights())
            } else {
                rng.gen_range(1..=4)
            };
            parts.accommodations.push(hotel(
                format!("{p}-H{j}"),
                &trip.dest,
                cents(&mut rng, 60, 300),
                *ROOM_TYPES.choose(&mut rng).expect("non-empty"),
                rules,
                min_nights,
                rng.gen_range(1..=4),
                round1(rng.gen_range(3.0..5.0)),
            ));
        }
        let first_hotel = &parts.accommodations[parts.accommodations.len() - hotels];
        let second_hotel = &parts.accommodations[parts.accommodations.len() - hotels + 1];
        if rng.gen_bool(0.4) {
            constraints.push(json!({"type": "room_rule", "values": [banned]}));
        }
        if rng.gen_bool(0.3) && first_hotel.room_type == second_hotel.room_type {
            constraints.push(json!({"type": "room_type", "value": first_hotel.room_type}));
        }
        if rng.gen_bool(0.3) {
            constraints.push(json!({"type": "min_rating", "task": "accommodation", "value": 4.0, "severity": "soft"}));
        }

        let wanted = *CUISINES.choose(&mut rng).expect("non-empty");
        let restaurants = 3 * n + 3;
        for j in 0..restaurants {
            let mut cuisines: Vec<String> = CUISINES
                .choose_multiple(&mut rng, 2)
                .map(|c| c.to_string())
                .collect();
            if j <= 3 * n && !cuisines.iter().any(|c| c == wanted) {
                cuisines[0] = wanted.to_string();
            }
            parts.dining.push(restaurant(
                format!("{p}-R{j:02}"),
                &trip.dest,
                cuisines,
                cents(&mut rng, 8, 60),
                round1(rng.gen_range(3.0..5.0)),
            ));
        }
        if rng.gen_bool(0.5) {
            constraints.push(json!({"type": "cuisine", "values": [wanted]}));
        }
        for j in 0..n + 2 {
            parts.attractions.push(attraction(
                format!("{p}-A{j}"),
                &trip.dest,
                cents(&mut rng, 0, 40),
            ));
        }

        // Upper bounds on what any candidate of each tree can cost.
        let legs = &parts.transport[parts.transport.len() - legs_out - legs_back..];
        let leg_cost = |t: &TransportOption| t.price.times(t.mode.units(trip.party));
        let max_transport = legs[..legs_out]
            .iter()
            .map(leg_cost)
            .max()
            .unwrap_or_default()
            + legs[legs_out..]
                .iter()
                .map(leg_cost)
                .max()
                .unwrap_or_default();
        let max_hotel = parts.accommodations[parts.accommodations.len() - hotels..]
            .iter()
            .map(|h| {
                h.price_per_night
                    .times(h.rooms_for(trip.party) * trip.nights())
            })
            .max()
            .unwrap_or_default();
        let rs = &parts.dining[parts.dining.len() - restaurants..];
        let max_dining = top_sum(
            rs.iter().map(|r| r.avg_cost.times(trip.party)).collect(),
            3 * n,
            true,
        );
        let at = &parts.attractions[parts.attractions.len() - (n + 2)..];
        let max_attr = top_sum(
            at.iter().map(|a| a.price.times(trip.party)).collect(),
            n,
            true,
        );

        let weight_sum: i64 = TaskKind::ALL
            .iter()
            .map(|t| i64::from(shares.weight(*t)))
            .sum();
        let budget = [max_transport, max_hotel, max_dining, max_attr]
            .iter()
            .zip(TaskKind::ALL)
            .map(|(m, t)| {
                let w = i64::from(shares.weight(t));
                (m.cents() * weight_sum + w - 1) / w
            })
            .max()
            .unwrap_or(0);

        let query = trip.query(Money(budget));
        parts.rules.push(MockRule::json(
            format!("[{p}]"),
            json!({ "constraints": constraints }),
        ));
        let mut proposal: Vec<String> = rs.iter().take(3 * n).map(|r| r.id.clone()).collect();
        let mut hallucinated = proposal.clone();
        hallucinated[0] = format!("{p}-R99");
        proposal.reverse();
        parts.rules.push(MockRule::json(
            trip.task_pattern(TaskKind::Dining),
            json!({ "candidates": [hallucinated, proposal] }),
        ));
        parts.queries.push(query);
    }
    parts.finish(seed, PlannerConfig::default())
}

/// A batch whose budgets are one cent below the cheapest complete
/// combination of each query, with several candidates per tree so the
/// coordinator always has untested combinations left.
pub fn infeasible_batch(seed: u64, count: usize) -> SynthBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Parts::default();
    for i in 0..count {
        let trip = Trip::new(
            format!("infeas-{i:03}"),
            format!("Costlyton {i:03}"),
            base_date() + Days::new(i as u64),
            rng.gen_range(2..=3),
            rng.gen_range(1..=3),
        );
        let p = &trip.id;
        let n = trip.days as usize;
        let mut cheapest = Money::ZERO;
        for outbound in [true, false] {
            let mut best: Option<Money> = None;
            for j in 0..rng.gen_range(2..=3) {
                let mode = *SCHEDULED.choose(&mut rng).expect("non-empty");
                let id = format!("{p}-{}{j}", if outbound { "O" } else { "B" });
                let leg = trip.leg(id, outbound, mode, cents(&mut rng, 80, 400));
                let cost = leg.price.times(mode.units(trip.party));
                best = Some(best.map_or(cost, |b| b.min(cost)));
                parts.transport.push(leg);
            }
            cheapest += best.unwrap_or_default();
        }
        let mut best_stay: Option<Money> = None;
        for j in 0..rng.gen_range(2..=4) {
            let h = hotel(
                format!("{p}-H{j}"),
                &trip.dest,
                cents(&mut rng, 60, 300),
                *ROOM_TYPES.choose(&mut rng).expect("non-empty"),
                Vec::new(),
                1,
                rng.gen_range(1..=4),
                round1(rng.gen_range(3.0..5.0)),
            );
            let stay = h
                .price_per_night
                .times(h.rooms_for(trip.party) * trip.nights());
            best_stay = Some(best_stay.map_or(stay, |b| b.min(stay)));
            parts.accommodations.push(h);
        }
        cheapest += best_stay.unwrap_or_default();
        let mut meal_prices = Vec::new();
        for j in 0..3 * n + 2 {
            let cuisine = CUISINES.choose(&mut rng).expect("non-empty").to_string();
            let r = restaurant(
                format!("{p}-R{j:02}"),
                &trip.dest,
                vec![cuisine],
                cents(&mut rng, 8, 60),
                4.0,
            );
            meal_prices.push(r.avg_cost.times(trip.party));
            parts.dining.push(r);
        }
        cheapest += top_sum(meal_prices, 3 * n, false);
        let mut sight_prices = Vec::new();
        for j in 0..n + 2 {
            let a = attraction(format!("{p}-A{j}"), &trip.dest, cents(&mut rng, 0, 40));
            sight_prices.push(a.price.times(trip.party));
            parts.attractions.push(a);
        }
        cheapest += top_sum(sight_prices, n, false);
        parts.queries.push(trip.query(cheapest - Money(1)));
    }
    parts.finish(seed, PlannerConfig::default())
}

/// One small random instance: at most three options per category, one or
/// two days, a budget drawn across the range of possible totals, and
/// proposals that mix real and made-up ids. Meals may repeat a restaurant
/// (three options cannot fill six distinct meal slots), and two-day trips
/// get at most two restaurants and two sights, which keeps the product of
/// the local search spaces within the 81-round limit. Pools hold every
/// local combination.
pub fn small_instance(seed: u64) -> SynthBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let days = if rng.gen_bool(0.6) { 1 } else { 2 };
    let trip = Trip::new(
        format!("small-{seed:04}"),
        "Smallburg".into(),
        base_date(),
        days,
        rng.gen_range(1..=3),
    );
    let p = &trip.id;
    let other = "Elsewhere";
    let elsewhere = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.08) {
            other
        } else {
            trip.dest.as_str()
        }
    };
    let mut parts = Parts::default();
    let modes = [
        TransportMode::Flight,
        TransportMode::Train,
        TransportMode::Bus,
        TransportMode::Taxi,
        TransportMode::SelfDriving,
    ];
    for j in 0..rng.gen_range(2..=3) {
        let outbound = j == 0 || (j == 2 && rng.gen_bool(0.5));
        let mode = *modes.choose(&mut rng).expect("non-empty");
        let mut leg = trip.leg(
            format!("{p}-T{j}"),
            outbound,
            mode,
            cents(&mut rng, 20, 200),
        );
        if rng.gen_bool(0.1) {
            leg.arrival_date = leg.departure_date + Days::new(1);
        }
        if rng.gen_bool(0.08) {
            leg.departure_date = if outbound { trip.end } else { trip.start };
            leg.arrival_date = leg.departure_date;
        }
        parts.transport.push(leg);
    }
    for j in 0..rng.gen_range(1..=3) {
        let rules = ACTIVITIES
            .iter()
            .filter(|_| rng.gen_bool(0.2))
            .map(|a| format!("No {a}"))
            .collect();
        parts.accommodations.push(hotel(
            format!("{p}-H{j}"),
            elsewhere(&mut rng),
            cents(&mut rng, 40, 250),
            *ROOM_TYPES.choose(&mut rng).expect("non-empty"),
            rules,
            if rng.gen_bool(0.8) { 1 } else { 2 },
            rng.gen_range(1..=3),
            round1(rng.gen_range(3.0..5.0)),
        ));
    }
    let per_day_cap = if days == 1 { 3 } else { 2 };
    for j in 0..rng.gen_range(1..=per_day_cap) {
        let cuisines = CUISINES
            .choose_multiple(&mut rng, 3)
            .map(|c| c.to_string())
            .collect();
        parts.dining.push(restaurant(
            format!("{p}-R{j}"),
            elsewhere(&mut rng),
            cuisines,
            cents(&mut rng, 5, 50),
            round1(rng.gen_range(3.0..5.0)),
        ));
    }
    for j in 0..rng.gen_range(days..=per_day_cap) {
        let city = elsewhere(&mut rng);
        parts.attractions.push(attraction(
            format!("{p}-A{j}"),
            city,
            cents(&mut rng, 0, 40),
        ));
    }

    let mut constraints = Vec::new();
    if rng.gen_bool(0.2) {
        constraints.push(json!({"type": "cuisine", "values": CUISINES.choose_multiple(&mut rng, 3).collect::<Vec<_>>()}));
    }
    if rng.gen_bool(0.2) {
        constraints.push(
            json!({"type": "room_type", "value": ROOM_TYPES.choose(&mut rng).expect("non-empty")}),
        );
    }
    if rng.gen_bool(0.2) {
        constraints.push(json!({"type": "room_rule", "values": [ACTIVITIES.choose(&mut rng).expect("non-empty")]}));
    }
    if rng.gen_bool(0.2) {
        let allowed: Vec<&TransportMode> = modes.choose_multiple(&mut rng, 4).collect();
        constraints.push(json!({"type": "transportation", "values": allowed}));
    }

    // Budget drawn between the cheapest and dearest ways to fill each part,
    // ignoring constraints, so both outcomes are common.
    let n = i64::from(trip.days);
    let party = trip.party;
    let span = |costs: Vec<i64>| {
        let lo = costs.iter().copied().min().unwrap_or(0);
        let hi = costs.iter().copied().max().unwrap_or(0);
        (lo, hi)
    };
    let (t_lo, t_hi) = span(
        parts
            .transport
            .iter()
            .map(|t| t.price.times(t.mode.units(party)).cents())
            .collect(),
    );
    let (h_lo, h_hi) = span(
        parts
            .accommodations
            .iter()
            .map(|h| {
                h.price_per_night
                    .times(h.rooms_for(party) * trip.nights())
                    .cents()
            })
            .collect(),
    );
    let (d_lo, d_hi) = span(
        parts
            .dining
            .iter()
            .map(|r| r.avg_cost.times(party).cents())
            .collect(),
    );
    let (a_lo, a_hi) = span(
        parts
            .attractions
            .iter()
            .map(|a| a.price.times(party).cents())
            .collect(),
    );
    let lo = 2 * t_lo + h_lo + 3 * n * d_lo + n * a_lo;
    let hi = 2 * t_hi + h_hi + 3 * n * d_hi + n * a_hi;
    let budget = Money(rng.gen_range(lo * 9 / 10..=hi * 11 / 10 + 1));
    parts.queries.push(trip.query(budget));

    parts.rules.push(MockRule::json(
        format!("[{p}]"),
        json!({ "constraints": constraints }),
    ));
    for task in TaskKind::ALL {
        let ids: Vec<String> = match task {
            TaskKind::Transportation => parts.transport.iter().map(|o| o.id.clone()).collect(),
            TaskKind::Accommodation => parts.accommodations.iter().map(|o| o.id.clone()).collect(),
            TaskKind::Dining => parts.dining.iter().map(|o| o.id.clone()).collect(),
            TaskKind::Attractions => parts.attractions.iter().map(|o| o.id.clone()).collect(),
        };
        let mut proposals = vec![vec![format!("{p}-ghost"), ids[0].clone()]];
        proposals.push(ids.iter().take(2).cloned().collect());
        proposals.push(ids.iter().rev().cloned().collect());
        parts.rules.push(MockRule::json(
            trip.task_pattern(task),
            json!({ "candidates": proposals }),
        ));
    }
    let commonsense = CommonsenseKind::ALL
        .into_iter()
        .filter(|k| *k != CommonsenseKind::DiverseRestaurants)
        .collect();
    let config = PlannerConfig {
        pool_size: 1000,
        max_rounds: 81,
        commonsense,
        ..PlannerConfig::default()
    };
    parts.finish(seed, config)
}

/// Queries where each tree's favourite candidate overshoots the budget
/// together, while a lower-ranked hotel makes the trip affordable. A
/// planner that commits top candidates fails these; one that feeds budget
/// violations back finds the cheaper stay in its second round.
pub fn ablation_batch(seed: u64, count: usize) -> SynthBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Parts::default();
    for i in 0..count {
        let trip = Trip::new(
            format!("abl-{i:03}"),
            format!("Tradeoff Bay {i:03}"),
            base_date() + Days::new(i as u64),
            3,
            1,
        );
        let p = &trip.id;
        let k = rng.gen_range(1..=3);
        let scale = |cents: i64| Money(cents * k);
        // Budget 100000·k; initial shares 30/35/20/15 percent.
        parts.transport.push(trip.leg(
            format!("{p}-T0"),
            true,
            TransportMode::Flight,
            scale(16000),
        ));
        parts.transport.push(trip.leg(
            format!("{p}-T1"),
            false,
            TransportMode::Flight,
            scale(16000),
        ));
        // Luxury stay: 34% of the budget, top rated, meets the rating wish.
        parts.accommodations.push(hotel(
            format!("{p}-H0"),
            &trip.dest,
            scale(17000),
            RoomType::EntireHome,
            Vec::new(),
            1,
            2,
            5.0,
        ));
        // Budget stay: 10% of the budget, poorly rated.
        parts.accommodations.push(hotel(
            format!("{p}-H1"),
            &trip.dest,
            scale(5000),
            RoomType::PrivateRoom,
            Vec::new(),
            1,
            2,
            3.0,
        ));
        for j in 0..9 {
            let cuisine = CUISINES[j % CUISINES.len()].to_string();
            parts.dining.push(restaurant(
                format!("{p}-R{j}"),
                &trip.dest,
                vec![cuisine],
                scale(2000),
                4.2,
            ));
        }
        for j in 0..3 {
            parts
                .attractions
                .push(attraction(format!("{p}-A{j}"), &trip.dest, scale(6000)));
        }
        parts.rules.push(MockRule::json(
            format!("[{p}]"),
            json!({"constraints": [
                {"type": "min_rating", "task": "accommodation", "value": 4.5, "severity": "soft"}
            ]}),
        ));
        parts.queries.push(trip.query(scale(100000)));
    }
    parts.finish(seed, PlannerConfig::default())
}
