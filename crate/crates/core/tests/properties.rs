use std::collections::{BTreeMap, BTreeSet};

use bforest_core::btree::{rerank, Candidate, CandidatePool};
use bforest_core::catalog::{filter_options, Accommodation, Catalog, Restaurant};
use bforest_core::config::{BudgetShares, HeuristicWeights};
use bforest_core::coordination::{allocate_budget, propagate_update, GlobalState};
use bforest_core::domain::{
    CommonsenseKind, Constraint, ConstraintKind, ConstraintParams, HardKind, Money, Query,
    RoomType, Scope, Severity, SubPlan, SubPlanEntry, TaskKind,
};
use bforest_core::evaluation::{macro_pass_rate, micro_pass_rate, report, ConstraintCheck};
use bforest_core::extraction::{decouple_constraints, route};
use bforest_core::llm::TokenUsage;
use bforest_core::pipeline::{PlanResult, PlanStatus};
use chrono::NaiveDate;
use proptest::prelude::*;

const DEST: &str = "Lakeside";
const ACTIVITIES: [&str; 3] = ["parties", "smoking", "pets"];
const CUISINES: [&str; 4] = ["Thai", "Greek", "Cajun", "Korean"];
const ROOMS: [RoomType; 3] = [
    RoomType::EntireHome,
    RoomType::PrivateRoom,
    RoomType::SharedRoom,
];

fn query(days: u32) -> Query {
    let start = NaiveDate::from_ymd_opt(2025, 6, 1).unwrap();
    Query {
        id: "p".into(),
        text: String::new(),
        origin: "Hilltop".into(),
        destination: DEST.into(),
        start_date: start,
        end_date: start + chrono::Days::new(u64::from(days - 1)),
        party_size: 2,
        budget: Money(100_000),
        raw_preferences: Vec::new(),
    }
}

fn local(id: &str, kind: ConstraintKind, params: ConstraintParams) -> Constraint {
    let scope = route(kind, &params).unwrap();
    Constraint::new(id, kind, Severity::Hard, scope, params).unwrap()
}

#[derive(Debug, Clone)]
struct HotelSpec {
    in_dest: bool,
    room: usize,
    banned: Vec<bool>,
    min_nights: u32,
}

fn hotel_spec() -> impl Strategy<Value = HotelSpec> {
    (
        prop::bool::weighted(0.8),
        0..3usize,
        prop::collection::vec(any::<bool>(), 3),
        1..5u32,
    )
        .prop_map(|(in_dest, room, banned, min_nights)| HotelSpec {
            in_dest,
            room,
            banned,
            min_nights,
        })
}

fn hotels(specs: &[HotelSpec]) -> Vec<Accommodation> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| Accommodation {
            id: format!("h{i}"),
            city: if s.in_dest {
                DEST.into()
            } else {
                "Faraway".into()
            },
            name: format!("Hotel {i}"),
            price_per_night: Money(10_000),
            room_type: ROOMS[s.room],
            house_rules: ACTIVITIES
                .iter()
                .zip(&s.banned)
                .filter(|(_, b)| **b)
                .map(|(a, _)| format!("No {a}"))
                .collect(),
            min_nights: s.min_nights,
            max_occupancy: 2,
            rating: None,
        })
        .collect()
}

/// The hotel constraints a generated case applies, as plain data.
#[derive(Debug, Clone)]
struct HotelWish {
    room: Option<usize>,
    allowed: Vec<usize>,
    min_nights: bool,
}

fn hotel_wish() -> impl Strategy<Value = HotelWish> {
    (
        prop::option::of(0..3usize),
        prop::collection::btree_set(0..3usize, 0..3),
        any::<bool>(),
    )
        .prop_map(|(room, allowed, min_nights)| HotelWish {
            room,
            allowed: allowed.into_iter().collect(),
            min_nights,
        })
}

fn wish_constraints(w: &HotelWish) -> Vec<Constraint> {
    let mut out = Vec::new();
    if let Some(r) = w.room {
        out.push(local(
            "rt",
            ConstraintKind::Hard(HardKind::RoomType),
            ConstraintParams::RoomType {
                room_type: ROOMS[r],
            },
        ));
    }
    if !w.allowed.is_empty() {
        let allowed = w
            .allowed
            .iter()
            .map(|i| ACTIVITIES[*i].to_string())
            .collect();
        out.push(local(
            "rr",
            ConstraintKind::Hard(HardKind::RoomRule),
            ConstraintParams::RoomRule { allowed },
        ));
    }
    if w.min_nights {
        out.push(local(
            "mn",
            ConstraintKind::Commonsense(CommonsenseKind::MinimumNightsStay),
            ConstraintParams::None,
        ));
    }
    out
}

fn wish_admits(s: &HotelSpec, w: &HotelWish, nights: u32) -> bool {
    s.in_dest
        && w.room.is_none_or(|r| r == s.room)
        && w.allowed.iter().all(|a| !s.banned[*a])
        && (!w.min_nights || s.min_nights <= nights)
}

fn ids(options: &[bforest_core::catalog::OptionRef<'_>]) -> BTreeSet<String> {
    options.iter().map(|o| o.id().to_string()).collect()
}

proptest! {
    #[test]
    fn hotel_filter_matches_brute_force(
        specs in prop::collection::vec(hotel_spec(), 0..50),
        wish in hotel_wish(),
        days in 2..5u32,
    ) {
        let catalog = Catalog::new(vec![], hotels(&specs), vec![], vec![]).unwrap();
        let q = query(days);
        let got = ids(&filter_options(&catalog, TaskKind::Accommodation, &q, &wish_constraints(&wish)));
        let expected: BTreeSet<String> = specs
            .iter()
            .enumerate()
            .filter(|(_, s)| wish_admits(s, &wish, days - 1))
            .map(|(i, _)| format!("h{i}"))
            .collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn adding_a_constraint_never_widens_the_filter(
        specs in prop::collection::vec(hotel_spec(), 0..50),
        wish in hotel_wish(),
        extra in 0..3usize,
    ) {
        let catalog = Catalog::new(vec![], hotels(&specs), vec![], vec![]).unwrap();
        let q = query(3);
        let mut cs = wish_constraints(&wish);
        let before = ids(&filter_options(&catalog, TaskKind::Accommodation, &q, &cs));
        cs.push(local("more", ConstraintKind::Hard(HardKind::RoomType), ConstraintParams::RoomType { room_type: ROOMS[extra] }));
        let after = ids(&filter_options(&catalog, TaskKind::Accommodation, &q, &cs));
        prop_assert!(after.is_subset(&before));
    }

    #[test]
    fn cuisine_filter_matches_brute_force(
        menus in prop::collection::vec(prop::collection::btree_set(0..4usize, 1..3), 0..50),
        wanted in prop::collection::btree_set(0..4usize, 1..3),
    ) {
        let restaurants: Vec<Restaurant> = menus
            .iter()
            .enumerate()
            .map(|(i, m)| Restaurant {
                id: format!("r{i}"),
                city: DEST.into(),
                name: format!("R{i}"),
                cuisines: m.iter().map(|c| CUISINES[*c].to_string()).collect(),
                avg_cost: Money(1_000),
                rating: 4.0,
            })
            .collect();
        let catalog = Catalog::new(vec![], vec![], restaurants, vec![]).unwrap();
        let cuisines = wanted.iter().map(|c| CUISINES[*c].to_string()).collect();
        let c = local("cu", ConstraintKind::Hard(HardKind::Cuisine), ConstraintParams::Cuisine { cuisines });
        let got = ids(&filter_options(&catalog, TaskKind::Dining, &query(2), &[c]));
        let expected: BTreeSet<String> = menus
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_disjoint(&wanted))
            .map(|(i, _)| format!("r{i}"))
            .collect();
        prop_assert_eq!(got, expected);
    }
}

fn any_constraint(i: usize, pick: usize) -> Constraint {
    let id = format!("k{i}");
    match pick % 8 {
        0 => Constraint {
            id,
            ..Constraint::budget(Money(5_000))
        },
        1 => local(
            &id,
            ConstraintKind::Hard(HardKind::Cuisine),
            ConstraintParams::Cuisine {
                cuisines: vec!["Thai".into()],
            },
        ),
        2 => local(
            &id,
            ConstraintKind::Hard(HardKind::RoomType),
            ConstraintParams::RoomType {
                room_type: RoomType::PrivateRoom,
            },
        ),
        3 => local(
            &id,
            ConstraintKind::Hard(HardKind::RoomRule),
            ConstraintParams::RoomRule {
                allowed: vec!["pets".into()],
            },
        ),
        4 => local(
            &id,
            ConstraintKind::Hard(HardKind::Transportation),
            ConstraintParams::Transportation {
                modes: vec![bforest_core::domain::TransportMode::Train],
            },
        ),
        5 => {
            let params = ConstraintParams::MinRating {
                task: TaskKind::Dining,
                rating: 4.0,
            };
            let scope = route(ConstraintKind::Preference, &params).unwrap();
            Constraint::new(
                id,
                ConstraintKind::Preference,
                Severity::Soft,
                scope,
                params,
            )
            .unwrap()
        }
        n => {
            let kind = CommonsenseKind::ALL[(pick / 8 + n) % CommonsenseKind::ALL.len()];
            local(
                &id,
                ConstraintKind::Commonsense(kind),
                ConstraintParams::None,
            )
        }
    }
}

proptest! {
    #[test]
    fn decoupling_is_a_partition(picks in prop::collection::vec(0..64usize, 0..30)) {
        let input: Vec<Constraint> = picks.iter().enumerate().map(|(i, p)| any_constraint(i, *p)).collect();
        let set = decouple_constraints(input.clone()).unwrap();
        let mut seen: Vec<&str> = set.globals.iter().map(|c| c.id.as_str()).collect();
        for cs in set.locals.values() {
            for c in cs {
                prop_assert_eq!(c.scope, Scope::Local(c.local_task().unwrap()));
                seen.push(&c.id);
            }
        }
        prop_assert!(set.globals.iter().all(|c| c.scope == Scope::Global));
        prop_assert_eq!(seen.len(), input.len());
        let unique: BTreeSet<&str> = seen.iter().copied().collect();
        prop_assert_eq!(unique.len(), input.len());
    }

    #[test]
    fn budget_is_conserved_through_updates(
        total in 0i64..10_000_000,
        shares in prop::collection::vec(0u32..100, 4),
        steps in prop::collection::vec(prop::collection::vec(0i64..5_000_000, 4), 1..6),
    ) {
        prop_assume!(shares.iter().any(|s| *s > 0));
        let shares = BudgetShares {
            transportation: shares[0],
            accommodation: shares[1],
            dining: shares[2],
            attractions: shares[3],
        };
        let budget = Money(total);
        let allocations = allocate_budget(budget, &TaskKind::ALL, &shares);
        prop_assert_eq!(allocations.values().copied().sum::<Money>(), budget);
        let mut state = GlobalState::new(budget, &TaskKind::ALL, &shares, Vec::new(), 3);
        for costs in steps {
            let deltas: BTreeMap<TaskKind, Money> = TaskKind::ALL
                .iter()
                .zip(&costs)
                .map(|(t, c)| (*t, state.allocations[t] - Money(*c)))
                .collect();
            propagate_update(&mut state, &deltas);
            prop_assert_eq!(state.allocated(), budget);
            prop_assert!(state.allocations.values().all(|a| !a.is_negative()));
        }
    }
}

fn candidate(i: usize, cost: i64, soft: f64, rating: Option<f64>) -> Candidate {
    let entry = SubPlanEntry {
        day: 1,
        resource_id: format!("r{i}"),
        quantity: 1,
        unit_cost: Money(cost),
    };
    Candidate {
        subplan: SubPlan::new(TaskKind::Dining, vec![entry]),
        score: 0.0,
        over_hint: false,
        soft_fraction: soft,
        rating,
    }
}

proptest! {
    #[test]
    fn rerank_is_a_deterministic_permutation(
        specs in prop::collection::vec((0i64..50_000, 0.0f64..=1.0, prop::option::of(1.0f64..=5.0)), 0..20),
        hint in 0i64..60_000,
        zero_weights in any::<bool>(),
    ) {
        let weights = if zero_weights { HeuristicWeights::ZERO } else { HeuristicWeights::default() };
        let mut pool = CandidatePool::empty(TaskKind::Dining);
        pool.budget_hint = Money(hint);
        // Duplicate ids are allowed in the input to exercise tie breaking.
        pool.candidates = specs.iter().enumerate().map(|(i, (c, s, r))| candidate(i % 7, *c, *s, *r)).collect();
        let before = pool.clone();
        rerank(&mut pool, weights);
        let mut again = before.clone();
        rerank(&mut again, weights);
        prop_assert_eq!(&pool, &again);

        let key = |c: &Candidate| (c.key(), c.cost(), c.soft_fraction.to_bits(), c.rating.map(f64::to_bits));
        let mut a: Vec<_> = before.candidates.iter().map(key).collect();
        let mut b: Vec<_> = pool.candidates.iter().map(key).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        prop_assert!(pool.candidates.windows(2).all(|w| w[0].score >= w[1].score));
    }
}

fn check(plan: usize, constraint: usize, commonsense: bool, passed: bool) -> ConstraintCheck {
    ConstraintCheck {
        constraint_id: format!("c{constraint}"),
        plan_id: format!("p{plan}"),
        kind: if commonsense {
            ConstraintKind::Commonsense(CommonsenseKind::WithinSandbox)
        } else {
            ConstraintKind::Hard(HardKind::Budget)
        },
        passed,
        detail: String::new(),
        implicated: Vec::new(),
    }
}

fn delivered_stub(id: usize) -> PlanResult {
    PlanResult {
        query_id: format!("p{id}"),
        status: PlanStatus::Delivered {
            plan: bforest_core::domain::Plan {
                query_id: format!("p{id}"),
                days: Vec::new(),
                total_cost: Money::ZERO,
                subplans: Vec::new(),
            },
        },
        rounds_used: 1,
        violation_trace: Vec::new(),
        validation_log: Vec::new(),
        token_usage: TokenUsage::default(),
        wall_time_ms: 0,
        constraints: Default::default(),
        llm_verification: None,
    }
}

proptest! {
    #[test]
    fn micro_dominates_macro_at_equal_width(
        width in 1usize..15,
        rows in prop::collection::vec(prop::collection::vec(any::<bool>(), 15), 0..20),
    ) {
        let matrix: Vec<Vec<ConstraintCheck>> = rows
            .iter()
            .enumerate()
            .map(|(p, r)| r[..width].iter().enumerate().map(|(c, ok)| check(p, c, c % 2 == 0, *ok)).collect())
            .collect();
        let micro = micro_pass_rate(&matrix);
        let macro_ = macro_pass_rate(&matrix);
        prop_assert!(micro >= macro_);
        let all = matrix.iter().flatten().all(|c| c.passed);
        let one = bforest_core::evaluation::Rate::new(1, 1);
        prop_assert_eq!(!matrix.is_empty() && all, micro == one && macro_ == one);

        let results: Vec<PlanResult> = (0..matrix.len()).map(delivered_stub).collect();
        let r = report(&results, &matrix);
        prop_assert!(r.final_pass_rate <= r.commonsense_macro.min(r.hard_macro));
    }
}
