//! Per-task behavior trees: generic tick semantics, the fixed planning
//! sequence, candidate generation through the backend, heuristic reranking
//! and cursor-based subplan emission.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{
    filter_options, is_outbound_leg, is_return_leg, option_satisfies, Catalog, OptionRef,
};
use crate::config::{AttractionPricing, HeuristicWeights, PlannerConfig};
use crate::domain::{
    CommonsenseKind, Constraint, ConstraintKind, Money, Query, Scope, SubPlan, SubPlanEntry,
    TaskKind, TransportMode,
};
use crate::llm::{extract_json_object, BackendError, CompletionBackend};
use crate::prompts::{render, Prompts};

// ---------------------------------------------------------------------------
// Generic tick semantics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    Failure,
    Running,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Node {
    Sequence(Vec<Node>),
    Selector(Vec<Node>),
    Action(String),
    Condition(String),
}

impl Node {
    pub fn action(name: &str) -> Node {
        Node::Action(name.into())
    }

    pub fn condition(name: &str) -> Node {
        Node::Condition(name.into())
    }

    /// Names of all leaves, left to right.
    pub fn leaves(&self) -> Vec<&str> {
        match self {
            Node::Sequence(c) | Node::Selector(c) => c.iter().flat_map(Node::leaves).collect(),
            Node::Action(n) | Node::Condition(n) => vec![n.as_str()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TickError {
    #[error("no handler registered for leaf {0:?}")]
    UnregisteredLeaf(String),
    #[error("composite node without children")]
    EmptyComposite,
}

type Handler<'h, C> = Box<dyn FnMut(&mut C) -> Status + 'h>;

/// Leaf handlers keyed by leaf name.
pub struct Registry<'h, C> {
    handlers: BTreeMap<String, Handler<'h, C>>,
}

impl<C> Default for Registry<'_, C> {
    fn default() -> Self {
        Registry {
            handlers: BTreeMap::new(),
        }
    }
}

impl<'h, C> Registry<'h, C> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        handler: impl FnMut(&mut C) -> Status + 'h,
    ) -> &mut Self {
        self.handlers.insert(name.to_string(), Box::new(handler));
        self
    }
}

/// Ticks `node` once. Sequences stop at the first non-success child,
/// selectors at the first non-failure child; Running propagates at once.
pub fn tick<C>(
    node: &Node,
    registry: &mut Registry<'_, C>,
    ctx: &mut C,
) -> Result<Status, TickError> {
    match node {
        Node::Sequence(children) => {
            if children.is_empty() {
                return Err(TickError::EmptyComposite);
            }
            for child in children {
                match tick(child, registry, ctx)? {
                    Status::Success => {}
                    other => return Ok(other),
                }
            }
            Ok(Status::Success)
        }
        Node::Selector(children) => {
            if children.is_empty() {
                return Err(TickError::EmptyComposite);
            }
            for child in children {
                match tick(child, registry, ctx)? {
                    Status::Failure => {}
                    other => return Ok(other),
                }
            }
            Ok(Status::Failure)
        }
        Node::Action(name) | Node::Condition(name) => match registry.handlers.get_mut(name) {
            Some(handler) => Ok(handler(ctx)),
            None => Err(TickError::UnregisteredLeaf(name.clone())),
        },
    }
}

// ---------------------------------------------------------------------------
// Candidates and pools

pub const GENERATE: &str = "GenerateCandidates";
pub const RERANK: &str = "RerankCandidates";
pub const SELECT: &str = "SelectNext";
pub const EMIT: &str = "EmitSubPlan";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub subplan: SubPlan,
    pub score: f64,
    /// Cost exceeds the budget hint the pool was generated under.
    pub over_hint: bool,
    /// Fraction of activated soft constraints met; 1 when there are none.
    pub soft_fraction: f64,
    /// Mean rating of the rated options used, if any are rated.
    pub rating: Option<f64>,
}

impl Candidate {
    pub fn cost(&self) -> Money {
        self.subplan.total_cost
    }

    pub fn key(&self) -> Vec<String> {
        self.subplan.sorted_ids()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub task: TaskKind,
    pub candidates: Vec<Candidate>,
    pub cursor: usize,
    pub exhausted: bool,
    pub budget_hint: Money,
    /// Not yet reranked since generation.
    pub fresh: bool,
}

impl CandidatePool {
    pub fn empty(task: TaskKind) -> Self {
        CandidatePool {
            task,
            candidates: Vec::new(),
            cursor: 0,
            exhausted: false,
            budget_hint: Money::ZERO,
            fresh: false,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn subplans(&self) -> impl Iterator<Item = &SubPlan> {
        self.candidates.iter().map(|c| &c.subplan)
    }
}

/// Returns the candidate under the cursor and advances it; `None` once the
/// pool is used up, after which the pool stays exhausted.
pub fn next_candidate(pool: &mut CandidatePool) -> Option<SubPlan> {
    if pool.cursor >= pool.candidates.len() {
        pool.exhausted = true;
        return None;
    }
    let out = pool.candidates[pool.cursor].subplan.clone();
    pool.cursor += 1;
    Some(out)
}

/// Heuristic score of one candidate against a budget hint.
pub fn score(candidate: &Candidate, budget_hint: Money, weights: HeuristicWeights) -> f64 {
    let hint = budget_hint.cents().max(1) as f64;
    let cost_term = 1.0 - candidate.cost().cents() as f64 / hint;
    let rating_term = candidate
        .rating
        .map(|r| (r / 5.0).clamp(0.0, 1.0))
        .unwrap_or(0.0);
    weights.cost * cost_term + weights.soft * candidate.soft_fraction + weights.rating * rating_term
}

fn tie_order(a: &Candidate, b: &Candidate) -> Ordering {
    a.subplan
        .first_id()
        .cmp(&b.subplan.first_id())
        .then_with(|| a.key().cmp(&b.key()))
}

/// Scores every candidate and sorts by non-increasing score; ties go to the
/// smaller first resource id. The sort is stable, so the result is a
/// deterministic permutation of the input.
pub fn rerank(pool: &mut CandidatePool, weights: HeuristicWeights) {
    for c in &mut pool.candidates {
        c.score = score(c, pool.budget_hint, weights);
    }
    pool.candidates
        .sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| tie_order(a, b)));
}

// ---------------------------------------------------------------------------
// Constraint activation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationContext {
    pub task: TaskKind,
    pub node: String,
    pub round: u32,
    pub activated: Vec<Constraint>,
}

/// Generation conditions on hard locals, reranking on soft locals; other
/// nodes reason over none.
pub fn activate_constraints(tree: &BehaviorTree, node: &str, round: u32) -> ActivationContext {
    let activated = match node {
        GENERATE => tree
            .locals
            .iter()
            .filter(|c| c.is_hard())
            .cloned()
            .collect(),
        RERANK => tree
            .locals
            .iter()
            .filter(|c| c.is_soft())
            .cloned()
            .collect(),
        _ => Vec::new(),
    };
    ActivationContext {
        task: tree.task,
        node: node.to_string(),
        round,
        activated,
    }
}

// ---------------------------------------------------------------------------
// Local search space

/// Number of catalog options one subplan of `task` draws.
pub fn slot_count(task: TaskKind, query: &Query, config: &PlannerConfig) -> usize {
    let days = query.num_days() as usize;
    match task {
        TaskKind::Transportation => 2,
        TaskKind::Accommodation => usize::from(query.nights() > 0),
        TaskKind::Dining => 3 * days,
        TaskKind::Attractions => days * config.attractions_per_day as usize,
    }
}

fn has_commonsense(locals: &[Constraint], kind: CommonsenseKind) -> bool {
    locals
        .iter()
        .any(|c| c.is_hard() && c.kind == ConstraintKind::Commonsense(kind))
}

/// Whether slots of `task` must use distinct options.
fn requires_distinct(task: TaskKind, locals: &[Constraint]) -> bool {
    match task {
        TaskKind::Dining => has_commonsense(locals, CommonsenseKind::DiverseRestaurants),
        TaskKind::Attractions => has_commonsense(locals, CommonsenseKind::DiverseAttractions),
        _ => false,
    }
}

/// Whether an outbound and a return leg may be combined.
pub fn legs_compatible(
    outbound: &crate::catalog::TransportOption,
    ret: &crate::catalog::TransportOption,
    non_conflicting: bool,
) -> bool {
    if !non_conflicting {
        return true;
    }
    let driving = [outbound.mode, ret.mode].contains(&TransportMode::SelfDriving);
    let mixed = driving && outbound.mode != ret.mode;
    ret.departure_date >= outbound.arrival_date && !mixed
}

/// Builds the subplan drawing `picks` (in slot order).
pub fn build_subplan(
    task: TaskKind,
    picks: &[OptionRef<'_>],
    query: &Query,
    config: &PlannerConfig,
) -> SubPlan {
    let n = query.num_days();
    let party = query.party_size;
    let entries = match task {
        TaskKind::Transportation => picks
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let mode = o
                    .as_transport()
                    .map(|t| t.mode)
                    .unwrap_or(TransportMode::Flight);
                SubPlanEntry {
                    day: if i == 0 { 1 } else { n },
                    resource_id: o.id().to_string(),
                    quantity: mode.units(party),
                    unit_cost: o.price(),
                }
            })
            .collect(),
        TaskKind::Accommodation => picks
            .first()
            .map(|o| {
                let rooms = o
                    .as_accommodation()
                    .map(|a| a.rooms_for(party))
                    .unwrap_or(1);
                (1..=query.nights())
                    .map(|day| SubPlanEntry {
                        day,
                        resource_id: o.id().to_string(),
                        quantity: rooms,
                        unit_cost: o.price(),
                    })
                    .collect()
            })
            .unwrap_or_default(),
        TaskKind::Dining => picks
            .iter()
            .enumerate()
            .map(|(i, o)| SubPlanEntry {
                day: i as u32 / 3 + 1,
                resource_id: o.id().to_string(),
                quantity: party,
                unit_cost: o.price(),
            })
            .collect(),
        TaskKind::Attractions => {
            let k = picks.len().max(1) as u64;
            let quantity = match config.attraction_pricing {
                AttractionPricing::PerPerson => party,
                AttractionPricing::PerGroup => 1,
            };
            picks
                .iter()
                .enumerate()
                .map(|(i, o)| SubPlanEntry {
                    day: (i as u64 * u64::from(n) / k) as u32 + 1,
                    resource_id: o.id().to_string(),
                    quantity,
                    unit_cost: o.price(),
                })
                .collect()
        }
    };
    SubPlan::new(task, entries)
}

/// The hard-constraint-consistent combinations of one task's options.
struct LocalSpace<'a> {
    task: TaskKind,
    options: Vec<OptionRef<'a>>,
    slots: usize,
    distinct: bool,
    non_conflicting: bool,
}

impl<'a> LocalSpace<'a> {
    fn new(
        catalog: &'a Catalog,
        task: TaskKind,
        query: &Query,
        hard: &[Constraint],
        config: &PlannerConfig,
    ) -> Self {
        let mut options = filter_options(catalog, task, query, hard);
        // Cheapest first; per-slot quantity is constant within a task so
        // this also orders by contribution to subplan cost.
        options.sort_by(|a, b| {
            unit_weight(a, query)
                .cmp(&unit_weight(b, query))
                .then(a.id().cmp(b.id()))
        });
        LocalSpace {
            task,
            options,
            slots: slot_count(task, query, config),
            distinct: requires_distinct(task, hard),
            non_conflicting: has_commonsense(hard, CommonsenseKind::NonConflictingTransportation),
        }
    }

    fn find(&self, id: &str) -> Option<OptionRef<'a>> {
        self.options.iter().copied().find(|o| o.id() == id)
    }

    /// Validates a proposed id list and orders it into slots.
    fn admit(&self, ids: &[String], query: &Query) -> Option<Vec<OptionRef<'a>>> {
        if ids.len() != self.slots {
            return None;
        }
        let picks: Vec<OptionRef<'a>> =
            ids.iter().map(|id| self.find(id)).collect::<Option<_>>()?;
        match self.task {
            TaskKind::Transportation => {
                let out = picks
                    .iter()
                    .find(|o| o.as_transport().is_some_and(|t| is_outbound_leg(t, query)))?;
                let ret = picks.iter().find(|o| {
                    o.id() != out.id() && o.as_transport().is_some_and(|t| is_return_leg(t, query))
                })?;
                let ok = legs_compatible(
                    out.as_transport()?,
                    ret.as_transport()?,
                    self.non_conflicting,
                );
                ok.then(|| vec![*out, *ret])
            }
            _ => {
                if self.distinct {
                    let unique: BTreeSet<&str> = picks.iter().map(|o| o.id()).collect();
                    if unique.len() != picks.len() {
                        return None;
                    }
                }
                Some(picks)
            }
        }
    }

    /// Up to `limit` combinations in non-decreasing cost order.
    fn cheapest(&self, query: &Query, config: &PlannerConfig, limit: usize) -> Vec<SubPlan> {
        match self.task {
            TaskKind::Transportation => {
                let legs = |f: fn(&crate::catalog::TransportOption, &Query) -> bool| {
                    self.options
                        .iter()
                        .copied()
                        .filter(|o| o.as_transport().is_some_and(|t| f(t, query)))
                        .collect::<Vec<_>>()
                };
                let outbound = legs(is_outbound_leg);
                let inbound = legs(is_return_leg);
                let mut pairs = Vec::new();
                for o in &outbound {
                    for r in &inbound {
                        let (Some(ot), Some(rt)) = (o.as_transport(), r.as_transport()) else {
                            continue;
                        };
                        if o.id() != r.id() && legs_compatible(ot, rt, self.non_conflicting) {
                            pairs.push(build_subplan(self.task, &[*o, *r], query, config));
                        }
                    }
                }
                pairs.sort_by(|a, b| {
                    a.total_cost
                        .cmp(&b.total_cost)
                        .then_with(|| a.sorted_ids().cmp(&b.sorted_ids()))
                });
                pairs.truncate(limit);
                pairs
            }
            _ => k_cheapest_combinations(
                self.options.len(),
                self.slots,
                self.distinct,
                limit,
                |idx| {
                    let picks: Vec<OptionRef<'a>> = idx.iter().map(|i| self.options[*i]).collect();
                    build_subplan(self.task, &picks, query, config)
                },
            ),
        }
    }
}

fn unit_weight(option: &OptionRef<'_>, query: &Query) -> Money {
    match option {
        OptionRef::Transport(t) => t.price.times(t.mode.units(query.party_size)),
        OptionRef::Accommodation(a) => a.price_per_night.times(a.rooms_for(query.party_size)),
        other => other.price(),
    }
}

/// Best-first enumeration of index vectors over `n` cost-sorted options
/// filling `slots` slots, strictly increasing when `distinct`, otherwise
/// non-decreasing. Every vector is reachable from the minimal one by
/// single-position increments, each of which never lowers the cost.
fn k_cheapest_combinations(
    n: usize,
    slots: usize,
    distinct: bool,
    limit: usize,
    build: impl Fn(&[usize]) -> SubPlan,
) -> Vec<SubPlan> {
    if slots == 0 {
        return if limit > 0 {
            vec![build(&[])]
        } else {
            Vec::new()
        };
    }
    if n == 0 || (distinct && n < slots) {
        return Vec::new();
    }
    let start: Vec<usize> = if distinct {
        (0..slots).collect()
    } else {
        vec![0; slots]
    };
    let mut heap = BinaryHeap::new();
    let mut seen = HashSet::new();
    let first = build(&start);
    heap.push(Reverse((first.total_cost, start.clone())));
    seen.insert(start);
    let mut out = Vec::new();
    while let Some(Reverse((_, idx))) = heap.pop() {
        out.push(build(&idx));
        if out.len() >= limit {
            break;
        }
        for j in 0..slots {
            let mut next = idx.clone();
            next[j] += 1;
            let bound_ok = match next.get(j + 1) {
                Some(&after) => {
                    if distinct {
                        next[j] < after
                    } else {
                        next[j] <= after
                    }
                }
                None => next[j] < n,
            };
            if bound_ok && seen.insert(next.clone()) {
                let cost = build(&next).total_cost;
                heap.push(Reverse((cost, next)));
            }
        }
    }
    out
}

/// Everything a tree needs from its surroundings for one tick.
#[derive(Clone, Copy)]
pub struct PlanningContext<'a> {
    pub catalog: &'a Catalog,
    pub query: &'a Query,
    pub backend: &'a dyn CompletionBackend,
    pub prompts: &'a Prompts,
    pub config: &'a PlannerConfig,
    pub budget_hint: Money,
    pub round: u32,
}

fn describe(option: &OptionRef<'_>) -> String {
    match option {
        OptionRef::Transport(t) => format!(
            "{} | {:?} {} -> {} departs {} arrives {} | {}",
            t.id, t.mode, t.origin, t.destination, t.departure_date, t.arrival_date, t.price
        ),
        OptionRef::Accommodation(a) => format!(
            "{} | {} {:?} rules {:?} min nights {} sleeps {} rating {:?} | {}",
            a.id,
            a.name,
            a.room_type,
            a.house_rules,
            a.min_nights,
            a.max_occupancy,
            a.rating,
            a.price_per_night
        ),
        OptionRef::Dining(r) => {
            format!(
                "{} | {} {:?} rating {} | {}",
                r.id, r.name, r.cuisines, r.rating, r.avg_cost
            )
        }
        OptionRef::Attraction(a) => format!("{} | {} | {}", a.id, a.name, a.price),
    }
}

fn describe_constraints(constraints: &[Constraint]) -> String {
    if constraints.is_empty() {
        return "- none".into();
    }
    constraints
        .iter()
        .map(|c| {
            let params = serde_json::to_string(&c.params).unwrap_or_default();
            format!("- {} ({:?}) {params}", c.kind.name(), c.severity)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn parse_proposals(text: &str) -> Vec<Vec<String>> {
    let Some(json) = extract_json_object(text) else {
        return Vec::new();
    };
    let Ok(value) = serde_json::from_str::<serde_json::Value>(json) else {
        return Vec::new();
    };
    let Some(list) = value.get("candidates").and_then(|v| v.as_array()) else {
        return Vec::new();
    };
    list.iter()
        .filter_map(|c| c.as_array())
        .map(|ids| {
            ids.iter()
                .filter_map(|id| id.as_str().map(str::to_string))
                .collect()
        })
        .collect()
}

/// Fraction of soft constraints met by every option a subplan uses.
fn soft_fraction(subplan: &SubPlan, soft: &[Constraint], catalog: &Catalog, query: &Query) -> f64 {
    if soft.is_empty() {
        return 1.0;
    }
    let options: Vec<OptionRef<'_>> = subplan
        .sorted_ids()
        .iter()
        .filter_map(|id| catalog.lookup(subplan.task, id))
        .collect();
    let met = soft
        .iter()
        .filter(|c| options.iter().all(|o| option_satisfies(o, c, query)))
        .count();
    met as f64 / soft.len() as f64
}

fn mean_rating(subplan: &SubPlan, catalog: &Catalog) -> Option<f64> {
    let ratings: Vec<f64> = subplan
        .entries
        .iter()
        .filter_map(|e| {
            catalog
                .lookup(subplan.task, &e.resource_id)
                .and_then(|o| o.rating())
        })
        .collect();
    (!ratings.is_empty()).then(|| ratings.iter().sum::<f64>() / ratings.len() as f64)
}

fn candidate(subplan: SubPlan, hint: Money, catalog: &Catalog) -> Candidate {
    Candidate {
        over_hint: subplan.total_cost > hint,
        rating: mean_rating(&subplan, catalog),
        soft_fraction: 1.0,
        score: 0.0,
        subplan,
    }
}

/// Builds a pool of at most `k` candidate subplans for `task`.
///
/// Backend proposals are advisory: each is re-checked against the filtered
/// options and the structural rules of the task, and dropped if it fails.
/// The engine then adds the cheapest valid combinations itself. Candidates
/// within `budget_hint` come first; remaining places go to the cheapest
/// over-hint candidates, flagged as such.
#[allow(clippy::too_many_arguments)]
pub fn generate_candidates(
    task: TaskKind,
    hard: &[Constraint],
    catalog: &Catalog,
    query: &Query,
    backend: &dyn CompletionBackend,
    prompts: &Prompts,
    config: &PlannerConfig,
    budget_hint: Money,
    k: usize,
) -> Result<CandidatePool, BackendError> {
    let space = LocalSpace::new(catalog, task, query, hard, config);
    let mut merged: Vec<SubPlan> = Vec::new();
    let mut keys: BTreeSet<Vec<String>> = BTreeSet::new();

    let searchable = space.slots > 0 && !space.options.is_empty();
    if searchable && k > 0 {
        let options = space
            .options
            .iter()
            .map(describe)
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = render(
            prompts.for_task(task),
            &[
                ("origin", &query.origin),
                ("destination", &query.destination),
                ("start_date", &query.start_date.to_string()),
                ("end_date", &query.end_date.to_string()),
                ("party_size", &query.party_size.to_string()),
                ("slots", &space.slots.to_string()),
                ("budget_hint", &budget_hint.cents().to_string()),
                ("constraints", &describe_constraints(hard)),
                ("options", &options),
                ("k", &k.to_string()),
            ],
        );
        let answer = backend.complete(&prompt)?;
        for ids in parse_proposals(&answer.text) {
            match space.admit(&ids, query) {
                Some(picks) => {
                    let sub = build_subplan(task, &picks, query, config);
                    if keys.insert(sub.sorted_ids()) {
                        merged.push(sub);
                    }
                }
                None => log::debug!("{task}: dropped proposal {ids:?}"),
            }
        }
    }
    for sub in space.cheapest(query, config, k) {
        if keys.insert(sub.sorted_ids()) {
            merged.push(sub);
        }
    }

    let (mut within, mut over): (Vec<SubPlan>, Vec<SubPlan>) = merged
        .into_iter()
        .partition(|s| s.total_cost <= budget_hint);
    within.truncate(k);
    over.sort_by(|a, b| {
        a.total_cost
            .cmp(&b.total_cost)
            .then_with(|| a.sorted_ids().cmp(&b.sorted_ids()))
    });
    over.truncate(k - within.len());
    let candidates = within
        .into_iter()
        .chain(over)
        .map(|s| candidate(s, budget_hint, catalog))
        .collect();
    Ok(CandidatePool {
        task,
        candidates,
        cursor: 0,
        exhausted: false,
        budget_hint,
        fresh: true,
    })
}

// ---------------------------------------------------------------------------
// The planning tree

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TreeState {
    pub pool: Option<CandidatePool>,
    /// Pools generated so far.
    pub generations: u32,
    pub selected: Option<SubPlan>,
    pub emitted: Option<SubPlan>,
    pub activations: Vec<ActivationContext>,
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error(transparent)]
    Tick(#[from] TickError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorTree {
    pub task: TaskKind,
    pub root: Node,
    pub locals: Vec<Constraint>,
    pub state: TreeState,
}

struct Tick<'t, 'a> {
    tree_task: TaskKind,
    state: &'t mut TreeState,
    env: &'t PlanningContext<'a>,
    error: Option<BackendError>,
    activations: Vec<ActivationContext>,
}

impl BehaviorTree {
    /// A tree for `task` with the fixed four-step planning sequence. Only
    /// constraints scoped to `task` are kept.
    pub fn new(task: TaskKind, locals: &[Constraint]) -> Self {
        let root = Node::Sequence(vec![
            Node::action(GENERATE),
            Node::action(RERANK),
            Node::action(SELECT),
            Node::action(EMIT),
        ]);
        let locals = locals
            .iter()
            .filter(|c| c.scope == Scope::Local(task))
            .cloned()
            .collect();
        BehaviorTree {
            task,
            root,
            locals,
            state: TreeState::default(),
        }
    }

    pub fn pool(&self) -> Option<&CandidatePool> {
        self.state.pool.as_ref()
    }

    /// Runs one tick of the planning sequence. On success the tree has
    /// emitted its next subplan.
    pub fn tick(&mut self, env: &PlanningContext<'_>) -> Result<Status, TreeError> {
        let mut registry: Registry<'_, Tick<'_, '_>> = Registry::new();
        registry
            .register(GENERATE, leaf_generate)
            .register(RERANK, leaf_rerank)
            .register(SELECT, leaf_select)
            .register(EMIT, leaf_emit);
        let acts: Vec<ActivationContext> = [GENERATE, RERANK, SELECT, EMIT]
            .iter()
            .map(|n| activate_constraints(self, n, env.round))
            .collect();
        let mut ctx = Tick {
            tree_task: self.task,
            state: &mut self.state,
            env,
            error: None,
            activations: acts,
        };
        let status = tick(&self.root, &mut registry, &mut ctx)?;
        if let Some(e) = ctx.error {
            return Err(TreeError::Backend(e));
        }
        Ok(status)
    }
}

fn activation<'c>(ctx: &'c mut Tick<'_, '_>, node: &str) -> &'c ActivationContext {
    let act = ctx.activations.iter().find(|a| a.node == node).cloned();
    let act = act.unwrap_or(ActivationContext {
        task: ctx.tree_task,
        node: node.to_string(),
        round: ctx.env.round,
        activated: Vec::new(),
    });
    ctx.state.activations.push(act);
    ctx.state.activations.last().expect("just pushed")
}

fn leaf_generate(ctx: &mut Tick<'_, '_>) -> Status {
    let hard = activation(ctx, GENERATE).activated.clone();
    let has_untried = ctx.state.pool.as_ref().is_some_and(|p| p.cursor < p.len());
    if has_untried {
        return Status::Success;
    }
    let env = ctx.env;
    if ctx.state.generations > env.config.regenerations_per_tree {
        return Status::Failure;
    }
    match generate_candidates(
        ctx.tree_task,
        &hard,
        env.catalog,
        env.query,
        env.backend,
        env.prompts,
        env.config,
        env.budget_hint,
        env.config.pool_size,
    ) {
        Ok(pool) => {
            ctx.state.generations += 1;
            let empty = pool.is_empty();
            ctx.state.pool = Some(pool);
            if empty {
                Status::Failure
            } else {
                Status::Success
            }
        }
        Err(e) => {
            ctx.error = Some(e);
            Status::Failure
        }
    }
}

fn leaf_rerank(ctx: &mut Tick<'_, '_>) -> Status {
    let soft = activation(ctx, RERANK).activated.clone();
    let env = ctx.env;
    let Some(pool) = ctx.state.pool.as_mut() else {
        return Status::Failure;
    };
    if !pool.fresh {
        return Status::Success;
    }
    for c in &mut pool.candidates {
        c.soft_fraction = soft_fraction(&c.subplan, &soft, env.catalog, env.query);
    }
    if !env.config.ablation.no_rerank {
        rerank(pool, env.config.effective_weights());
    }
    pool.fresh = false;
    Status::Success
}

fn leaf_select(ctx: &mut Tick<'_, '_>) -> Status {
    activation(ctx, SELECT);
    let Some(pool) = ctx.state.pool.as_mut() else {
        return Status::Failure;
    };
    match next_candidate(pool) {
        Some(sub) => {
            ctx.state.selected = Some(sub);
            Status::Success
        }
        None => Status::Failure,
    }
}

fn leaf_emit(ctx: &mut Tick<'_, '_>) -> Status {
    activation(ctx, EMIT);
    match &ctx.state.selected {
        Some(sub) => {
            ctx.state.emitted = Some(sub.clone());
            Status::Success
        }
        None => Status::Failure,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ConstraintParams, HardKind, Severity};
    use crate::llm::{LlmBackend, MockBackend, MockRule, MockRules};
    use std::cell::Cell;

    fn counter_registry<'h>(calls: &'h Cell<u32>) -> Registry<'h, ()> {
        let mut r = Registry::new();
        r.register("ok", move |_: &mut ()| {
            calls.set(calls.get() + 1);
            Status::Success
        });
        r.register("fail", |_: &mut ()| Status::Failure);
        r.register("run", |_: &mut ()| Status::Running);
        r
    }

    #[test]
    fn sequence_and_selector() {
        let calls = Cell::new(0);
        let mut r = counter_registry(&calls);
        let seq = Node::Sequence(vec![Node::action("ok"), Node::action("ok")]);
        assert_eq!(tick(&seq, &mut r, &mut ()).unwrap(), Status::Success);
        let sel = Node::Selector(vec![Node::action("fail"), Node::action("ok")]);
        assert_eq!(tick(&sel, &mut r, &mut ()).unwrap(), Status::Success);
    }

    #[test]
    fn sequence_short_circuits() {
        let calls = Cell::new(0);
        let mut r = counter_registry(&calls);
        let seq = Node::Sequence(vec![
            Node::action("ok"),
            Node::action("fail"),
            Node::action("ok"),
        ]);
        assert_eq!(tick(&seq, &mut r, &mut ()).unwrap(), Status::Failure);
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn running_propagates_and_unknown_leaf_errors() {
        let calls = Cell::new(0);
        let mut r = counter_registry(&calls);
        let seq = Node::Sequence(vec![Node::action("run"), Node::action("ok")]);
        assert_eq!(tick(&seq, &mut r, &mut ()).unwrap(), Status::Running);
        assert_eq!(calls.get(), 0);
        let err = tick(&Node::condition("nope"), &mut r, &mut ()).unwrap_err();
        assert_eq!(err, TickError::UnregisteredLeaf("nope".into()));
    }

    fn tiny() -> (Catalog, Query) {
        let catalog = Catalog::from_json_str(include_str!("../fixtures/tiny.json")).unwrap();
        let query: Query =
            serde_json::from_str(include_str!("../fixtures/tiny-query.json")).unwrap();
        (catalog, query)
    }

    fn cuisine() -> Constraint {
        Constraint::new(
            "c1",
            ConstraintKind::Hard(HardKind::Cuisine),
            Severity::Hard,
            Scope::Local(TaskKind::Dining),
            ConstraintParams::Cuisine {
                cuisines: vec!["Italian".into()],
            },
        )
        .unwrap()
    }

    fn min_rating() -> Constraint {
        Constraint::new(
            "p1",
            ConstraintKind::Preference,
            Severity::Soft,
            Scope::Local(TaskKind::Dining),
            ConstraintParams::MinRating {
                task: TaskKind::Dining,
                rating: 4.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn activation_split() {
        let tree = BehaviorTree::new(TaskKind::Dining, &[cuisine(), min_rating()]);
        assert_eq!(
            activate_constraints(&tree, GENERATE, 1).activated,
            vec![cuisine()]
        );
        assert_eq!(
            activate_constraints(&tree, RERANK, 1).activated,
            vec![min_rating()]
        );
        assert!(activate_constraints(&tree, SELECT, 1).activated.is_empty());
        let bare = BehaviorTree::new(TaskKind::Dining, &[]);
        assert!(activate_constraints(&bare, GENERATE, 1)
            .activated
            .is_empty());
    }

    #[test]
    fn cursor_semantics() {
        let sub = |id: &str| {
            SubPlan::new(
                TaskKind::Dining,
                vec![SubPlanEntry {
                    day: 1,
                    resource_id: id.into(),
                    quantity: 1,
                    unit_cost: Money(1),
                }],
            )
        };
        let mut pool = CandidatePool::empty(TaskKind::Dining);
        for id in ["a", "b"] {
            pool.candidates.push(candidate(
                sub(id),
                Money(10),
                &Catalog::new(vec![], vec![], vec![], vec![]).unwrap(),
            ));
        }
        assert_eq!(next_candidate(&mut pool).unwrap().first_id(), Some("a"));
        assert_eq!(next_candidate(&mut pool).unwrap().first_id(), Some("b"));
        assert!(next_candidate(&mut pool).is_none());
        assert!(pool.exhausted);
        assert!(next_candidate(&mut pool).is_none());
        assert!(next_candidate(&mut CandidatePool::empty(TaskKind::Dining)).is_none());
    }

    fn pool_of(costs: &[(&str, i64, Option<f64>)], hint: i64) -> CandidatePool {
        let mut pool = CandidatePool::empty(TaskKind::Attractions);
        pool.budget_hint = Money(hint);
        for (id, cost, rating) in costs {
            let sub = SubPlan::new(
                TaskKind::Attractions,
                vec![SubPlanEntry {
                    day: 1,
                    resource_id: (*id).into(),
                    quantity: 1,
                    unit_cost: Money(*cost),
                }],
            );
            pool.candidates.push(Candidate {
                over_hint: false,
                rating: *rating,
                soft_fraction: 1.0,
                score: 0.0,
                subplan: sub,
            });
        }
        pool
    }

    #[test]
    fn rerank_prefers_cheaper() {
        let mut pool = pool_of(&[("B", 200, None), ("A", 100, None)], 400);
        rerank(&mut pool, HeuristicWeights::default());
        assert_eq!(pool.candidates[0].cost(), Money(100));
        assert!(pool.candidates[0].score >= pool.candidates[1].score);
    }

    #[test]
    fn rerank_zero_weights_orders_by_id() {
        let mut pool = pool_of(&[("C", 1, None), ("A", 300, None), ("B", 2, None)], 400);
        rerank(&mut pool, HeuristicWeights::ZERO);
        let ids: Vec<_> = pool
            .candidates
            .iter()
            .map(|c| c.subplan.first_id().unwrap().to_string())
            .collect();
        assert_eq!(ids, ["A", "B", "C"]);
    }

    fn mock_with(rules: Vec<MockRule>) -> LlmBackend {
        LlmBackend::Mock(MockBackend::new(MockRules {
            rules,
            default: Some(serde_json::json!({"candidates": []})),
            ..MockRules::default()
        }))
    }

    #[test]
    fn dining_pool_respects_cuisine_and_drops_hallucinations() {
        let (catalog, query) = tiny();
        let backend = mock_with(vec![MockRule::json(
            "CANDIDATES dining",
            serde_json::json!({"candidates": [
                ["R1", "R3", "R1", "R3", "R1", "R3", "R1", "R3", "R1"],
                ["R9", "R1", "R1", "R1", "R1", "R1", "R1", "R1", "R1"],
                ["R2", "R1", "R1", "R1", "R1", "R1", "R1", "R1", "R1"]
            ]}),
        )]);
        let config = PlannerConfig::default();
        let pool = generate_candidates(
            TaskKind::Dining,
            &[cuisine()],
            &catalog,
            &query,
            &backend,
            &Prompts::default(),
            &config,
            Money(1_000_000),
            3,
        )
        .unwrap();
        assert_eq!(pool.len(), 3);
        for c in &pool.candidates {
            assert_eq!(c.subplan.entries.len(), 9);
            for e in &c.subplan.entries {
                assert!(["R1", "R3"].contains(&e.resource_id.as_str()));
            }
        }
        let first: Vec<_> = pool.candidates[0]
            .subplan
            .entries
            .iter()
            .map(|e| e.resource_id.as_str())
            .collect();
        assert_eq!(
            first,
            ["R1", "R3", "R1", "R3", "R1", "R3", "R1", "R3", "R1"]
        );
    }

    #[test]
    fn below_cheapest_hint_flags_over_hint() {
        let (catalog, query) = tiny();
        let backend = mock_with(vec![]);
        let pool = generate_candidates(
            TaskKind::Accommodation,
            &[],
            &catalog,
            &query,
            &backend,
            &Prompts::default(),
            &PlannerConfig::default(),
            Money(1),
            5,
        )
        .unwrap();
        assert_eq!(pool.len(), 2);
        assert!(pool.candidates.iter().all(|c| c.over_hint));
        // H2 at 7500 x 2 nights is the cheapest stay.
        assert_eq!(pool.candidates[0].cost(), Money(15000));
        assert_eq!(pool.candidates[0].subplan.first_id(), Some("H2"));
    }

    #[test]
    fn pool_size_one() {
        let (catalog, query) = tiny();
        let backend = mock_with(vec![]);
        for task in TaskKind::ALL {
            let pool = generate_candidates(
                task,
                &[],
                &catalog,
                &query,
                &backend,
                &Prompts::default(),
                &PlannerConfig::default(),
                Money(1_000_000),
                1,
            )
            .unwrap();
            assert!(pool.len() <= 1);
        }
    }

    #[test]
    fn enumeration_is_cost_ordered_and_complete() {
        // 3 options, 2 distinct slots: C(3,2) = 3 subsets.
        let prices = [5i64, 1, 3];
        let mut sorted = prices;
        sorted.sort();
        let build = |idx: &[usize]| {
            SubPlan::new(
                TaskKind::Attractions,
                idx.iter()
                    .map(|i| SubPlanEntry {
                        day: 1,
                        resource_id: format!("A{i}"),
                        quantity: 1,
                        unit_cost: Money(sorted[*i]),
                    })
                    .collect(),
            )
        };
        let all = k_cheapest_combinations(3, 2, true, 100, build);
        let costs: Vec<i64> = all.iter().map(|s| s.total_cost.cents()).collect();
        assert_eq!(costs, [4, 6, 8]);
        let multi = k_cheapest_combinations(3, 2, false, 100, build);
        assert_eq!(multi.len(), 6);
        assert!(multi.windows(2).all(|w| w[0].total_cost <= w[1].total_cost));
        assert!(k_cheapest_combinations(2, 3, true, 100, build).is_empty());
    }

    #[test]
    fn tree_ticks_through_pool_then_regenerates() {
        let (catalog, query) = tiny();
        let backend = mock_with(vec![]);
        let config = PlannerConfig {
            pool_size: 1,
            regenerations_per_tree: 1,
            ..PlannerConfig::default()
        };
        let prompts = Prompts::default();
        let env = PlanningContext {
            catalog: &catalog,
            query: &query,
            backend: &backend,
            prompts: &prompts,
            config: &config,
            budget_hint: Money(1_000_000),
            round: 1,
        };
        let mut tree = BehaviorTree::new(TaskKind::Accommodation, &[]);
        assert_eq!(tree.tick(&env).unwrap(), Status::Success);
        assert!(tree.state.emitted.is_some());
        assert_eq!(tree.state.generations, 1);
        assert_eq!(tree.tick(&env).unwrap(), Status::Success);
        assert_eq!(tree.state.generations, 2);
        assert_eq!(tree.tick(&env).unwrap(), Status::Failure);
        let nodes: Vec<&str> = tree
            .state
            .activations
            .iter()
            .map(|a| a.node.as_str())
            .collect();
        assert_eq!(&nodes[..4], [GENERATE, RERANK, SELECT, EMIT]);
    }

    #[test]
    fn backend_failure_surfaces() {
        let (catalog, query) = tiny();
        let backend = LlmBackend::Mock(MockBackend::new(MockRules {
            rules: vec![MockRule::failing("CANDIDATES", "down")],
            ..MockRules::default()
        }));
        let config = PlannerConfig::default();
        let prompts = Prompts::default();
        let env = PlanningContext {
            catalog: &catalog,
            query: &query,
            backend: &backend,
            prompts: &prompts,
            config: &config,
            budget_hint: Money(1),
            round: 1,
        };
        let mut tree = BehaviorTree::new(TaskKind::Dining, &[]);
        assert!(matches!(tree.tick(&env), Err(TreeError::Backend(_))));
    }
}
