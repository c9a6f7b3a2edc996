//! Global coordination: budget allocation and propagation, joint
//! validation of the trees' selections, the memo of rejected combinations,
//! and the bounded round loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::btree::{BehaviorTree, PlanningContext, Status, TreeError};
use crate::catalog::Catalog;
use crate::config::{BudgetShares, ExecutionMode, PlannerConfig};
use crate::domain::{
    CommonsenseKind, Constraint, ConstraintKind, ConstraintSet, HardKind, Money, Plan, Query,
    SubPlan, TaskKind,
};
use crate::evaluation::check;
use crate::llm::{BackendError, CompletionBackend};
use crate::pipeline::{integrate, integrate_provisional, IntegrationError};
use crate::prompts::Prompts;
use crate::util::fnv1a64;

/// A budget dependency between two trees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub from: TaskKind,
    pub to: TaskKind,
    /// Stored for completeness; budget arithmetic does not use it.
    pub weight: f64,
}

impl DependencyEdge {
    pub fn new(from: TaskKind, to: TaskKind, weight: f64) -> Self {
        assert_ne!(from, to, "a dependency edge links two different trees");
        DependencyEdge { from, to, weight }
    }
}

/// Canonical identity of one combination of subplans: per task, the sorted
/// resource ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CombinationKey {
    pub parts: Vec<(TaskKind, Vec<String>)>,
}

impl CombinationKey {
    pub fn of(subplans: &BTreeMap<TaskKind, SubPlan>) -> Self {
        CombinationKey {
            parts: subplans.iter().map(|(t, s)| (*t, s.sorted_ids())).collect(),
        }
    }

    /// Stable 64-bit digest of the canonical form.
    pub fn fingerprint(&self) -> u64 {
        let mut text = String::new();
        for (task, ids) in &self.parts {
            text.push_str(task.as_str());
            text.push(':');
            text.push_str(&ids.join(","));
            text.push(';');
        }
        fnv1a64(text.as_bytes())
    }
}

impl fmt::Display for CombinationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.fingerprint())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub total_budget: Money,
    pub allocations: BTreeMap<TaskKind, Money>,
    pub edges: Vec<DependencyEdge>,
    pub memo: BTreeSet<CombinationKey>,
    pub round: u32,
    pub max_rounds: u32,
    /// The last propagated selection cost more than the total budget.
    pub over_budget: bool,
}

impl GlobalState {
    pub fn new(
        total_budget: Money,
        tasks: &[TaskKind],
        shares: &BudgetShares,
        edges: Vec<DependencyEdge>,
        max_rounds: u32,
    ) -> Self {
        GlobalState {
            total_budget,
            allocations: allocate_budget(total_budget, tasks, shares),
            edges,
            memo: BTreeSet::new(),
            round: 0,
            max_rounds,
            over_budget: false,
        }
    }

    pub fn allocated(&self) -> Money {
        self.allocations.values().sum()
    }
}

/// The task that absorbs rounding remainders: Transportation when present.
fn remainder_task(tasks: impl IntoIterator<Item = TaskKind>) -> Option<TaskKind> {
    let tasks: Vec<TaskKind> = tasks.into_iter().collect();
    tasks
        .iter()
        .copied()
        .find(|t| *t == TaskKind::Transportation)
        .or_else(|| tasks.first().copied())
}

/// Splits `total` by the configured shares. Each share is floored and the
/// leftover cents go to Transportation, so the parts sum to `total`.
pub fn allocate_budget(
    total: Money,
    tasks: &[TaskKind],
    shares: &BudgetShares,
) -> BTreeMap<TaskKind, Money> {
    let mut out: BTreeMap<TaskKind, Money> = tasks.iter().map(|t| (*t, Money::ZERO)).collect();
    let weight_sum: i128 = out.keys().map(|t| i128::from(shares.weight(*t))).sum();
    if weight_sum == 0 {
        if let Some(t) = remainder_task(out.keys().copied()) {
            out.insert(t, total);
        }
        return out;
    }
    for (task, amount) in out.iter_mut() {
        let part = i128::from(total.cents()) * i128::from(shares.weight(*task)) / weight_sum;
        *amount = Money(part as i64);
    }
    let remainder = total - out.values().sum::<Money>();
    if let Some(t) = remainder_task(out.keys().copied()) {
        *out.get_mut(&t).expect("present") += remainder;
    }
    out
}

/// Allocation minus cost: positive is slack, negative is overrun.
pub fn delta_cost(subplan: &SubPlan, allocation: Money) -> Money {
    allocation - subplan.total_cost
}

/// Resets each allocation to its tree's committed cost plus an equal share
/// of the total slack, leftover cents to Transportation. With negative
/// total slack the state is flagged over budget and left as it was.
pub fn propagate_update(state: &mut GlobalState, deltas: &BTreeMap<TaskKind, Money>) {
    let costs: BTreeMap<TaskKind, Money> = state
        .allocations
        .iter()
        .map(|(t, b)| (*t, *b - deltas.get(t).copied().unwrap_or(Money::ZERO)))
        .collect();
    let slack = state.total_budget - costs.values().sum::<Money>();
    if slack.is_negative() {
        state.over_budget = true;
        return;
    }
    state.over_budget = false;
    let n = costs.len().max(1) as i64;
    let share = Money(slack.cents() / n);
    for (task, cost) in &costs {
        state.allocations.insert(*task, *cost + share);
    }
    let remainder = state.total_budget - state.allocated();
    if let Some(t) = remainder_task(state.allocations.keys().copied()) {
        *state.allocations.get_mut(&t).expect("present") += remainder;
    }
}

pub fn record_infeasible(state: &mut GlobalState, subplans: &BTreeMap<TaskKind, SubPlan>) {
    state.memo.insert(CombinationKey::of(subplans));
}

pub fn is_infeasible(state: &GlobalState, subplans: &BTreeMap<TaskKind, SubPlan>) -> bool {
    state.memo.contains(&CombinationKey::of(subplans))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint_id: String,
    pub kind: ConstraintKind,
    pub detail: String,
    pub implicated: Vec<TaskKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "violations", rename_all = "snake_case")]
pub enum GlobalVerdict {
    Feasible,
    Violations(Vec<Violation>),
}

fn global_order(kind: ConstraintKind) -> usize {
    use CommonsenseKind as C;
    match kind {
        ConstraintKind::Hard(HardKind::Budget) => 0,
        ConstraintKind::Commonsense(C::WithinSandbox) => 1,
        ConstraintKind::Commonsense(C::CompleteInformation) => 2,
        ConstraintKind::Commonsense(C::WithinCurrentCity) => 3,
        ConstraintKind::Commonsense(C::ReasonableCityRoute) => 4,
        ConstraintKind::Commonsense(C::NonConflictingTransportation) => 5,
        _ => 6,
    }
}

/// Runs every global checker on the provisional integration of
/// `subplans`, budget first, and reports all violations.
pub fn validate_global(
    subplans: &BTreeMap<TaskKind, SubPlan>,
    globals: &[Constraint],
    catalog: &Catalog,
    query: &Query,
) -> GlobalVerdict {
    let plan = integrate_provisional(subplans, query);
    let mut ordered: Vec<&Constraint> = globals.iter().filter(|c| c.is_hard()).collect();
    ordered.sort_by_key(|c| global_order(c.kind));
    let violations: Vec<Violation> = ordered
        .into_iter()
        .map(|c| check(&plan, c, catalog, query))
        .filter(|c| !c.passed)
        .map(|c| Violation {
            constraint_id: c.constraint_id,
            kind: c.kind,
            detail: c.detail,
            implicated: c.implicated,
        })
        .collect();
    if violations.is_empty() {
        GlobalVerdict::Feasible
    } else {
        GlobalVerdict::Violations(violations)
    }
}

/// Trees that must move after a rejected round: the costliest tree for a
/// budget overrun (earliest task on ties), the implicated trees otherwise.
pub fn attribute(
    violations: &[Violation],
    costs: &BTreeMap<TaskKind, Money>,
) -> BTreeSet<TaskKind> {
    let mut out = BTreeSet::new();
    for v in violations {
        if v.kind == ConstraintKind::Hard(HardKind::Budget) {
            let mut best: Option<(TaskKind, Money)> = None;
            for (task, cost) in costs {
                if best.is_none_or(|(_, c)| *cost > c) {
                    best = Some((*task, *cost));
                }
            }
            out.extend(best.map(|(t, _)| t));
        } else if v.implicated.is_empty() {
            out.extend(costs.keys().copied());
        } else {
            out.extend(v.implicated.iter().copied());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub combination: String,
    pub key: CombinationKey,
    pub costs: BTreeMap<TaskKind, Money>,
    pub total_cost: Money,
    pub violations: Vec<Violation>,
    /// Trees told to advance.
    pub attributed: Vec<TaskKind>,
    pub allocations_after: BTreeMap<TaskKind, Money>,
    pub over_budget: bool,
    /// The trees' own selection was already rejected, so the combination
    /// was taken from the memo-aware search instead.
    pub searched: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnsatReason {
    /// Round limit reached with every tested combination rejected.
    MaxRounds,
    /// Every combination of the current pools has been rejected.
    SearchExhausted,
    /// A tree has no candidate satisfying its local constraints.
    LocallyInfeasible(TaskKind),
}

impl fmt::Display for UnsatReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnsatReason::MaxRounds => {
                f.write_str("round limit reached without a feasible combination")
            }
            UnsatReason::SearchExhausted => f.write_str("every candidate combination was rejected"),
            UnsatReason::LocallyInfeasible(t) => {
                write!(f, "no {t} option satisfies the local constraints")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Feasible(Plan),
    Unsat(UnsatReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinationReport {
    pub outcome: Outcome,
    pub rounds_used: u32,
    pub trace: Vec<RoundRecord>,
    /// Every combination passed to validation, in order.
    pub validation_log: Vec<CombinationKey>,
}

#[derive(Debug, Error)]
pub enum CoordinationError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error("behavior tree error: {0}")]
    Tree(String),
}

/// Shared, read-only inputs of one coordination run.
#[derive(Clone, Copy)]
pub struct CoordinationEnv<'a> {
    pub catalog: &'a Catalog,
    pub query: &'a Query,
    pub constraints: &'a ConstraintSet,
    pub backend: &'a dyn CompletionBackend,
    pub prompts: &'a Prompts,
    pub config: &'a PlannerConfig,
}

fn tick_trees(
    trees: &mut [BehaviorTree],
    which: &BTreeSet<TaskKind>,
    state: &GlobalState,
    env: &CoordinationEnv<'_>,
) -> Vec<(TaskKind, Result<Status, TreeError>)> {
    let context = |task: TaskKind| PlanningContext {
        catalog: env.catalog,
        query: env.query,
        backend: env.backend,
        prompts: env.prompts,
        config: env.config,
        budget_hint: state.allocations.get(&task).copied().unwrap_or(Money::ZERO),
        round: state.round,
    };
    let selected = trees.iter_mut().filter(|t| which.contains(&t.task));
    match env.config.mode {
        ExecutionMode::Sequential => selected
            .map(|t| (t.task, t.tick(&context(t.task))))
            .collect(),
        ExecutionMode::Parallel => std::thread::scope(|s| {
            let handles: Vec<_> = selected
                .map(|t| {
                    let ctx = context(t.task);
                    s.spawn(move || (t.task, t.tick(&ctx)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("tree worker panicked"))
                .collect()
        }),
    }
}

/// First combination of the trees' pools not yet in the memo. Digits of
/// the `fast` trees vary fastest, so they move before the others.
fn search_untested(
    trees: &[BehaviorTree],
    fast: &BTreeSet<TaskKind>,
    state: &GlobalState,
) -> Option<BTreeMap<TaskKind, SubPlan>> {
    let mut order: Vec<&BehaviorTree> = trees.iter().filter(|t| fast.contains(&t.task)).collect();
    order.extend(trees.iter().filter(|t| !fast.contains(&t.task)));
    let pools: Vec<Vec<&SubPlan>> = order
        .iter()
        .map(|t| t.pool().map(|p| p.subplans().collect()).unwrap_or_default())
        .collect();
    if pools.iter().any(Vec::is_empty) {
        return None;
    }
    let mut digits = vec![0usize; pools.len()];
    loop {
        let combo: BTreeMap<TaskKind, SubPlan> = order
            .iter()
            .zip(&digits)
            .zip(&pools)
            .map(|((t, d), p)| (t.task, p[*d].clone()))
            .collect();
        if !is_infeasible(state, &combo) {
            return Some(combo);
        }
        let mut pos = 0;
        loop {
            if pos == digits.len() {
                return None;
            }
            digits[pos] += 1;
            if digits[pos] < pools[pos].len() {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

/// The bounded coordination loop. Each round the trees named in the
/// previous round's attribution tick (all of them in round one), the
/// selection is checked against the memo, jointly validated, and on
/// rejection memoized, fed back into the budget and attributed.
pub fn coordinate(
    trees: &mut [BehaviorTree],
    state: &mut GlobalState,
    env: &CoordinationEnv<'_>,
) -> Result<CoordinationReport, CoordinationError> {
    let mut trace = Vec::new();
    let mut validation_log = Vec::new();
    let mut selection: BTreeMap<TaskKind, SubPlan> = BTreeMap::new();
    let mut to_tick: BTreeSet<TaskKind> = trees.iter().map(|t| t.task).collect();

    let finish = |outcome, state: &GlobalState, trace, validation_log| CoordinationReport {
        outcome,
        rounds_used: state.round,
        trace,
        validation_log,
    };

    while state.round < state.max_rounds {
        state.round += 1;

        let mut stalled = false;
        for (task, result) in tick_trees(trees, &to_tick, state, env) {
            let status = result.map_err(|e| match e {
                TreeError::Backend(b) => CoordinationError::Backend(b),
                TreeError::Tick(t) => CoordinationError::Tree(t.to_string()),
            })?;
            let tree = trees
                .iter()
                .find(|t| t.task == task)
                .expect("ticked tree exists");
            match (status, &tree.state.emitted) {
                (Status::Success, Some(sub)) => {
                    selection.insert(task, sub.clone());
                }
                _ if !selection.contains_key(&task) => {
                    return Ok(finish(
                        Outcome::Unsat(UnsatReason::LocallyInfeasible(task)),
                        state,
                        trace,
                        validation_log,
                    ));
                }
                _ => stalled = true,
            }
        }

        let mut searched = false;
        if stalled || is_infeasible(state, &selection) {
            match search_untested(trees, &to_tick, state) {
                Some(combo) => {
                    selection = combo;
                    searched = true;
                }
                None => {
                    return Ok(finish(
                        Outcome::Unsat(UnsatReason::SearchExhausted),
                        state,
                        trace,
                        validation_log,
                    ))
                }
            }
        }

        let key = CombinationKey::of(&selection);
        validation_log.push(key.clone());
        let violations =
            match validate_global(&selection, &env.constraints.globals, env.catalog, env.query) {
                GlobalVerdict::Feasible => {
                    let plan = integrate(&selection, env.query, env.constraints)?;
                    return Ok(finish(
                        Outcome::Feasible(plan),
                        state,
                        trace,
                        validation_log,
                    ));
                }
                GlobalVerdict::Violations(v) => v,
            };

        record_infeasible(state, &selection);
        let costs: BTreeMap<TaskKind, Money> =
            selection.iter().map(|(t, s)| (*t, s.total_cost)).collect();
        let deltas: BTreeMap<TaskKind, Money> = selection
            .iter()
            .map(|(t, s)| {
                (
                    *t,
                    delta_cost(s, state.allocations.get(t).copied().unwrap_or(Money::ZERO)),
                )
            })
            .collect();
        propagate_update(state, &deltas);
        to_tick = attribute(&violations, &costs);
        log::debug!(
            "query {} round {}: {} violation(s), advancing {:?}",
            env.query.id,
            state.round,
            violations.len(),
            to_tick
        );
        trace.push(RoundRecord {
            round: state.round,
            combination: key.to_string(),
            total_cost: costs.values().sum(),
            key,
            costs,
            violations,
            attributed: to_tick.iter().copied().collect(),
            allocations_after: state.allocations.clone(),
            over_budget: state.over_budget,
            searched,
        });
    }
    Ok(finish(
        Outcome::Unsat(UnsatReason::MaxRounds),
        state,
        trace,
        validation_log,
    ))
}

/// Ablated coordination: every tree commits its top candidate and the
/// result is integrated without joint validation or budget feedback.
pub fn commit_top_candidates(
    trees: &mut [BehaviorTree],
    state: &mut GlobalState,
    env: &CoordinationEnv<'_>,
) -> Result<CoordinationReport, CoordinationError> {
    state.round = 1;
    let all: BTreeSet<TaskKind> = trees.iter().map(|t| t.task).collect();
    let mut selection = BTreeMap::new();
    for (task, result) in tick_trees(trees, &all, state, env) {
        let status = result.map_err(|e| match e {
            TreeError::Backend(b) => CoordinationError::Backend(b),
            TreeError::Tick(t) => CoordinationError::Tree(t.to_string()),
        })?;
        let tree = trees
            .iter()
            .find(|t| t.task == task)
            .expect("ticked tree exists");
        match (status, &tree.state.emitted) {
            (Status::Success, Some(sub)) => {
                selection.insert(task, sub.clone());
            }
            _ => {
                return Ok(CoordinationReport {
                    outcome: Outcome::Unsat(UnsatReason::LocallyInfeasible(task)),
                    rounds_used: 1,
                    trace: Vec::new(),
                    validation_log: Vec::new(),
                })
            }
        }
    }
    let plan = integrate(&selection, env.query, env.constraints)?;
    Ok(CoordinationReport {
        outcome: Outcome::Feasible(plan),
        rounds_used: 1,
        trace: Vec::new(),
        validation_log: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SubPlanEntry;

    fn sub(task: TaskKind, ids: &[&str], cost: i64) -> SubPlan {
        let mut entries: Vec<SubPlanEntry> = ids
            .iter()
            .map(|id| SubPlanEntry {
                day: 1,
                resource_id: (*id).into(),
                quantity: 1,
                unit_cost: Money(0),
            })
            .collect();
        if let Some(first) = entries.first_mut() {
            first.unit_cost = Money(cost);
        }
        SubPlan::new(task, entries)
    }

    #[test]
    fn allocation_examples() {
        let s = BudgetShares::default();
        let a = allocate_budget(Money(100000), &TaskKind::ALL, &s);
        assert_eq!(
            a.values().copied().collect::<Vec<_>>(),
            [Money(30000), Money(35000), Money(20000), Money(15000)]
        );
        let zero = allocate_budget(Money(0), &TaskKind::ALL, &s);
        assert!(zero.values().all(|m| *m == Money(0)));
        let odd = allocate_budget(Money(101), &TaskKind::ALL, &s);
        assert_eq!(
            odd.values().copied().collect::<Vec<_>>(),
            [Money(31), Money(35), Money(20), Money(15)]
        );
    }

    #[test]
    fn delta_examples() {
        let s = sub(TaskKind::Transportation, &["F"], 20000);
        assert_eq!(delta_cost(&s, Money(30000)), Money(10000));
        assert_eq!(delta_cost(&s, Money(20000)), Money(0));
        let s = sub(TaskKind::Transportation, &["F"], 40000);
        assert_eq!(delta_cost(&s, Money(30000)), Money(-10000));
    }

    fn state() -> GlobalState {
        GlobalState::new(
            Money(100000),
            &TaskKind::ALL,
            &BudgetShares::default(),
            vec![],
            3,
        )
    }

    fn deltas_for(state: &GlobalState, costs: [i64; 4]) -> BTreeMap<TaskKind, Money> {
        TaskKind::ALL
            .iter()
            .zip(costs)
            .map(|(t, c)| (*t, state.allocations[t] - Money(c)))
            .collect()
    }

    #[test]
    fn propagation_examples() {
        let mut s = state();
        let d = deltas_for(&s, [20000, 30000, 15000, 10000]);
        propagate_update(&mut s, &d);
        assert_eq!(
            s.allocations.values().copied().collect::<Vec<_>>(),
            [Money(26250), Money(36250), Money(21250), Money(16250)]
        );
        assert_eq!(s.allocated(), Money(100000));

        let mut s = state();
        let before = s.allocations.clone();
        let d = deltas_for(&s, [30000, 35000, 20000, 15000]);
        propagate_update(&mut s, &d);
        assert_eq!(s.allocations, before);

        let mut s = state();
        let before = s.allocations.clone();
        let d = deltas_for(&s, [40000, 40000, 20000, 10000]);
        propagate_update(&mut s, &d);
        assert!(s.over_budget);
        assert_eq!(s.allocations, before);
    }

    #[test]
    fn memo_semantics() {
        let mut s = state();
        let combo: BTreeMap<TaskKind, SubPlan> =
            [(TaskKind::Dining, sub(TaskKind::Dining, &["R2", "R1"], 5))].into();
        let other: BTreeMap<TaskKind, SubPlan> =
            [(TaskKind::Dining, sub(TaskKind::Dining, &["R3"], 5))].into();
        assert!(!is_infeasible(&s, &combo));
        record_infeasible(&mut s, &combo);
        record_infeasible(&mut s, &combo);
        assert_eq!(s.memo.len(), 1);
        assert!(is_infeasible(&s, &combo));
        assert!(!is_infeasible(&s, &other));
        // Order within a subplan does not matter.
        let swapped: BTreeMap<TaskKind, SubPlan> =
            [(TaskKind::Dining, sub(TaskKind::Dining, &["R1", "R2"], 5))].into();
        assert!(is_infeasible(&s, &swapped));
    }

    #[test]
    fn budget_attribution_picks_costliest() {
        let v = Violation {
            constraint_id: "budget".into(),
            kind: ConstraintKind::Hard(HardKind::Budget),
            detail: String::new(),
            implicated: TaskKind::ALL.to_vec(),
        };
        let costs: BTreeMap<TaskKind, Money> = [
            (TaskKind::Transportation, Money(10)),
            (TaskKind::Accommodation, Money(30)),
            (TaskKind::Dining, Money(30)),
            (TaskKind::Attractions, Money(1)),
        ]
        .into();
        assert_eq!(
            attribute(&[v], &costs),
            BTreeSet::from([TaskKind::Accommodation])
        );
    }

    #[test]
    fn fingerprint_is_stable() {
        let combo: BTreeMap<TaskKind, SubPlan> =
            [(TaskKind::Dining, sub(TaskKind::Dining, &["R1"], 5))].into();
        let key = CombinationKey::of(&combo);
        assert_eq!(key.fingerprint(), fnv1a64(b"dining:R1;"));
    }
}
