//! Engine configuration shared by the planner stages.

use serde::{Deserialize, Serialize};

use crate::domain::{CommonsenseKind, TaskKind};

/// Initial budget split across the trees, as integer weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetShares {
    pub transportation: u32,
    pub accommodation: u32,
    pub dining: u32,
    pub attractions: u32,
}

impl Default for BudgetShares {
    fn default() -> Self {
        BudgetShares {
            transportation: 30,
            accommodation: 35,
            dining: 20,
            attractions: 15,
        }
    }
}

impl BudgetShares {
    pub fn weight(&self, task: TaskKind) -> u32 {
        match task {
            TaskKind::Transportation => self.transportation,
            TaskKind::Accommodation => self.accommodation,
            TaskKind::Dining => self.dining,
            TaskKind::Attractions => self.attractions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicWeights {
    pub cost: f64,
    pub soft: f64,
    pub rating: f64,
}

impl Default for HeuristicWeights {
    fn default() -> Self {
        HeuristicWeights {
            cost: 0.5,
            soft: 0.3,
            rating: 0.2,
        }
    }
}

impl HeuristicWeights {
    pub const ZERO: HeuristicWeights = HeuristicWeights {
        cost: 0.0,
        soft: 0.0,
        rating: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    #[default]
    Parallel,
    /// Trees planned one after another (the BF-Seq baseline).
    Sequential,
}

/// Component toggles for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Trees commit their top candidate; no joint validation or budget feedback.
    pub no_coordination: bool,
    pub no_rerank: bool,
    /// Heuristic weights forced to zero.
    pub no_heuristic: bool,
}

/// How attraction tickets are billed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttractionPricing {
    /// Listed price times party size.
    #[default]
    PerPerson,
    /// Listed price once per visit.
    PerGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Coordination rounds before giving up.
    pub max_rounds: u32,
    /// Candidate pool size K per tree.
    pub pool_size: usize,
    pub budget_shares: BudgetShares,
    pub heuristic_weights: HeuristicWeights,
    pub mode: ExecutionMode,
    pub ablation: Ablation,
    /// Pool regenerations allowed per tree after its first generation.
    pub regenerations_per_tree: u32,
    pub attractions_per_day: u32,
    pub attraction_pricing: AttractionPricing,
    /// Commonsense constraints attached to every query.
    pub commonsense: Vec<CommonsenseKind>,
    /// Ask the backend for a free-text verdict on delivered plans.
    pub llm_verify: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            max_rounds: 3,
            pool_size: 5,
            budget_shares: BudgetShares::default(),
            heuristic_weights: HeuristicWeights::default(),
            mode: ExecutionMode::Parallel,
            ablation: Ablation::default(),
            regenerations_per_tree: 3,
            attractions_per_day: 1,
            attraction_pricing: AttractionPricing::PerPerson,
            commonsense: CommonsenseKind::ALL.to_vec(),
            llm_verify: false,
        }
    }
}

impl PlannerConfig {
    pub fn effective_weights(&self) -> HeuristicWeights {
        if self.ablation.no_heuristic {
            HeuristicWeights::ZERO
        } else {
            self.heuristic_weights
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.pool_size == 0 {
            return Err("pool_size must be at least 1".into());
        }
        if self.max_rounds == 0 {
            return Err("max_rounds must be at least 1".into());
        }
        let total: u64 = TaskKind::ALL
            .iter()
            .map(|t| u64::from(self.budget_shares.weight(*t)))
            .sum();
        if total == 0 {
            return Err("budget_shares must not all be zero".into());
        }
        let w = self.heuristic_weights;
        if ![w.cost, w.soft, w.rating].iter().all(|x| x.is_finite()) {
            return Err("heuristic weights must be finite".into());
        }
        Ok(())
    }
}
