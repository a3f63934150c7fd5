use serde::{Deserialize, Serialize};

use crate::error::{IclError, ParamError, Result};
use crate::mechanism::ledger::EntityId;

/// How the coordinator weighs participation income against collaboration gain.
///
/// `CostOnly` is the limit of an unbounded weight: only collected costs count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SystemObjective {
    Weighted { lambda: f64 },
    CostOnly,
}

impl Default for SystemObjective {
    fn default() -> Self {
        SystemObjective::Weighted { lambda: 0.0 }
    }
}

impl SystemObjective {
    pub fn weighted(lambda: f64) -> Result<Self> {
        let objective = SystemObjective::Weighted { lambda };
        objective.validate()?;
        Ok(objective)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SystemObjective::Weighted { lambda } if !(lambda.is_finite() && *lambda >= 0.0) => {
                Err(IclError::InvalidParams(vec![ParamError::new(
                    "lambda",
                    "must be finite and >= 0",
                )]))
            }
            _ => Ok(()),
        }
    }

    /// The finite weight, if any.
    pub fn lambda(&self) -> Option<f64> {
        match self {
            SystemObjective::Weighted { lambda } => Some(*lambda),
            SystemObjective::CostOnly => None,
        }
    }
}

/// Per-entity profit breakdown for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfitRecord {
    pub entity: EntityId,
    pub cost: f64,
    pub collab_income: f64,
    pub local_income: f64,
    pub profit: f64,
}

impl ProfitRecord {
    pub fn new(
        entity: EntityId,
        is_participant: bool,
        cost: f64,
        collab_income: f64,
        local_income: f64,
    ) -> Self {
        Self {
            entity,
            cost,
            collab_income,
            local_income,
            profit: participant_profit(is_participant, cost, collab_income, local_income),
        }
    }
}

/// Profit of one candidate: zero unless it participates, otherwise what the
/// collaboration adds over standalone learning, net of its cost.
pub fn participant_profit(
    is_participant: bool,
    cost: f64,
    collab_income: f64,
    local_income: f64,
) -> f64 {
    if is_participant {
        -cost + collab_income - local_income
    } else {
        0.0
    }
}

pub fn system_profit(objective: &SystemObjective, costs: &[f64], collab_income: f64) -> f64 {
    let collected: f64 = costs.iter().sum();
    match objective {
        SystemObjective::Weighted { lambda } => lambda * collected + collab_income,
        SystemObjective::CostOnly => collected,
    }
}

/// Weight under which the system objective coincides with average social welfare.
pub fn social_welfare_lambda(lambda: f64, participant_count: usize) -> f64 {
    (lambda - 1.0) / (participant_count as f64 + 1.0)
}

/// `lambda' * sum(costs) + U(z_A)` with `lambda'` from [`social_welfare_lambda`].
pub fn social_welfare_objective(lambda: f64, costs: &[f64], collab_income: f64) -> f64 {
    let scaled = social_welfare_lambda(lambda, costs.len());
    scaled * costs.iter().sum::<f64>() + collab_income
}

/// Participation incentive. Weak inequality, no slack.
pub fn incent_parti(
    expected_cost: f64,
    expected_collab_income: f64,
    expected_local_income: f64,
) -> bool {
    -expected_cost + expected_collab_income - expected_local_income >= 0.0
}

/// System-side incentive to admit a participant. Weak inequality, no slack.
pub fn incent_sys(lambda: f64, expected_cost: f64, income_with: f64, income_without: f64) -> bool {
    lambda * expected_cost + income_with - income_without >= 0.0
}
