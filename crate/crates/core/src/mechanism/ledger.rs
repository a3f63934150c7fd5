//! Per-round bookkeeping shared by every backend.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{IclError, Result};
use crate::mechanism::profit::{participant_profit, social_welfare_lambda, system_profit, SystemObjective};
use crate::mechanism::utility::UtilityIncome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for EntityId {
    fn from(i: usize) -> Self {
        EntityId(i as u32)
    }
}

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// What a backend reports for one round before profits are derived.
#[derive(Debug, Clone, Default)]
pub struct RoundInput {
    pub participants: BTreeSet<EntityId>,
    pub active: BTreeSet<EntityId>,
    /// Standalone gain `z_m` of each participant.
    pub realized_gains: BTreeMap<EntityId, f64>,
    /// Collaboration gain `z_A` realized by the active set.
    pub collab_gain: f64,
    /// Per-participant collaboration gain, for games where participants do
    /// not share one outcome. Empty means everyone enjoys `collab_gain`.
    pub entity_collab_gains: BTreeMap<EntityId, f64>,
    pub costs: BTreeMap<EntityId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub participants: BTreeSet<EntityId>,
    pub active: BTreeSet<EntityId>,
    pub realized_gains: BTreeMap<EntityId, f64>,
    pub collab_gain: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub entity_collab_gains: BTreeMap<EntityId, f64>,
    pub costs: BTreeMap<EntityId, f64>,
    pub system_profit: f64,
    pub participant_profits: BTreeMap<EntityId, f64>,
}

impl RoundRecord {
    pub fn collab_gain_for(&self, m: EntityId) -> f64 {
        self.entity_collab_gains.get(&m).copied().unwrap_or(self.collab_gain)
    }

    /// Costs summed in ascending id order.
    pub fn sum_costs(&self) -> f64 {
        self.costs.values().sum()
    }

    pub fn shares_one_gain(&self) -> bool {
        self.entity_collab_gains.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameLedger {
    pub objective: SystemObjective,
    pub utility: UtilityIncome,
    pub candidates: BTreeSet<EntityId>,
    pub rounds: Vec<RoundRecord>,
}

impl GameLedger {
    pub fn new(
        objective: SystemObjective,
        utility: UtilityIncome,
        candidates: impl IntoIterator<Item = EntityId>,
    ) -> Self {
        Self {
            objective,
            utility,
            candidates: candidates.into_iter().collect(),
            rounds: Vec::new(),
        }
    }

    /// Validates the round against the ledger invariants, derives profits and appends it.
    pub fn record(&mut self, input: RoundInput) -> Result<&RoundRecord> {
        self.check_input(&input)?;
        let u = &self.utility;
        let costs: Vec<f64> = input.costs.values().copied().collect();
        let system_profit = system_profit(&self.objective, &costs, u.income(input.collab_gain));
        let participant_profits = input
            .participants
            .iter()
            .map(|m| {
                let z_collab = input
                    .entity_collab_gains
                    .get(m)
                    .copied()
                    .unwrap_or(input.collab_gain);
                let profit = participant_profit(
                    true,
                    input.costs[m],
                    u.income(z_collab),
                    u.income(input.realized_gains[m]),
                );
                (*m, profit)
            })
            .collect();
        self.rounds.push(RoundRecord {
            round: self.rounds.len(),
            participants: input.participants,
            active: input.active,
            realized_gains: input.realized_gains,
            collab_gain: input.collab_gain,
            entity_collab_gains: input.entity_collab_gains,
            costs: input.costs,
            system_profit,
            participant_profits,
        });
        Ok(self.rounds.last().expect("just pushed"))
    }

    fn check_input(&self, input: &RoundInput) -> Result<()> {
        if !input.active.is_subset(&input.participants) {
            return Err(IclError::Ledger("active set is not a subset of participants".into()));
        }
        if !input.participants.is_subset(&self.candidates) {
            return Err(IclError::Ledger("participants are not all candidates".into()));
        }
        if !input.costs.keys().eq(input.participants.iter()) {
            return Err(IclError::Ledger("costs must be keyed exactly by participants".into()));
        }
        if !input.realized_gains.keys().eq(input.participants.iter()) {
            return Err(IclError::Ledger(
                "realized gains must be keyed exactly by participants".into(),
            ));
        }
        if !input.entity_collab_gains.is_empty()
            && !input.entity_collab_gains.keys().eq(input.participants.iter())
        {
            return Err(IclError::Ledger(
                "per-entity collaboration gains must cover exactly the participants".into(),
            ));
        }
        Ok(())
    }

    /// Re-checks every stored round (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        for r in &self.rounds {
            self.check_input(&RoundInput {
                participants: r.participants.clone(),
                active: r.active.clone(),
                realized_gains: r.realized_gains.clone(),
                collab_gain: r.collab_gain,
                entity_collab_gains: r.entity_collab_gains.clone(),
                costs: r.costs.clone(),
            })?;
            if !r.participant_profits.keys().eq(r.participants.iter()) {
                return Err(IclError::Ledger("profits must be keyed by participants".into()));
            }
        }
        Ok(())
    }

    /// `system + sum(participant profits)` minus its closed form
    /// `(lambda - 1) sum(c) + U(z_A) + sum_m U(z_A,m) - sum_m U(z_m)`.
    ///
    /// `None` in cost-only mode, where the closed form has no finite weight.
    pub fn profit_identity_residual(&self, r: &RoundRecord) -> Option<f64> {
        let lambda = self.objective.lambda()?;
        let u = &self.utility;
        let lhs = r.system_profit + r.participant_profits.values().sum::<f64>();
        let collab: f64 = r.participants.iter().map(|m| u.income(r.collab_gain_for(*m))).sum();
        let local: f64 = r.realized_gains.values().map(|z| u.income(*z)).sum();
        let rhs = (lambda - 1.0) * r.sum_costs() + u.income(r.collab_gain) + collab - local;
        Some(lhs - rhs)
    }

    /// Average social welfare plus the mechanism-independent constant, minus the
    /// objective evaluated at the rescaled weight. Only defined for rounds where
    /// every participant enjoys the same collaboration gain.
    pub fn welfare_identity_residual(&self, r: &RoundRecord) -> Option<f64> {
        let lambda = self.objective.lambda()?;
        if !r.shares_one_gain() {
            return None;
        }
        let u = &self.utility;
        let k = r.participants.len() as f64 + 1.0;
        let welfare = (r.system_profit + r.participant_profits.values().sum::<f64>()) / k;
        let constant: f64 = r.realized_gains.values().map(|z| u.income(*z)).sum::<f64>() / k;
        let objective = social_welfare_lambda(lambda, r.participants.len()) * r.sum_costs()
            + u.income(r.collab_gain);
        Some(welfare + constant - objective)
    }
}
