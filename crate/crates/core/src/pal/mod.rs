//! Incentivized parallel assisted learning (PAL).
//!
//! Entities hold different features on the same subjects, each with its own
//! label. Every round each entity names the partner it expects to profit from
//! most; two entities that name each other exchange residuals and fit models
//! for one another, everyone else boosts locally. Pricing turns the assistance
//! an entity receives into a transfer to the entity that gave it.

mod learner;
mod sim;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IclError, ParamError, Result};
use crate::mechanism::EntityId;

pub use learner::{Learner, Model, Stump};
pub use sim::{
    local_step, run_pal, run_pal_round, AlEntity, ExchangeParams, ExchangeSide, LocalUpdate, PalConfig,
    PalEntitySpec, PalExchange, PalMode, PalRound, PalRun, ProtocolStep, ProtocolTerm, Split,
};

/// Largest participant count for which [`zero_balance_costs`] sums exactly.
pub const MAX_ZERO_BALANCE_PARTICIPANTS: usize = 4096;

/// What each entity learned from its latest collaboration with each partner.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GainEstimates {
    mu_pair: BTreeMap<(EntityId, EntityId), f64>,
    mu_assist: BTreeMap<(EntityId, EntityId), f64>,
    last_collab: BTreeMap<(EntityId, EntityId), usize>,
}

impl GainEstimates {
    /// Stores one exchange between `a` and `b`, replacing older estimates.
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        round: usize,
        a: EntityId,
        b: EntityId,
        mu_ab: f64,
        mu_a_from_b: f64,
        mu_ba: f64,
        mu_b_from_a: f64,
    ) {
        self.mu_pair.insert((a, b), mu_ab);
        self.mu_pair.insert((b, a), mu_ba);
        self.mu_assist.insert((a, b), mu_a_from_b);
        self.mu_assist.insert((b, a), mu_b_from_a);
        self.last_collab.insert((a, b), round);
        self.last_collab.insert((b, a), round);
    }

    /// `μ_{i,j}`: gain of `i` over its previous model when paired with `j`.
    pub fn mu_pair(&self, i: EntityId, j: EntityId) -> Option<f64> {
        self.mu_pair.get(&(i, j)).copied()
    }

    /// `μ_{j←i}`: gain `i` adds to `j` beyond `j`'s local step.
    pub fn mu_assist(&self, j: EntityId, i: EntityId) -> Option<f64> {
        self.mu_assist.get(&(j, i)).copied()
    }

    pub fn last_collab(&self, i: EntityId, j: EntityId) -> Option<usize> {
        self.last_collab.get(&(i, j)).copied()
    }

    pub fn explored(&self, i: EntityId, j: EntityId) -> bool {
        self.mu_pair.contains_key(&(i, j))
    }
}

/// Favor score of a partner. `Unexplored` outranks every score.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub enum Favor {
    Score(f64),
    Unexplored,
}

/// `(u − c_i)·μ_{i,j} + c_j·μ_{j←i}` from the latest collaboration.
pub fn favor_score(i: EntityId, j: EntityId, u: f64, c_i: f64, c_j: f64, estimates: &GainEstimates) -> Favor {
    match (estimates.mu_pair(i, j), estimates.mu_assist(j, i)) {
        (Some(pair), Some(assist)) => Favor::Score((u - c_i) * pair + c_j * assist),
        _ => Favor::Unexplored,
    }
}

/// The partner `i` asks for among `available`, or `None` when it has tried
/// every other entity in `everyone` and none of them helped.
///
/// Ties are broken uniformly with `rng`.
pub fn choose_favorite<R: Rng + ?Sized>(
    i: EntityId,
    everyone: &[EntityId],
    available: &BTreeSet<EntityId>,
    u: f64,
    prices: &BTreeMap<EntityId, f64>,
    estimates: &GainEstimates,
    rng: &mut R,
) -> Option<EntityId> {
    let others = everyone.iter().filter(|&&j| j != i);
    let exhausted = others
        .clone()
        .all(|&j| estimates.mu_pair(i, j).is_some_and(|mu| mu <= 0.0));
    if exhausted {
        return None;
    }
    let scored: Vec<(EntityId, Favor)> = available
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (j, favor_score(i, j, u, prices[&i], prices[&j], estimates)))
        .collect();
    let best = scored
        .iter()
        .map(|(_, f)| *f)
        .reduce(|a, b| if b > a { b } else { a })?;
    let top: Vec<EntityId> = scored.iter().filter(|(_, f)| *f == best).map(|(j, _)| *j).collect();
    top.choose(rng).copied()
}

/// Every pair that names each other, lower id first.
pub fn mutual_pairs(favors: &BTreeMap<EntityId, Option<EntityId>>) -> Vec<(EntityId, EntityId)> {
    favors
        .iter()
        .filter_map(|(&i, &j)| {
            let j = j?;
            (i < j && favors.get(&j).copied().flatten() == Some(i)).then_some((i, j))
        })
        .collect()
}

/// The mutual pair when there is exactly one.
pub fn consensus_pair(favors: &BTreeMap<EntityId, Option<EntityId>>) -> Option<(EntityId, EntityId)> {
    match mutual_pairs(favors).as_slice() {
        [pair] => Some(*pair),
        _ => None,
    }
}

/// Whether three entities with full gain tables admit a mutually favored pair.
///
/// `mu_pair[i][j]` is `μ_{i,j}` and `mu_assist[j][i]` is `μ_{j←i}`.
pub fn theorem3_check(u: f64, costs: [f64; 3], mu_pair: &[[f64; 3]; 3], mu_assist: &[[f64; 3]; 3]) -> bool {
    let score = |i: usize, j: usize| (u - costs[i]) * mu_pair[i][j] + costs[j] * mu_assist[j][i];
    (0..3).any(|p| {
        (0..3).filter(|&q| q != p).any(|q| {
            let r = 3 - p - q;
            score(p, q) >= score(p, r) && score(q, p) >= score(q, r)
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem4Threshold {
    /// Largest linear price admitting a pricing consensus.
    pub c_star: f64,
    /// Index of the entity whose constraint binds at `c_star`.
    pub binding: usize,
}

/// `min_{j≠0} u·(μ_0 − μ_j)/(μ_0 + (K−1)·μ_j)` with `K = means.len()`.
///
/// `means[0]` must be the largest mean.
pub fn theorem4_threshold(u: f64, means: &[f64]) -> Result<Theorem4Threshold> {
    let k = means.len();
    let mut errors = Vec::new();
    if !(u.is_finite() && u > 0.0) {
        errors.push(ParamError::new("u", "must be finite and > 0"));
    }
    if k < 2 {
        errors.push(ParamError::new("means", "need at least 2 participants"));
    }
    if !means.iter().all(|m| m.is_finite() && *m >= 0.0) {
        errors.push(ParamError::new("means", "must be finite and >= 0"));
    } else if means.iter().any(|m| *m > means.first().copied().unwrap_or(0.0)) {
        errors.push(ParamError::new("means", "the first mean must be the largest"));
    }
    IclError::check(errors)?;

    let top = means[0];
    let mut best: Option<Theorem4Threshold> = None;
    for (j, &mu) in means.iter().enumerate().skip(1) {
        let denominator = top + (k - 1) as f64 * mu;
        if denominator == 0.0 {
            return Err(IclError::DegenerateDenominator(EntityId::from(j)));
        }
        let c = u * (top - mu) / denominator;
        if best.map_or(true, |b| c < b.c_star) {
            best = Some(Theorem4Threshold { c_star: c, binding: j });
        }
    }
    Ok(best.expect("k >= 2"))
}

/// Slack of entity `j`'s consensus constraint under linear price `c`:
/// `u·(μ_0 − μ_j) − c·(μ_0 + (K−1)·μ_j)`. Nonnegative means it holds.
pub fn theorem4_slack(u: f64, c: f64, means: &[f64], j: usize) -> f64 {
    let k = means.len() as f64;
    u * (means[0] - means[j]) - c * (means[0] + (k - 1.0) * means[j])
}

/// Price charged to each non-active participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZeroBalancePricing {
    Linear { c: f64 },
}

impl ZeroBalancePricing {
    pub fn cost(&self, z: f64) -> f64 {
        match *self {
            ZeroBalancePricing::Linear { c } => c * z,
        }
    }
}

/// Snaps `x` to a grid coarse enough that sums of up to 4096 values of
/// magnitude at most `scale` are exact.
pub(crate) fn snap(x: f64, scale: f64) -> f64 {
    if scale == 0.0 || !scale.is_finite() {
        return x;
    }
    let (_, exp) = libm::frexp(scale);
    let grid = libm::ldexp(1.0, exp - 40);
    (x / grid).round() * grid
}

/// Non-active participants each pay `C(z)`; the active one receives the total.
pub fn zero_balance_costs(
    z: f64,
    active: EntityId,
    participants: &BTreeSet<EntityId>,
    pricing: &ZeroBalancePricing,
) -> Result<BTreeMap<EntityId, f64>> {
    let k = participants.len();
    let mut errors = Vec::new();
    if !z.is_finite() {
        errors.push(ParamError::new("z", "must be finite"));
    }
    let ZeroBalancePricing::Linear { c } = *pricing;
    if !(c.is_finite() && c >= 0.0) {
        errors.push(ParamError::new("pricing.c", "must be finite and >= 0"));
    }
    if !(2..=MAX_ZERO_BALANCE_PARTICIPANTS).contains(&k) {
        errors.push(ParamError::new(
            "participants",
            format!("need between 2 and {MAX_ZERO_BALANCE_PARTICIPANTS}"),
        ));
    }
    IclError::check(errors)?;
    if !participants.contains(&active) {
        return Err(IclError::ActiveNotParticipant(active));
    }
    let raw = pricing.cost(z);
    let each = snap(raw, raw.abs());
    Ok(participants
        .iter()
        .map(|&m| (m, if m == active { -((k - 1) as f64) * each } else { each }))
        .collect())
}
