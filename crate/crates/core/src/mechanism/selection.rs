use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dist::{for_each_joint, FiniteDist};
use super::ledger::EntityId;
use super::utility::UtilityIncome;
use crate::error::{IclError, ParamError, Result};

pub const SELECTION_TOLERANCE: f64 = 1e-9;

/// Per-participant activation probabilities with `Σq = ρ·|P|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionVector {
    q: BTreeMap<EntityId, f64>,
    rho: f64,
}

impl SelectionVector {
    pub fn new(q: BTreeMap<EntityId, f64>, rho: f64) -> Result<Self> {
        let sel = Self { q, rho };
        sel.validate()?;
        Ok(sel)
    }

    /// Every participant gets `q = ρ`.
    pub fn uniform(participants: impl IntoIterator<Item = EntityId>, rho: f64) -> Result<Self> {
        Self::new(participants.into_iter().map(|m| (m, rho)).collect(), rho)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(IclError::InvalidSelectionVector(format!(
                "rho = {} is outside (0, 1]",
                self.rho
            )));
        }
        if let Some((m, q)) = self.q.iter().find(|(_, q)| !(0.0..=1.0).contains(*q)) {
            return Err(IclError::InvalidSelectionVector(format!(
                "q[{m}] = {q} is outside [0, 1]"
            )));
        }
        let total: f64 = self.q.values().sum();
        let target = self.rho * self.q.len() as f64;
        if (total - target).abs() > SELECTION_TOLERANCE {
            return Err(IclError::InvalidSelectionVector(format!(
                "sum of q is {total}, expected rho*|P| = {target}"
            )));
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn q(&self) -> &BTreeMap<EntityId, f64> {
        &self.q
    }

    pub fn get(&self, m: EntityId) -> Option<f64> {
        self.q.get(&m).copied()
    }
}

/// Draws `A = {m : b_m = 1}` with independent `b_m ~ Bernoulli(q_m)`.
///
/// Draws happen in ascending id order, one uniform per participant.
pub fn sample_active<R: Rng + ?Sized>(
    sel: &SelectionVector,
    participants: &BTreeSet<EntityId>,
    rng: &mut R,
) -> Result<BTreeSet<EntityId>> {
    sel.validate()?;
    if sel.q.len() != participants.len() || !sel.q.keys().all(|m| participants.contains(m)) {
        return Err(IclError::InvalidSelectionVector(
            "selection vector is not keyed exactly by the participants".into(),
        ));
    }
    Ok(sel
        .q
        .iter()
        .filter(|(_, &q)| rng.gen::<f64>() < q)
        .map(|(&m, _)| m)
        .collect())
}

/// An objective over selection vectors, evaluated exactly.
pub trait SelectionObjective {
    fn ids(&self) -> &[EntityId];

    /// Work units spent by one call to [`SelectionObjective::value`].
    fn evaluation_cost(&self) -> u128;

    /// `q` is aligned with [`SelectionObjective::ids`].
    fn value(&self, q: &[f64]) -> f64;
}

/// `E{U(z_A)}` for participants with finitely supported gain outcomes.
///
/// The expected income of every active subset is tabulated once, so each
/// evaluation is a single pass over the `2^n` subsets.
#[derive(Debug, Clone)]
pub struct EnumeratedGainObjective {
    ids: Vec<EntityId>,
    subset_income: Vec<f64>,
}

impl EnumeratedGainObjective {
    /// `collab_gain` maps the active members' realized outcomes (in `ids`
    /// order) to `z_A`. It is not called for the empty set, which earns
    /// `U(empty_gain)`.
    pub fn new(
        participants: Vec<(EntityId, FiniteDist)>,
        utility: &UtilityIncome,
        empty_gain: f64,
        collab_gain: impl Fn(&[(EntityId, f64)]) -> f64,
        budget: u128,
    ) -> Result<Self> {
        let n = participants.len();
        if n > 24 {
            return Err(IclError::InstanceTooLarge {
                required: 1u128 << n,
                budget,
            });
        }
        let required: u128 = participants
            .iter()
            .map(|(_, d)| 1 + d.len() as u128)
            .product();
        if required > budget {
            return Err(IclError::InstanceTooLarge { required, budget });
        }
        let ids: Vec<EntityId> = participants.iter().map(|(m, _)| *m).collect();
        let mut subset_income = vec![0.0; 1 << n];
        let mut outcomes = Vec::with_capacity(n);
        for (mask, slot) in subset_income.iter_mut().enumerate() {
            if mask == 0 {
                *slot = utility.income(empty_gain);
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let dists: Vec<&FiniteDist> = members.iter().map(|&i| &participants[i].1).collect();
            let mut acc = 0.0;
            for_each_joint(&dists, |values, p| {
                outcomes.clear();
                outcomes.extend(members.iter().zip(values).map(|(&i, &v)| (ids[i], v)));
                acc += p * utility.income(collab_gain(&outcomes));
            });
            *slot = acc;
        }
        Ok(Self { ids, subset_income })
    }

    /// Expected income of the fixed active set `mask` (bit `i` is `ids[i]`).
    pub fn subset_income(&self, mask: usize) -> f64 {
        self.subset_income[mask]
    }
}

impl SelectionObjective for EnumeratedGainObjective {
    fn ids(&self) -> &[EntityId] {
        &self.ids
    }

    fn evaluation_cost(&self) -> u128 {
        self.subset_income.len() as u128
    }

    fn value(&self, q: &[f64]) -> f64 {
        subset_weights(q)
            .iter()
            .zip(&self.subset_income)
            .map(|(w, g)| w * g)
            .sum()
    }
}

/// Probability of every active mask under independent Bernoulli draws.
pub fn subset_weights(q: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(1 << q.len());
    w.push(1.0);
    for (i, &qi) in q.iter().enumerate() {
        let half = 1usize << i;
        for j in 0..half {
            w.push(w[j] * qi);
            w[j] *= 1.0 - qi;
        }
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub step: f64,
    /// Cap on `grid points × evaluation cost`.
    pub budget: u128,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            step: 0.05,
            budget: 1 << 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOptimum {
    pub selection: SelectionVector,
    pub value: f64,
    pub grid_points: u128,
}

/// Exhaustive search over `q ∈ {0, step, …, 1}^n` with `Σq = ρn`.
///
/// Ties keep the first point in lexicographic order of `q`.
pub fn optimize_selection(
    rho: f64,
    objective: &impl SelectionObjective,
    options: SearchOptions,
) -> Result<SelectionOptimum> {
    let ids = objective.ids();
    let n = ids.len();
    let mut errors = Vec::new();
    let per_one = (1.0 / options.step).round();
    if !(options.step > 0.0 && options.step <= 1.0) || (per_one * options.step - 1.0).abs() > 1e-9
    {
        errors.push(ParamError::new("step", "must divide 1 evenly"));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        errors.push(ParamError::new("rho", "must lie in (0, 1]"));
    }
    if n == 0 {
        errors.push(ParamError::new("participants", "must not be empty"));
    }
    IclError::check(errors)?;

    let per_one = per_one as u32;
    let target = rho * n as f64 * per_one as f64;
    if (target - target.round()).abs() > 1e-6 {
        return Err(IclError::InvalidSelectionVector(format!(
            "rho*|P| = {} is not a multiple of the grid step {}",
            rho * n as f64,
            options.step
        )));
    }
    let total = target.round() as u32;

    let points = count_compositions(n, total, per_one);
    let required = points.saturating_mul(objective.evaluation_cost());
    if required > options.budget {
        return Err(IclError::InstanceTooLarge {
            required,
            budget: options.budget,
        });
    }

    let mut units = vec![0u32; n];
    let mut q = vec![0.0; n];
    let mut best: Option<(Vec<f64>, f64)> = None;
    walk(0, total, per_one, &mut units, &mut |units| {
        for (qi, &u) in q.iter_mut().zip(units) {
            *qi = u as f64 / per_one as f64;
        }
        let v = objective.value(&q);
        if best.as_ref().map_or(true, |(_, b)| v > *b) {
            best = Some((q.clone(), v));
        }
    });
    let (q_best, value) = best.expect("grid has at least one point");
    let selection = SelectionVector {
        q: ids.iter().copied().zip(q_best).collect(),
        rho,
    };
    selection.validate()?;
    Ok(SelectionOptimum {
        selection,
        value,
        grid_points: points,
    })
}

fn walk(i: usize, remaining: u32, cap: u32, units: &mut [u32], visit: &mut impl FnMut(&[u32])) {
    let n = units.len();
    if i + 1 == n {
        if remaining <= cap {
            units[i] = remaining;
            visit(units);
        }
        return;
    }
    let slots_after = (n - i - 1) as u32;
    let lo = remaining.saturating_sub(slots_after * cap);
    let hi = remaining.min(cap);
    for u in lo..=hi {
        units[i] = u;
        walk(i + 1, remaining - u, cap, units, visit);
    }
}

/// Number of `n`-tuples in `{0..=cap}` summing to `total`.
fn count_compositions(n: usize, total: u32, cap: u32) -> u128 {
    let total = total as usize;
    let mut ways = vec![0u128; total + 1];
    ways[0] = 1;
    for _ in 0..n {
        let mut next = vec![0u128; total + 1];
        for (s, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for u in 0..=(cap as usize).min(total - s) {
                next[s + u] = next[s + u].saturating_add(w);
            }
        }
        ways = next;
    }
    ways[total]
}
