//! Exact equilibrium check for small games.
//!
//! Each candidate draws its standalone gain from a finite distribution. When
//! it participates it pays `fee`, plus `active_surcharge` in rounds where it is
//! selected. Participants are selected independently with probability `rho`
//! and the collaboration gain is the mean of the selected outcomes.

use serde::{Deserialize, Serialize};

use super::dist::{for_each_joint, FiniteDist};
use super::ledger::EntityId;
use super::profit::{incent_parti, incent_sys};
use super::utility::UtilityIncome;
use crate::error::{IclError, ParamError, Result};

pub const MAX_CANDIDATES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallCandidate {
    pub outcome: FiniteDist,
    pub fee: f64,
    pub active_surcharge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallGame {
    pub candidates: Vec<SmallCandidate>,
    pub rho: f64,
    pub lambda: f64,
    pub utility: UtilityIncome,
    /// Gain realized when nobody is selected.
    pub empty_gain: f64,
}

impl SmallGame {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.candidates.len() > MAX_CANDIDATES {
            errors.push(ParamError::new(
                "candidates",
                format!("at most {MAX_CANDIDATES} supported"),
            ));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            errors.push(ParamError::new("rho", "must lie in (0, 1]"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            errors.push(ParamError::new("lambda", "must be finite and >= 0"));
        }
        if !self.empty_gain.is_finite() {
            errors.push(ParamError::new("empty_gain", "must be finite"));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if !(c.fee.is_finite() && c.active_surcharge.is_finite()) {
                errors.push(ParamError::new(format!("candidates[{i}]"), "costs must be finite"));
            }
        }
        IclError::check(errors)?;
        self.utility.validate()
    }

    /// Expected cost paid by a participant.
    pub fn expected_cost(&self, m: usize) -> f64 {
        let c = &self.candidates[m];
        c.fee + self.rho * c.active_surcharge
    }

    /// `E{U(x_m)}`.
    pub fn expected_local_income(&self, m: usize) -> f64 {
        self.candidates[m]
            .outcome
            .expect(|x| self.utility.income(x))
    }

    /// `E{U(z_A)}` when exactly the members of `participants` take part.
    pub fn expected_collab_income(&self, participants: &[usize]) -> f64 {
        let k = participants.len();
        let mut total = 0.0;
        for mask in 0u32..(1 << k) {
            let active: Vec<usize> = (0..k)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| participants[i])
                .collect();
            let a = active.len() as i32;
            let weight = self.rho.powi(a) * (1.0 - self.rho).powi(k as i32 - a);
            if weight == 0.0 {
                continue;
            }
            let income = if active.is_empty() {
                self.utility.income(self.empty_gain)
            } else {
                let dists: Vec<&FiniteDist> =
                    active.iter().map(|&m| &self.candidates[m].outcome).collect();
                let mut acc = 0.0;
                for_each_joint(&dists, |values, p| {
                    let z = values.iter().sum::<f64>() / values.len() as f64;
                    acc += p * self.utility.income(z);
                });
                acc
            };
            total += weight * income;
        }
        total
    }

    fn enumeration_cost(&self, members: &[usize]) -> u128 {
        members
            .iter()
            .map(|&m| 1 + self.candidates[m].outcome.len() as u128)
            .product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub entity: EntityId,
    pub is_participant: bool,
    /// Expected profit from taking part, with the other candidates fixed.
    pub participation_margin: f64,
    /// `λ·E{c_m} + E{U(z_A)} − E{U(z_A^(−m))}`.
    pub system_margin: f64,
    pub participation_holds: bool,
    pub system_holds: bool,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    pub candidates: Vec<CandidateReport>,
    pub is_equilibrium: bool,
}

/// Checks whether `profile` is an equilibrium: every candidate participates
/// exactly when both incentive conditions hold.
pub fn nash_check(game: &SmallGame, profile: &[bool], budget: u128) -> Result<NashReport> {
    game.validate()?;
    let n = game.candidates.len();
    if profile.len() != n {
        return Err(IclError::DimensionMismatch {
            expected: n,
            found: profile.len(),
        });
    }
    let others = |m: usize| -> Vec<usize> { (0..n).filter(|&j| j != m && profile[j]).collect() };

    let mut required: u128 = 0;
    for m in 0..n {
        let without = others(m);
        let mut with = without.clone();
        with.push(m);
        required = required
            .saturating_add(game.enumeration_cost(&with))
            .saturating_add(game.enumeration_cost(&without));
    }
    if required > budget {
        return Err(IclError::InstanceTooLarge { required, budget });
    }

    let mut reports = Vec::with_capacity(n);
    for (m, &is_participant) in profile.iter().enumerate() {
        let without = others(m);
        let mut with = without.clone();
        with.push(m);
        with.sort_unstable();
        let cost = game.expected_cost(m);
        let income_with = game.expected_collab_income(&with);
        let income_without = game.expected_collab_income(&without);
        let local = game.expected_local_income(m);

        let participation_holds = incent_parti(cost, income_with, local);
        let system_holds = incent_sys(game.lambda, cost, income_with, income_without);
        reports.push(CandidateReport {
            entity: EntityId::from(m),
            is_participant,
            participation_margin: -cost + income_with - local,
            system_margin: game.lambda * cost + income_with - income_without,
            participation_holds,
            system_holds,
            consistent: is_participant == (participation_holds && system_holds),
        });
    }
    let is_equilibrium = reports.iter().all(|r| r.consistent);
    Ok(NashReport {
        candidates: reports,
        is_equilibrium,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game(outcomes: &[f64], fees: &[f64]) -> SmallGame {
        SmallGame {
            candidates: outcomes
                .iter()
                .zip(fees)
                .map(|(&x, &fee)| SmallCandidate {
                    outcome: FiniteDist::point(x),
                    fee,
                    active_surcharge: 0.0,
                })
                .collect(),
            rho: 1.0,
            lambda: 0.0,
            utility: UtilityIncome::identity(),
            empty_gain: 0.0,
        }
    }

    #[test]
    fn vacuous_empty_profile() {
        let g = game(&[1.0, 2.0], &[5.0, 5.0]);
        let r = nash_check(&g, &[false, false], 1000).unwrap();
        assert!(r.candidates.iter().all(|c| !c.participation_holds));
        assert!(r.is_equilibrium);
    }

    #[test]
    fn dimension_and_budget_errors() {
        let g = game(&[1.0, 2.0], &[0.0, 0.0]);
        assert!(matches!(
            nash_check(&g, &[true], 1000),
            Err(IclError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            nash_check(&g, &[true, true], 3),
            Err(IclError::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn partial_selection_expectation() {
        let mut g = game(&[4.0, 0.0], &[0.0, 0.0]);
        g.rho = 0.5;
        g.empty_gain = 1.0;
        // {}: 1, {0}: 4, {1}: 0, {0,1}: 2, each with weight 1/4
        assert!((g.expected_collab_income(&[0, 1]) - 1.75).abs() < 1e-15);
        assert!((g.expected_collab_income(&[0]) - 2.5).abs() < 1e-15);
        assert_eq!(g.expected_collab_income(&[]), 1.0);
    }
}
