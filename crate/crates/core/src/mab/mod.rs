//! Collaborative multi-armed bandit.
//!
//! Each arm knows its own mean and joins when the expected price of joining is
//! below the reward it expects to share. The coordinator runs ε-greedy over
//! the participants. Laggards priced out of the game stop wasting exploration.

mod sim;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IclError, ParamError, Result};
use crate::mechanism::EntityId;
use crate::stats::normal_cdf;

pub use sim::{run_mab, MabRound, MabRun};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MabPricing {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

impl Default for MabPricing {
    fn default() -> Self {
        Self {
            b0: 1.0,
            b1: 5.0,
            b2: 10.0,
            kappa1: 2.0,
            kappa2: 4.0,
        }
    }
}

impl MabPricing {
    pub fn zero() -> Self {
        Self {
            b0: 0.0,
            b1: 0.0,
            b2: 0.0,
            kappa1: 0.0,
            kappa2: 0.0,
        }
    }

    pub fn validation_errors(&self, prefix: &str) -> Vec<ParamError> {
        let mut errors = Vec::new();
        for (name, v) in [("b0", self.b0), ("b1", self.b1), ("b2", self.b2)] {
            if !(v.is_finite() && v >= 0.0) {
                errors.push(ParamError::new(format!("{prefix}{name}"), "must be finite and >= 0"));
            }
        }
        if !(self.kappa1.is_finite() && self.kappa2.is_finite()) {
            errors.push(ParamError::new(format!("{prefix}kappa"), "must be finite"));
        } else if self.kappa1 > self.kappa2 {
            errors.push(ParamError::new(format!("{prefix}kappa1"), "must not exceed kappa2"));
        }
        errors
    }

    pub fn validate(&self) -> Result<()> {
        IclError::check(self.validation_errors(""))
    }

    /// Price expected by an arm with mean `mu` whose rewards have noise scale `s`.
    pub fn expected_cost(&self, mu: f64, s_noise: f64) -> f64 {
        self.b0 + self.b1 * normal_cdf(self.kappa1 - mu, s_noise)
            - self.b2 * normal_cdf(mu - self.kappa2, s_noise)
    }
}

/// Price charged for realizing reward `z`. Rewards exactly at a threshold pay `b0`.
pub fn mab_cost(z: f64, pricing: &MabPricing) -> f64 {
    let mut c = pricing.b0;
    if z < pricing.kappa1 {
        c += pricing.b1;
    }
    if z > pricing.kappa2 {
        c -= pricing.b2;
    }
    c
}

/// Shared reward an arm expects under ε-greedy: `(1−ε)·max μ̂ + ε·mean μ̂`.
pub fn expected_shared_reward(empirical_means: &[f64], epsilon: f64) -> f64 {
    let max = empirical_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = empirical_means.iter().sum::<f64>() / empirical_means.len() as f64;
    (1.0 - epsilon) * max + epsilon * mean
}

pub fn participation_condition(
    mu_m: f64,
    empirical_means: &[f64],
    epsilon: f64,
    pricing: &MabPricing,
    s_noise: f64,
) -> bool {
    pricing.expected_cost(mu_m, s_noise) <= expected_shared_reward(empirical_means, epsilon) - mu_m
}

pub fn profit_performance(mu: f64, mu1: f64, pricing: &MabPricing, s_noise: f64) -> f64 {
    mu1 - mu - pricing.expected_cost(mu, s_noise)
}

/// ε-greedy over `participants` (ascending ids), indexing `empirical_means` by arm id.
///
/// Always consumes three uniforms: explore coin, explore pick, tie-break. The
/// explore pick is a quantile of the ordered participant list, so two runs fed
/// the same stream pick comparable ranks.
pub fn select_arm<R: Rng + ?Sized>(
    participants: &[EntityId],
    empirical_means: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Option<EntityId> {
    let coin: f64 = rng.gen();
    let pick: f64 = rng.gen();
    let tie: f64 = rng.gen();
    if participants.is_empty() {
        return None;
    }
    let slot = |u: f64, len: usize| ((u * len as f64) as usize).min(len - 1);
    if coin < epsilon {
        return Some(participants[slot(pick, participants.len())]);
    }
    let best = participants
        .iter()
        .map(|m| empirical_means[m.index()])
        .fold(f64::NEG_INFINITY, f64::max);
    let leaders: Vec<EntityId> = participants
        .iter()
        .copied()
        .filter(|m| empirical_means[m.index()] == best)
        .collect();
    Some(leaders[slot(tie, leaders.len())])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonSchedule {
    Constant { epsilon: f64 },
    /// `ε_t = ε0 · t^(−1/3)` for rounds `t = 1, 2, …`.
    Decay { epsilon0: f64 },
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule::Constant { epsilon: 0.1 }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, round: usize) -> f64 {
        match *self {
            EpsilonSchedule::Constant { epsilon } => epsilon,
            EpsilonSchedule::Decay { epsilon0 } => epsilon0 * ((round + 1) as f64).powf(-1.0 / 3.0),
        }
    }

    fn validation_errors(&self) -> Vec<ParamError> {
        let (name, v) = match *self {
            EpsilonSchedule::Constant { epsilon } => ("epsilon", epsilon),
            EpsilonSchedule::Decay { epsilon0 } => ("epsilon0", epsilon0),
        };
        if (0.0..=1.0).contains(&v) {
            Vec::new()
        } else {
            vec![ParamError::new(format!("epsilon.{name}"), "must lie in [0, 1]")]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPrior {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MabMode {
    #[default]
    Incentivized,
    /// Every arm participates and nobody pays.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MabConfig {
    pub arms: usize,
    pub rounds: usize,
    pub epsilon: EpsilonSchedule,
    pub pricing: MabPricing,
    pub mu_prior: GaussianPrior,
    pub s_noise: f64,
    /// Participants that are not selected still pay `b0`.
    pub idle_pays_base: bool,
    pub mode: MabMode,
    pub replicates: usize,
}

impl Default for MabConfig {
    fn default() -> Self {
        Self {
            arms: 50,
            rounds: 150,
            epsilon: EpsilonSchedule::default(),
            pricing: MabPricing::default(),
            mu_prior: GaussianPrior { mean: 3.0, sd: 1.0 },
            s_noise: 1.0,
            idle_pays_base: true,
            mode: MabMode::Incentivized,
            replicates: 20,
        }
    }
}

impl MabConfig {
    /// Same game without incentives.
    pub fn baseline(&self) -> Self {
        Self {
            mode: MabMode::Baseline,
            ..self.clone()
        }
    }

    pub fn validation_errors(&self) -> Vec<ParamError> {
        let mut errors = Vec::new();
        if self.arms == 0 {
            errors.push(ParamError::new("arms", "must be >= 1"));
        }
        if self.rounds == 0 {
            errors.push(ParamError::new("rounds", "must be >= 1"));
        }
        if self.replicates == 0 {
            errors.push(ParamError::new("replicates", "must be >= 1"));
        }
        errors.extend(self.epsilon.validation_errors());
        errors.extend(self.pricing.validation_errors("pricing."));
        if !(self.mu_prior.mean.is_finite() && self.mu_prior.sd.is_finite() && self.mu_prior.sd >= 0.0)
        {
            errors.push(ParamError::new("mu_prior", "mean must be finite, sd finite and >= 0"));
        }
        if !(self.s_noise.is_finite() && self.s_noise > 0.0) {
            errors.push(ParamError::new("s_noise", "must be finite and > 0"));
        }
        errors
    }

    pub fn validate(&self) -> Result<()> {
        IclError::check(self.validation_errors())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_levels() {
        let p = MabPricing::default();
        assert_eq!(mab_cost(0.0, &p), 6.0);
        assert_eq!(mab_cost(3.0, &p), 1.0);
        assert_eq!(mab_cost(5.0, &p), -9.0);
        assert_eq!(mab_cost(2.0, &p), 1.0);
        assert_eq!(mab_cost(4.0, &p), 1.0);
    }

    #[test]
    fn schedule_values() {
        assert_eq!(EpsilonSchedule::default().at(99), 0.1);
        let d = EpsilonSchedule::Decay { epsilon0: 0.8 };
        assert_eq!(d.at(0), 0.8);
        assert!((d.at(7) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn config_errors_are_collected() {
        let cfg = MabConfig {
            arms: 0,
            rounds: 0,
            s_noise: 0.0,
            pricing: MabPricing {
                b1: -1.0,
                kappa1: 5.0,
                ..MabPricing::default()
            },
            ..MabConfig::default()
        };
        let errors = cfg.validation_errors();
        let fields: Vec<&str> = errors.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, ["arms", "rounds", "pricing.b1", "pricing.kappa1", "s_noise"]);
    }
}
