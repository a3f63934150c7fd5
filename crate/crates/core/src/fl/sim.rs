use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::task::{Task, TaskInstance};
use super::{
    aggregate, central_gradient, client_decide, expected_cost, fl_cost, jenks_two_class,
    server_objective, server_update, ClientHistory, FlPricing, GRADIENT_STEP,
};
use crate::error::{IclError, ParamError, Result};
use crate::mechanism::{EntityId, GameLedger, RoundInput, SystemObjective, UtilityIncome};
use crate::rng::RunSeed;
use crate::stats::dot;

const TASK_STREAM: u32 = 0x4601;
const BYZANTINE_STREAM: u32 = 0x4602;
const MODIFY_STREAM: u32 = 0x4603;
const SELECT_STREAM: u32 = 0x4604;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantineKind {
    None,
    /// Submits a fresh uniform random model every round.
    #[default]
    RandomModification,
    /// Trains honestly on corrupted local data.
    LabelFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlMode {
    #[default]
    Incentivized,
    /// Every client participates and nobody pays.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlConfig {
    pub clients: usize,
    pub rounds: usize,
    pub task: Task,
    /// Initial pricing; θ evolves during an incentivized run.
    pub pricing: FlPricing,
    pub lambda: f64,
    pub byzantine_kind: ByzantineKind,
    pub byzantine_ratio: f64,
    /// Random-modification models are uniform on `[−bound, bound]^d`.
    pub random_model_bound: f64,
    /// Clients scale the collaboration gain they expect by this factor.
    pub belief_bias: f64,
    /// Aggregation weights ζ. Empty means all ones.
    pub weights: Vec<f64>,
    pub mode: FlMode,
    /// Reset θ2 each round to the natural break of the clients' lags.
    pub adaptive_theta2: bool,
    pub replicates: usize,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            clients: 50,
            rounds: 100,
            task: Task::default(),
            pricing: FlPricing::default(),
            lambda: 0.1,
            byzantine_kind: ByzantineKind::default(),
            byzantine_ratio: 0.3,
            random_model_bound: 0.25,
            belief_bias: 1.0,
            weights: Vec::new(),
            mode: FlMode::default(),
            adaptive_theta2: true,
            replicates: 20,
        }
    }
}

impl FlConfig {
    pub fn validation_errors(&self) -> Vec<ParamError> {
        let mut errors = Vec::new();
        let mut need = |ok: bool, field: &str, reason: &str| {
            if !ok {
                errors.push(ParamError::new(field, reason));
            }
        };
        need(self.clients >= 1, "clients", "must be >= 1");
        need(self.rounds >= 1, "rounds", "must be >= 1");
        need(self.replicates >= 1, "replicates", "must be >= 1");
        need(self.lambda.is_finite() && self.lambda >= 0.0, "lambda", "must be finite and >= 0");
        need((0.0..=1.0).contains(&self.byzantine_ratio), "byzantine_ratio", "must lie in [0, 1]");
        need(
            self.random_model_bound.is_finite() && self.random_model_bound >= 0.0,
            "random_model_bound",
            "must be finite and >= 0",
        );
        need(
            self.belief_bias.is_finite() && self.belief_bias >= 0.0,
            "belief_bias",
            "must be finite and >= 0",
        );
        need(
            self.weights.is_empty() || self.weights.len() == self.clients,
            "weights",
            "must be empty or have one entry per client",
        );
        need(
            self.weights.iter().all(|w| w.is_finite() && *w > 0.0),
            "weights",
            "must be finite and > 0",
        );
        errors.extend(self.task.validation_errors());
        errors.extend(self.pricing.validation_errors("pricing."));
        errors
    }

    pub fn validate(&self) -> Result<()> {
        IclError::check(self.validation_errors())
    }

    fn client_weights(&self) -> Vec<f64> {
        if self.weights.is_empty() {
            vec![1.0; self.clients]
        } else {
            self.weights.clone()
        }
    }
}

/// `max(⌊ρ·n⌋, 1)` for nonempty `n`.
pub(crate) fn active_count(rho: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    ((rho * n as f64 + 1e-9).floor() as usize).clamp(1, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlRound {
    pub round: usize,
    pub n_participants: usize,
    pub n_active: usize,
    pub collab_gain: f64,
    pub system_profit: f64,
    pub sum_costs: f64,
    pub theta1: f64,
    pub theta2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlRun {
    pub rounds: Vec<FlRound>,
    pub ledger: GameLedger,
    pub byzantine: Vec<bool>,
    /// Pricing in force at each round, aligned with `rounds`.
    pub pricing: Vec<FlPricing>,
    pub final_model: Vec<f64>,
}

impl FlRun {
    pub fn final_gain(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |r| r.collab_gain)
    }
}

fn history(
    task: &TaskInstance,
    round: usize,
    xbar: &[f64],
    zbar: f64,
    x_m: &[f64],
    share: f64,
) -> ClientHistory {
    let diff: Vec<f64> = xbar.iter().zip(x_m).map(|(a, b)| a - b).collect();
    ClientHistory {
        last_active: round,
        zbar,
        z: task.gain(x_m),
        deviation: share * dot(&task.gain_gradient(xbar), &diff),
    }
}

/// Runs the incentivized loop for `config.rounds` rounds.
///
/// Round 0 is an unpriced warm-up in which every client trains on the zero
/// model and is aggregated, so each client has a history before pricing
/// starts. It is not recorded in the ledger.
///
/// Byzantine membership, data, random-modification models and the active
/// draw all come from separate streams, so an incentivized run and its
/// baseline under one seed differ only through who participates.
pub fn run_fl(config: &FlConfig, seed: RunSeed) -> Result<FlRun> {
    config.validate()?;
    let m_clients = config.clients;
    let incentivized = config.mode == FlMode::Incentivized;

    let n_byz = ((config.byzantine_ratio * m_clients as f64).round() as usize).min(m_clients);
    let mut byzantine = vec![false; m_clients];
    if config.byzantine_kind != ByzantineKind::None {
        for i in sample(&mut seed.stream(BYZANTINE_STREAM, 0), m_clients, n_byz) {
            byzantine[i] = true;
        }
    }
    let flipped: Vec<bool> = byzantine
        .iter()
        .map(|&b| b && config.byzantine_kind == ByzantineKind::LabelFlip)
        .collect();
    let task = TaskInstance::generate(&config.task, &flipped, &mut seed.stream(TASK_STREAM, 0))?;
    let dim = task.dim();
    let weights = config.client_weights();
    let bound = config.random_model_bound;

    let submit = |m: usize, global: &[f64], round: usize| -> Vec<f64> {
        if byzantine[m] && config.byzantine_kind == ByzantineKind::RandomModification {
            let mut rng = seed.stream(MODIFY_STREAM, ((round as u64) << 32) | m as u64);
            (0..dim)
                .map(|_| if bound > 0.0 { rng.gen_range(-bound..=bound) } else { 0.0 })
                .collect()
        } else {
            task.local_update(m, global)
        }
    };

    let ids: Vec<EntityId> = (0..m_clients).map(EntityId::from).collect();
    let everyone: BTreeSet<EntityId> = ids.iter().copied().collect();
    let mut models: Vec<Vec<f64>> = (0..m_clients).map(|m| submit(m, &vec![0.0; dim], 0)).collect();
    let mut xbar = aggregate(&models, &weights, &everyone)?;
    let mut zbar = task.gain(&xbar);
    let total_weight: f64 = weights.iter().sum();
    let mut histories: Vec<Option<ClientHistory>> = (0..m_clients)
        .map(|m| Some(history(&task, 0, &xbar, zbar, &models[m], weights[m] / total_weight)))
        .collect();

    let mut ledger = GameLedger::new(
        SystemObjective::Weighted {
            lambda: config.lambda,
        },
        UtilityIncome::identity(),
        ids.iter().copied(),
    );
    let mut theta = config.pricing.theta();
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut pricing_trace = Vec::with_capacity(config.rounds);

    for t in 1..=config.rounds {
        let participants: Vec<EntityId> = if incentivized {
            let known: Vec<ClientHistory> = histories.iter().flatten().copied().collect();
            if config.adaptive_theta2 {
                let lags: Vec<f64> = known.iter().map(|h| h.zbar - h.z).collect();
                theta[1] = jenks_two_class(&lags);
            }
            let objective =
                |th: [f64; 2]| server_objective(&histories, zbar, th, config.lambda, &config.pricing);
            let grad = central_gradient(objective, theta, GRADIENT_STEP)?;
            theta = server_update(theta, grad, config.pricing.eta)?;
            let p = config.pricing.with_theta(theta);
            ids.iter()
                .copied()
                .filter(|m| {
                    let h = histories[m.index()].expect("initialized in round 0");
                    let delta = config.belief_bias * zbar - h.z - expected_cost(h.zbar, h.z, &p);
                    client_decide(delta)
                })
                .collect()
        } else {
            ids.clone()
        };
        let pricing = config.pricing.with_theta(theta);

        let k = active_count(pricing.rho, participants.len());
        let active: BTreeSet<EntityId> = sample(&mut seed.stream(SELECT_STREAM, t as u64), participants.len(), k)
            .into_iter()
            .map(|i| participants[i])
            .collect();

        let mut own_gain: BTreeMap<EntityId, f64> = BTreeMap::new();
        if !active.is_empty() {
            for m in &active {
                models[m.index()] = submit(m.index(), &xbar, t);
            }
            xbar = aggregate(&models, &weights, &active)?;
            zbar = task.gain(&xbar);
            let active_weight: f64 = active.iter().map(|m| weights[m.index()]).sum();
            for m in &active {
                let h = history(&task, t, &xbar, zbar, &models[m.index()], weights[m.index()] / active_weight);
                own_gain.insert(*m, h.z);
                histories[m.index()] = Some(h);
            }
        }

        let mut input = RoundInput {
            participants: participants.iter().copied().collect(),
            active: active.clone(),
            collab_gain: zbar,
            ..Default::default()
        };
        for m in &participants {
            let is_active = active.contains(m);
            let z_m = match own_gain.get(m) {
                Some(&z) => z,
                None => histories[m.index()].expect("initialized in round 0").z,
            };
            let cost = if incentivized {
                fl_cost(zbar, z_m, is_active, &pricing)
            } else {
                0.0
            };
            input.realized_gains.insert(*m, z_m);
            input.costs.insert(*m, cost);
        }
        let record = ledger.record(input)?;
        rounds.push(FlRound {
            round: t,
            n_participants: participants.len(),
            n_active: active.len(),
            collab_gain: zbar,
            system_profit: record.system_profit,
            sum_costs: record.sum_costs(),
            theta1: theta[0],
            theta2: theta[1],
        });
        pricing_trace.push(pricing);
    }

    Ok(FlRun {
        rounds,
        ledger,
        byzantine,
        pricing: pricing_trace,
        final_model: xbar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn active_count_floors_with_minimum_one() {
        assert_eq!(active_count(0.3, 0), 0);
        assert_eq!(active_count(0.3, 1), 1);
        assert_eq!(active_count(0.3, 10), 3);
        assert_eq!(active_count(0.29, 100), 29);
        assert_eq!(active_count(1.0, 7), 7);
    }
}
