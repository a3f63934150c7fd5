use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{mab_cost, participation_condition, select_arm, MabConfig, MabMode};
use crate::error::Result;
use crate::mechanism::{EntityId, GameLedger, RoundInput, SystemObjective, UtilityIncome};
use crate::rng::RunSeed;

const MU_STREAM: u32 = 0x4d01;
const BURN_IN_STREAM: u32 = 0x4d02;
const REWARD_STREAM: u32 = 0x4d03;
const SELECT_STREAM: u32 = 0x4d04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MabRound {
    pub round: usize,
    pub n_participants: usize,
    pub active_arm: Option<EntityId>,
    pub reward: f64,
    pub cum_reward: f64,
    pub cum_balance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MabRun {
    /// True arm means, ascending in arm id.
    pub mu: Vec<f64>,
    pub rounds: Vec<MabRound>,
    /// Rounds in which each arm participated.
    pub participation: Vec<usize>,
    pub ledger: GameLedger,
}

impl MabRun {
    pub fn cum_reward(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cum_reward)
    }

    pub fn cum_balance(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cum_balance)
    }
}

/// Simulates one bandit game.
///
/// Randomness is split so that an incentivized run and its baseline under the
/// same seed see the same arms, the same burn-in pulls, the same per-round
/// reward shock and the same selection uniforms. Differences between the two
/// then come only from who participates.
///
/// Arms are numbered by ascending true mean. Each arm's standalone gain in the
/// ledger is its own mean, which is what it would earn alone in expectation.
pub fn run_mab(config: &MabConfig, seed: RunSeed) -> Result<MabRun> {
    config.validate()?;
    let incentivized = config.mode == MabMode::Incentivized;
    let m_arms = config.arms;
    let s = config.s_noise;

    let mut mu_rng = seed.stream(MU_STREAM, 0);
    let mut mu: Vec<f64> = (0..m_arms)
        .map(|_| {
            let x: f64 = mu_rng.sample(StandardNormal);
            config.mu_prior.mean + config.mu_prior.sd * x
        })
        .collect();
    mu.sort_by(f64::total_cmp);
    let ids: Vec<EntityId> = (0..m_arms).map(EntityId::from).collect();

    // One forced pull per arm so every empirical mean is defined.
    let mut sums: Vec<f64> = mu
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let x: f64 = seed.stream(BURN_IN_STREAM, i as u64).sample(StandardNormal);
            m + s * x
        })
        .collect();
    let mut pulls = vec![1usize; m_arms];
    let mut means: Vec<f64> = sums.clone();

    let mut ledger = GameLedger::new(
        SystemObjective::Weighted { lambda: 0.0 },
        UtilityIncome::identity(),
        ids.iter().copied(),
    );
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut participation = vec![0usize; m_arms];
    let (mut cum_reward, mut cum_balance) = (0.0, 0.0);

    for t in 0..config.rounds {
        let epsilon = config.epsilon.at(t);
        let participants: Vec<EntityId> = if incentivized {
            ids.iter()
                .copied()
                .filter(|m| {
                    participation_condition(mu[m.index()], &means, epsilon, &config.pricing, s)
                })
                .collect()
        } else {
            ids.clone()
        };
        for m in &participants {
            participation[m.index()] += 1;
        }

        let mut select_rng = seed.stream(SELECT_STREAM, t as u64);
        let active = select_arm(&participants, &means, epsilon, &mut select_rng);
        let shock: f64 = seed.stream(REWARD_STREAM, t as u64).sample(StandardNormal);

        let mut input = RoundInput {
            participants: participants.iter().copied().collect(),
            realized_gains: participants.iter().map(|m| (*m, mu[m.index()])).collect(),
            ..Default::default()
        };
        let mut reward = 0.0;
        if let Some(a) = active {
            reward = mu[a.index()] + s * shock;
            sums[a.index()] += reward;
            pulls[a.index()] += 1;
            means[a.index()] = sums[a.index()] / pulls[a.index()] as f64;
            input.active = BTreeSet::from([a]);
            input.collab_gain = reward;
        }
        input.costs = participants
            .iter()
            .map(|&m| {
                let c = if !incentivized {
                    0.0
                } else if Some(m) == active {
                    mab_cost(reward, &config.pricing)
                } else if config.idle_pays_base {
                    config.pricing.b0
                } else {
                    0.0
                };
                (m, c)
            })
            .collect::<BTreeMap<_, _>>();

        let record = ledger.record(input)?;
        cum_reward += reward;
        cum_balance += record.sum_costs();
        rounds.push(MabRound {
            round: t,
            n_participants: participants.len(),
            active_arm: active,
            reward,
            cum_reward,
            cum_balance,
        });
    }

    Ok(MabRun {
        mu,
        rounds,
        participation,
        ledger,
    })
}
