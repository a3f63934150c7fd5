//! Randomized cross-checks of the closed-form results against brute force.

use std::collections::{BTreeMap, BTreeSet};

use icl_core::fl::{prop2_ratio, theorem2_residual};
use icl_core::mab::{profit_performance, MabPricing};
use icl_core::mechanism::profit::{participant_profit, system_profit};
use icl_core::mechanism::{
    nash_check, FiniteDist, GameLedger, RoundInput, SearchOptions, SmallCandidate, SmallGame, SystemObjective,
    UtilityIncome,
};
use icl_core::pal::{consensus_pair, favor_score, theorem3_check, theorem4_slack, theorem4_threshold, Favor, GainEstimates};
use icl_core::rng::RunSeed;
use icl_core::stats::median;
use icl_core::{EntityId, IclError, ParamError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleCheck {
    /// `nash_check` against expected profits from full world enumeration.
    Nash,
    /// Average social welfare against the rescaled system objective.
    Welfare,
    /// Three-entity consensus condition against favor simulation.
    Consensus,
    /// Pricing-consensus threshold against its defining inequality.
    Threshold,
    /// Random-subset averaging error shrinking with the participant count.
    Concentration,
    /// Uniform selection efficiency under high and vanishing noise.
    Selection,
    /// Profit-performance strictly increasing on the standard grid.
    Monotonicity,
}

impl OracleCheck {
    pub fn name(self) -> &'static str {
        match self {
            OracleCheck::Nash => "nash",
            OracleCheck::Welfare => "welfare",
            OracleCheck::Consensus => "consensus",
            OracleCheck::Threshold => "threshold",
            OracleCheck::Concentration => "concentration",
            OracleCheck::Selection => "selection",
            OracleCheck::Monotonicity => "monotonicity",
        }
    }

    fn stream(self) -> u32 {
        0x4f00 + self as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub checks: Vec<OracleCheck>,
    pub nash_instances: usize,
    pub welfare_rounds: usize,
    pub consensus_instances: usize,
    pub threshold_instances: usize,
    pub concentration_draws: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            checks: vec![
                OracleCheck::Nash,
                OracleCheck::Welfare,
                OracleCheck::Consensus,
                OracleCheck::Threshold,
            ],
            nash_instances: 200,
            welfare_rounds: 1000,
            consensus_instances: 500,
            threshold_instances: 100,
            concentration_draws: 50,
        }
    }
}

impl OracleConfig {
    pub fn validation_errors(&self) -> Vec<ParamError> {
        let mut errors = Vec::new();
        if self.checks.is_empty() {
            errors.push(ParamError::new("checks", "must not be empty"));
        }
        if self.checks.iter().collect::<BTreeSet<_>>().len() != self.checks.len() {
            errors.push(ParamError::new("checks", "must be distinct"));
        }
        for (field, n) in [
            ("nash_instances", self.nash_instances),
            ("welfare_rounds", self.welfare_rounds),
            ("consensus_instances", self.consensus_instances),
            ("threshold_instances", self.threshold_instances),
            ("concentration_draws", self.concentration_draws),
        ] {
            if n == 0 {
                errors.push(ParamError::new(field, "must be >= 1"));
            }
        }
        errors
    }
}

/// Result of one check. Statistic checks count as a single trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: OracleCheck,
    pub trials: usize,
    pub agreements: usize,
    /// Agreement rate, or the check's statistic for single-trial checks.
    pub value: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn counted(check: OracleCheck, trials: usize, agreements: usize) -> Self {
        Self {
            check,
            trials,
            agreements,
            value: agreements as f64 / trials as f64,
            passed: agreements == trials,
        }
    }

    fn statistic(check: OracleCheck, value: f64, passed: bool) -> Self {
        Self {
            check,
            trials: 1,
            agreements: usize::from(passed),
            value,
            passed,
        }
    }
}

pub fn run_oracle(config: &OracleConfig, seed: RunSeed) -> Result<Vec<CheckOutcome>> {
    IclError::check(config.validation_errors())?;
    config
        .checks
        .iter()
        .map(|&check| {
            let rng = &mut seed.stream(check.stream(), 0);
            match check {
                OracleCheck::Nash => nash_agreement(config.nash_instances, rng),
                OracleCheck::Welfare => welfare_identity(config.welfare_rounds, rng),
                OracleCheck::Consensus => Ok(consensus_agreement(config.consensus_instances, rng)),
                OracleCheck::Threshold => threshold_boundary(config.threshold_instances, rng),
                OracleCheck::Concentration => concentration(config.concentration_draws, rng),
                OracleCheck::Selection => selection(rng),
                OracleCheck::Monotonicity => Ok(monotonicity()),
            }
        })
        .collect()
}

/// Expected profits by summing over every joint outcome and selection mask.
struct WorldEnumeration<'a> {
    game: &'a SmallGame,
}

impl WorldEnumeration<'_> {
    fn visit(&self, members: &[usize], mut f: impl FnMut(&[f64], &[usize], f64)) {
        let supports: Vec<&[(f64, f64)]> = self.game.candidates.iter().map(|c| c.outcome.support()).collect();
        let mut idx = vec![0usize; supports.len()];
        loop {
            let xs: Vec<f64> = supports.iter().zip(&idx).map(|(s, &i)| s[i].0).collect();
            let p: f64 = supports.iter().zip(&idx).map(|(s, &i)| s[i].1).product();
            for mask in 0u32..1 << members.len() {
                let active: Vec<usize> = (0..members.len())
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| members[i])
                    .collect();
                let rho = self.game.rho;
                let w = rho.powi(active.len() as i32) * (1.0 - rho).powi((members.len() - active.len()) as i32);
                f(&xs, &active, p * w);
            }
            let mut k = 0;
            while k < idx.len() {
                idx[k] += 1;
                if idx[k] < supports[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == idx.len() {
                return;
            }
        }
    }

    fn gain(&self, xs: &[f64], active: &[usize]) -> f64 {
        if active.is_empty() {
            self.game.empty_gain
        } else {
            active.iter().map(|&m| xs[m]).sum::<f64>() / active.len() as f64
        }
    }

    fn cost(&self, m: usize, active: &[usize]) -> f64 {
        let c = &self.game.candidates[m];
        c.fee + if active.contains(&m) { c.active_surcharge } else { 0.0 }
    }

    /// Per candidate: gain from joining, and the system's gain from admitting it.
    fn margins(&self, profile: &[bool]) -> Vec<(f64, f64)> {
        let u = &self.game.utility;
        let objective = SystemObjective::Weighted {
            lambda: self.game.lambda,
        };
        let system = |members: &[usize]| {
            let mut total = 0.0;
            self.visit(members, |xs, active, w| {
                let costs: Vec<f64> = members.iter().map(|&j| self.cost(j, active)).collect();
                total += w * system_profit(&objective, &costs, u.income(self.gain(xs, active)));
            });
            total
        };
        (0..profile.len())
            .map(|m| {
                let without: Vec<usize> = (0..profile.len()).filter(|&j| j != m && profile[j]).collect();
                let mut with = without.clone();
                with.push(m);
                with.sort_unstable();
                let mut joining = 0.0;
                self.visit(&with, |xs, active, w| {
                    let z = u.income(self.gain(xs, active));
                    joining += w * participant_profit(true, self.cost(m, active), z, u.income(xs[m]));
                });
                (joining, system(&with) - system(&without))
            })
            .collect()
    }
}

fn random_game<R: Rng + ?Sized>(rng: &mut R) -> Result<SmallGame> {
    let n = rng.gen_range(1..=4);
    let mut candidates = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.gen_range(1..=3);
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut support: Vec<(f64, f64)> = raw.iter().map(|p| (rng.gen_range(-2.0..4.0), p / total)).collect();
        let drift = 1.0 - support.iter().map(|s| s.1).sum::<f64>();
        support[0].1 += drift;
        candidates.push(SmallCandidate {
            outcome: FiniteDist::new(support)?,
            fee: rng.gen_range(-1.5..1.5),
            active_surcharge: rng.gen_range(-0.5..0.5),
        });
    }
    let utility = if rng.gen_bool(0.5) {
        UtilityIncome::linear(rng.gen_range(0.5..2.0))?
    } else {
        UtilityIncome::tabulated(vec![(-2.0, -3.0), (0.0, 0.0), (1.0, 2.0), (4.0, 2.5)])?
    };
    Ok(SmallGame {
        candidates,
        rho: [0.25, 0.5, 0.75, 1.0][rng.gen_range(0..4)],
        lambda: rng.gen_range(0.0..2.0),
        utility,
        empty_gain: rng.gen_range(-1.0..1.0),
    })
}

fn nash_agreement<R: Rng + ?Sized>(instances: usize, rng: &mut R) -> Result<CheckOutcome> {
    let mut agree = 0;
    let mut checked = 0;
    while checked < instances {
        let game = random_game(rng)?;
        let profile: Vec<bool> = (0..game.candidates.len()).map(|_| rng.gen_bool(0.5)).collect();
        let margins = WorldEnumeration { game: &game }.margins(&profile);
        // Within rounding of a weak inequality either answer is right.
        if margins.iter().any(|(a, b)| a.abs() < 1e-9 || b.abs() < 1e-9) {
            continue;
        }
        let expected = margins
            .iter()
            .zip(&profile)
            .all(|(&(a, b), &p)| p == (a >= 0.0 && b >= 0.0));
        let report = nash_check(&game, &profile, 1 << 24)?;
        agree += usize::from(report.is_equilibrium == expected);
        checked += 1;
    }
    Ok(CheckOutcome::counted(OracleCheck::Nash, instances, agree))
}

fn welfare_identity<R: Rng + ?Sized>(rounds: usize, rng: &mut R) -> Result<CheckOutcome> {
    let mut agree = 0;
    for _ in 0..rounds {
        let n = rng.gen_range(1..8);
        let lambda = rng.gen_range(0.0..5.0);
        let u = rng.gen_range(0.0..3.0);
        let ids: Vec<EntityId> = (0..n).map(EntityId::from).collect();
        let mut ledger = GameLedger::new(SystemObjective::weighted(lambda)?, UtilityIncome::linear(u)?, ids.clone());
        let mut input = RoundInput {
            collab_gain: rng.gen_range(-10.0..10.0),
            ..Default::default()
        };
        for m in ids {
            if rng.gen_bool(0.7) {
                input.participants.insert(m);
                if rng.gen_bool(0.5) {
                    input.active.insert(m);
                }
                input.realized_gains.insert(m, rng.gen_range(-10.0..10.0));
                input.costs.insert(m, rng.gen_range(-5.0..5.0));
            }
        }
        let record = ledger.record(input)?.clone();
        let k = record.participants.len() as f64;
        let welfare = (record.system_profit + record.participant_profits.values().sum::<f64>()) / (k + 1.0);
        let constant = record.realized_gains.values().map(|z| u * z).sum::<f64>() / (k + 1.0);
        let objective = (lambda - 1.0) / (k + 1.0) * record.sum_costs() + u * record.collab_gain;
        agree += usize::from((welfare + constant - objective).abs() < 1e-9);
    }
    Ok(CheckOutcome::counted(OracleCheck::Welfare, rounds, agree))
}

type Table = [[f64; 3]; 3];

/// Some tie-breaking of the favor step yields a mutual pair.
fn simulated_consensus(u: f64, c: [f64; 3], mu_pair: &Table, mu_assist: &Table) -> bool {
    let mut est = GainEstimates::default();
    let id = EntityId::from;
    for i in 0..3 {
        for j in i + 1..3 {
            est.record(0, id(i), id(j), mu_pair[i][j], mu_assist[i][j], mu_pair[j][i], mu_assist[j][i]);
        }
    }
    let tops: Vec<Vec<usize>> = (0..3)
        .map(|i| {
            let scores: Vec<(usize, Favor)> = (0..3)
                .filter(|&j| j != i)
                .map(|j| (j, favor_score(id(i), id(j), u, c[i], c[j], &est)))
                .collect();
            let best = if scores[0].1 >= scores[1].1 { scores[0].1 } else { scores[1].1 };
            scores.iter().filter(|s| s.1 == best).map(|s| s.0).collect()
        })
        .collect();
    tops[0].iter().any(|&a| {
        tops[1].iter().any(|&b| {
            tops[2].iter().any(|&c| {
                let favors: BTreeMap<EntityId, Option<EntityId>> =
                    [(0, a), (1, b), (2, c)].iter().map(|&(i, j)| (id(i), Some(id(j)))).collect();
                consensus_pair(&favors).is_some()
            })
        })
    })
}

fn consensus_agreement<R: Rng + ?Sized>(instances: usize, rng: &mut R) -> CheckOutcome {
    let mut agree = 0;
    for k in 0..instances {
        // Every other instance uses small integers so that ties are common.
        let integral = k % 2 == 0;
        let draw = |rng: &mut R| {
            if integral {
                f64::from(rng.gen_range(-3..4))
            } else {
                rng.gen_range(-2.0..2.0)
            }
        };
        let table = |rng: &mut R| -> Table {
            let mut t = [[0.0; 3]; 3];
            t.iter_mut().flatten().for_each(|v| *v = draw(rng));
            t
        };
        let mu_pair = table(rng);
        let mu_assist = table(rng);
        let u = f64::from(rng.gen_range(1..5));
        let c = [(); 3].map(|_| f64::from(rng.gen_range(0..5)));
        agree += usize::from(theorem3_check(u, c, &mu_pair, &mu_assist) == simulated_consensus(u, c, &mu_pair, &mu_assist));
    }
    CheckOutcome::counted(OracleCheck::Consensus, instances, agree)
}

fn threshold_boundary<R: Rng + ?Sized>(instances: usize, rng: &mut R) -> Result<CheckOutcome> {
    let mut agree = 0;
    for _ in 0..instances {
        let u = rng.gen_range(0.1..10.0);
        let k = rng.gen_range(2..=10);
        let top = rng.gen_range(1.0..2.0);
        let mut means = vec![top];
        means.extend((1..k).map(|_| top * rng.gen_range(0.0..1.0)));
        let t = theorem4_threshold(u, &means)?;
        let tight = theorem4_slack(u, t.c_star, &means, t.binding).abs() < 1e-9;
        let breaks = theorem4_slack(u, t.c_star + 1e-6, &means, t.binding) < 0.0;
        let others_hold = (1..k).all(|j| theorem4_slack(u, t.c_star, &means, j) > -1e-9);
        agree += usize::from(tight && breaks && others_hold);
    }
    Ok(CheckOutcome::counted(OracleCheck::Threshold, instances, agree))
}

const CONCENTRATION_RHO: f64 = 0.3;

/// Median ℓ1 residual at K = 10000 over the median at K = 100.
fn concentration<R: Rng + ?Sized>(draws: usize, rng: &mut R) -> Result<CheckOutcome> {
    let mut medians = Vec::new();
    for k in [100, 10_000] {
        let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
        let models: Vec<Vec<f64>> = (0..k).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let residuals = (0..draws)
            .map(|_| theorem2_residual(CONCENTRATION_RHO, &weights, &models, rng).map(|d| d.residual))
            .collect::<Result<Vec<f64>>>()?;
        medians.push(median(&residuals));
    }
    let ratio = medians[1] / medians[0];
    Ok(CheckOutcome::statistic(OracleCheck::Concentration, ratio, ratio < 0.25))
}

/// Efficiency of uniform selection at noise ratio 100 (must be ≥ 0.95) and
/// without noise (must be < 1).
fn selection<R: Rng + ?Sized>(rng: &mut R) -> Result<CheckOutcome> {
    let n = 8;
    let target = 0.0;
    let mut means: Vec<f64> = (0..n).map(|i| i as f64 * 0.25 + rng.gen_range(0.0..0.2)).collect();
    means.rotate_left(rng.gen_range(0..n));
    let spread = means.iter().map(|m| (m - target).powi(2)).fold(0.0, f64::max);
    let sigma = (100.0 * n as f64 * spread).sqrt();
    let options = SearchOptions {
        step: 0.1,
        ..SearchOptions::default()
    };
    let noisy = prop2_ratio(&means, target, sigma, 0.25, options)?;
    let exact = prop2_ratio(&means, target, 0.0, 0.25, options)?;
    let passed = noisy.ratio >= 0.95 && exact.ratio < 1.0;
    Ok(CheckOutcome::statistic(OracleCheck::Selection, noisy.ratio, passed))
}

/// Grid of 200 points on `[μ1 − 6s, μ1 + 2s]` with the standard pricing and `s = 1`.
pub fn monotonicity_grid() -> Vec<(f64, f64)> {
    let pricing = MabPricing::default();
    let (mu1, s) = (5.0, 1.0);
    let (lo, hi) = (mu1 - 6.0 * s, mu1 + 2.0 * s);
    (0..200)
        .map(|i| {
            let mu = lo + (hi - lo) * i as f64 / 199.0;
            (mu, profit_performance(mu, mu1, &pricing, s))
        })
        .collect()
}

/// Share of grid steps that increase; passes only when every step does.
fn monotonicity() -> CheckOutcome {
    let grid = monotonicity_grid();
    let rising = grid.windows(2).filter(|w| w[1].1 > w[0].1).count();
    let steps = grid.len() - 1;
    CheckOutcome::statistic(OracleCheck::Monotonicity, rising as f64 / steps as f64, rising == steps)
}
