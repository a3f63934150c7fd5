use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::learner::{Learner, Model};
use super::{choose_favorite, mutual_pairs, snap, GainEstimates};
use crate::error::{IclError, ParamError, Result};
use crate::mechanism::ledger::RoundInput;
use crate::mechanism::{EntityId, GameLedger, SystemObjective, UtilityIncome};
use crate::rng::RunSeed;

const DATA_STREAM: u32 = 0x4101;
const FAVOR_STREAM: u32 = 0x4102;

/// Largest entity count accepted by [`PalConfig`].
const MAX_ENTITIES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PalMode {
    #[default]
    Incentivized,
    /// Nobody pairs; every entity only boosts on its own features.
    LocalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PalEntitySpec {
    pub features: usize,
    /// Linear price coefficient `c_i`.
    pub price: f64,
    pub learner: Learner,
}

impl Default for PalEntitySpec {
    fn default() -> Self {
        Self {
            features: 3,
            price: 10.0,
            learner: Learner::default(),
        }
    }
}

/// Synthetic vertically partitioned data and the PAL schedule.
///
/// Entity `i`'s label is `Σ_j S_ij·⟨x_j, v_ij⟩ + nonlinear·Σ_j S_ij·sin(2⟨x_j, w_ij⟩)`
/// plus Gaussian noise, where `v_ij, w_ij` are random unit vectors,
/// `S_ii = 1` and `S_ij = S_ji` is uniform on `coupling`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PalConfig {
    pub entities: Vec<PalEntitySpec>,
    pub subjects: usize,
    pub rounds: usize,
    /// Linear utility `u`.
    pub utility: f64,
    pub noise_sd: f64,
    pub coupling: [f64; 2],
    pub nonlinear: f64,
    /// Weight `τ` of the partner's residual in the label an entity fits for it.
    pub blend: f64,
    /// Shrinkage applied to every fitted model.
    pub step_size: f64,
    /// Rounds without a new best validation loss before an entity stops.
    pub patience: usize,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub mode: PalMode,
    pub replicates: usize,
}

impl Default for PalConfig {
    fn default() -> Self {
        Self {
            entities: vec![PalEntitySpec::default(); 3],
            subjects: 1000,
            rounds: 20,
            utility: 10.0,
            noise_sd: 1.0,
            coupling: [0.5, 1.5],
            nonlinear: 0.0,
            blend: 0.5,
            step_size: 0.3,
            patience: 5,
            validation_fraction: 0.2,
            test_fraction: 0.3,
            mode: PalMode::Incentivized,
            replicates: 10,
        }
    }
}

impl PalConfig {
    /// All-pay config with entity `k` paying nothing.
    pub fn with_free_rider(mut self, k: usize) -> Self {
        if let Some(e) = self.entities.get_mut(k) {
            e.price = 0.0;
        }
        self
    }

    pub fn validation_errors(&self) -> Vec<ParamError> {
        let mut errors = Vec::new();
        let mut need = |ok: bool, field: String, reason: &str| {
            if !ok {
                errors.push(ParamError::new(field, reason));
            }
        };
        need(
            (1..=MAX_ENTITIES).contains(&self.entities.len()),
            "entities".into(),
            "need between 1 and 64 entities",
        );
        for (i, e) in self.entities.iter().enumerate() {
            need(e.features >= 1, format!("entities[{i}].features"), "must be >= 1");
            need(
                e.price.is_finite() && e.price >= 0.0,
                format!("entities[{i}].price"),
                "must be finite and >= 0",
            );
        }
        need(self.rounds <= 100_000, "rounds".into(), "must be <= 100000");
        need(self.utility.is_finite() && self.utility > 0.0, "utility".into(), "must be finite and > 0");
        need(self.noise_sd.is_finite() && self.noise_sd >= 0.0, "noise_sd".into(), "must be finite and >= 0");
        let [lo, hi] = self.coupling;
        need(
            lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi,
            "coupling".into(),
            "need 0 <= low <= high",
        );
        need(self.nonlinear.is_finite(), "nonlinear".into(), "must be finite");
        need(self.blend > 0.0 && self.blend <= 1.0, "blend".into(), "must lie in (0, 1]");
        need(
            self.step_size.is_finite() && self.step_size > 0.0,
            "step_size".into(),
            "must be finite and > 0",
        );
        need(self.patience >= 1, "patience".into(), "must be >= 1");
        let (vf, tf) = (self.validation_fraction, self.test_fraction);
        need(vf > 0.0 && vf < 1.0, "validation_fraction".into(), "must lie in (0, 1)");
        need(tf > 0.0 && tf < 1.0, "test_fraction".into(), "must lie in (0, 1)");
        match Split::contiguous(self.subjects, vf, tf) {
            Some(_) => {}
            None => need(false, "subjects".into(), "too few subjects for a train, validation and test split"),
        }
        need(self.replicates >= 1, "replicates".into(), "must be >= 1");
        for (i, e) in self.entities.iter().enumerate() {
            errors.extend(e.learner.validation_errors(&format!("entities[{i}].learner")));
        }
        errors
    }

    pub fn validate(&self) -> Result<()> {
        IclError::check(self.validation_errors())
    }
}

/// Subject indices of the three splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Training subjects first, then validation, then test.
    pub fn contiguous(n: usize, validation_fraction: f64, test_fraction: f64) -> Option<Self> {
        if !(validation_fraction.is_finite() && test_fraction.is_finite()) {
            return None;
        }
        let n_val = (n as f64 * validation_fraction).round() as usize;
        let n_test = (n as f64 * test_fraction).round() as usize;
        let n_train = n.checked_sub(n_val + n_test)?;
        if n_train < 2 || n_val == 0 || n_test == 0 {
            return None;
        }
        Some(Self {
            train: (0..n_train).collect(),
            validation: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..n).collect(),
        })
    }

    fn max_index(&self) -> Option<usize> {
        self.train.iter().chain(&self.validation).chain(&self.test).max().copied()
    }
}

/// `weight · model(x_owner)`, one summand of an entity's prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTerm {
    pub owner: EntityId,
    pub weight: f64,
    pub model: Model,
}

/// Models an entity adds to its prediction in one round. Round 0 holds the
/// initial local fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolStep {
    pub round: usize,
    pub terms: Vec<ProtocolTerm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlEntity {
    pub id: EntityId,
    pub price: f64,
    pub learner: Learner,
    /// One row per subject.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Current prediction for every subject.
    pub prediction: Vec<f64>,
    pub protocol: Vec<ProtocolStep>,
}

impl AlEntity {
    /// Fits the initial local model on the training subjects.
    pub fn new(id: EntityId, price: f64, learner: Learner, features: Vec<Vec<f64>>, labels: Vec<f64>, split: &Split) -> Self {
        let model = learner.fit(&features, &split.train, &labels);
        let term = ProtocolTerm {
            owner: id,
            weight: 1.0,
            model,
        };
        let prediction = features.iter().map(|x| 0.0 + term.weight * term.model.predict(x)).collect();
        Self {
            id,
            price,
            learner,
            features,
            labels,
            prediction,
            protocol: vec![ProtocolStep {
                round: 0,
                terms: vec![term],
            }],
        }
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.labels.iter().zip(&self.prediction).map(|(y, f)| y - f).collect()
    }

    /// Mean squared error of `prediction` over `rows`.
    pub fn loss(&self, prediction: &[f64], rows: &[usize]) -> f64 {
        rows.iter().map(|&r| (self.labels[r] - prediction[r]).powi(2)).sum::<f64>() / rows.len() as f64
    }

    pub fn subjects(&self) -> usize {
        self.labels.len()
    }

    fn apply(&mut self, step: ProtocolStep, prediction: Vec<f64>) {
        self.protocol.push(step);
        self.prediction = prediction;
    }
}

fn add_term(prediction: &mut [f64], term: &ProtocolTerm, features: &[Vec<f64>]) {
    for (p, x) in prediction.iter_mut().zip(features) {
        *p += term.weight * term.model.predict(x);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeParams {
    pub blend: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub step: ProtocolStep,
    pub prediction: Vec<f64>,
}

/// One boosting step on the entity's own residuals.
pub fn local_step(entity: &AlEntity, split: &Split, step_size: f64, round: usize) -> LocalUpdate {
    let model = entity.learner.fit(&entity.features, &split.train, &entity.residuals());
    let term = ProtocolTerm {
        owner: entity.id,
        weight: step_size,
        model,
    };
    let mut prediction = entity.prediction.clone();
    add_term(&mut prediction, &term, &entity.features);
    LocalUpdate {
        step: ProtocolStep {
            round,
            terms: vec![term],
        },
        prediction,
    }
}

/// One side of a PAL exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeSide {
    pub id: EntityId,
    pub step: ProtocolStep,
    /// Prediction after the local step alone.
    pub counterfactual: Vec<f64>,
    pub prediction: Vec<f64>,
    /// Validation-loss reduction over the previous round.
    pub mu_pair: f64,
    /// Validation-loss reduction over the local-only counterfactual.
    pub mu_from_partner: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PalExchange {
    pub a: ExchangeSide,
    pub b: ExchangeSide,
}

fn check_aligned(a: &AlEntity, b: &AlEntity, split: &Split) -> Result<()> {
    let n = a.subjects();
    for e in [a, b] {
        if e.features.len() != n || e.prediction.len() != n || e.subjects() != n {
            return Err(IclError::MisalignedSubjects(format!(
                "entity {} holds {} rows of features and {} labels, entity {} holds {} labels",
                e.id,
                e.features.len(),
                e.subjects(),
                a.id,
                n
            )));
        }
    }
    if split.max_index().is_some_and(|m| m >= n) {
        return Err(IclError::MisalignedSubjects(format!("split refers past {n} subjects")));
    }
    Ok(())
}

/// Both entities take a local step, then each fits the other's remaining
/// residual on its own features.
///
/// The helper fits the blended label `τ·e_other + (1−τ)·e_own` and its own
/// residual separately and sends back `(g − (1−τ)·k)/τ`, so the partner never
/// sees the helper's residual in the clear.
pub fn run_pal_round(
    a: &AlEntity,
    b: &AlEntity,
    split: &Split,
    params: ExchangeParams,
    round: usize,
) -> Result<PalExchange> {
    if a.id == b.id {
        return Err(IclError::SelfPairing(a.id));
    }
    check_aligned(a, b, split)?;
    let local_a = local_step(a, split, params.step_size, round);
    let local_b = local_step(b, split, params.step_size, round);
    let left_a: Vec<f64> = a.labels.iter().zip(&local_a.prediction).map(|(y, f)| y - f).collect();
    let left_b: Vec<f64> = b.labels.iter().zip(&local_b.prediction).map(|(y, f)| y - f).collect();
    let side_a = assisted(a, b, local_a, &left_a, &left_b, split, params);
    let side_b = assisted(b, a, local_b, &left_b, &left_a, split, params);
    Ok(PalExchange { a: side_a, b: side_b })
}

fn assisted(
    me: &AlEntity,
    helper: &AlEntity,
    local: LocalUpdate,
    my_resid: &[f64],
    helper_resid: &[f64],
    split: &Split,
    params: ExchangeParams,
) -> ExchangeSide {
    let tau = params.blend;
    let mix: Vec<f64> = my_resid
        .iter()
        .zip(helper_resid)
        .map(|(m, h)| tau * m + (1.0 - tau) * h)
        .collect();
    let mut terms = local.step.terms;
    terms.push(ProtocolTerm {
        owner: helper.id,
        weight: params.step_size / tau,
        model: helper.learner.fit(&helper.features, &split.train, &mix),
    });
    if tau < 1.0 {
        terms.push(ProtocolTerm {
            owner: helper.id,
            weight: -params.step_size * (1.0 - tau) / tau,
            model: helper.learner.fit(&helper.features, &split.train, helper_resid),
        });
    }
    let mut prediction = local.prediction.clone();
    for term in &terms[1..] {
        add_term(&mut prediction, term, &helper.features);
    }
    let before = me.loss(&me.prediction, &split.validation);
    let alone = me.loss(&local.prediction, &split.validation);
    let after = me.loss(&prediction, &split.validation);
    ExchangeSide {
        id: me.id,
        step: ProtocolStep {
            round: local.step.round,
            terms,
        },
        counterfactual: local.prediction,
        prediction,
        mu_pair: before - after,
        mu_from_partner: alone - after,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PalRound {
    pub round: usize,
    pub pairs: Vec<(EntityId, EntityId)>,
    /// Entities that trained this round.
    pub training: BTreeSet<EntityId>,
    /// Test error of every entity after the round.
    pub test_error: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Net payment of every entity; zero outside a pair.
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PalRun {
    pub rounds: Vec<PalRound>,
    pub ledger: GameLedger,
    /// Test error of the initial local fits.
    pub initial_test_error: Vec<f64>,
    pub entities: Vec<AlEntity>,
    pub split: Split,
    pub estimates: GainEstimates,
}

impl PalRun {
    pub fn final_test_error(&self) -> Vec<f64> {
        self.rounds
            .last()
            .map_or_else(|| self.initial_test_error.clone(), |r| r.test_error.clone())
    }

    /// Recomputes entity `id`'s prediction for `subject` from its protocol.
    pub fn protocol_prediction(&self, id: EntityId, subject: usize) -> f64 {
        let mut p = 0.0;
        for step in &self.entities[id.index()].protocol {
            for term in &step.terms {
                p += term.weight * term.model.predict(&self.entities[term.owner.index()].features[subject]);
            }
        }
        p
    }
}

fn unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[allow(clippy::needless_range_loop)]
fn generate(config: &PalConfig, split: &Split, seed: RunSeed) -> Vec<AlEntity> {
    let rng = &mut seed.stream(DATA_STREAM, 0);
    let k = config.entities.len();
    let n = config.subjects;
    let features: Vec<Vec<Vec<f64>>> = config
        .entities
        .iter()
        .map(|e| {
            (0..n)
                .map(|_| (0..e.features).map(|_| rng.sample(StandardNormal)).collect())
                .collect()
        })
        .collect();
    let mut coupling = vec![vec![1.0; k]; k];
    let [lo, hi] = config.coupling;
    for i in 0..k {
        for j in i + 1..k {
            let s = lo + (hi - lo) * rng.gen::<f64>();
            coupling[i][j] = s;
            coupling[j][i] = s;
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    (0..k)
        .map(|i| {
            let linear: Vec<Vec<f64>> = config.entities.iter().map(|e| unit_vector(e.features, rng)).collect();
            let curved: Vec<Vec<f64>> = config.entities.iter().map(|e| unit_vector(e.features, rng)).collect();
            let labels: Vec<f64> = (0..n)
                .map(|s| {
                    let mut y = 0.0;
                    for j in 0..k {
                        let x = &features[j][s];
                        y += coupling[i][j] * dot(x, &linear[j]);
                        y += config.nonlinear * coupling[i][j] * (2.0 * dot(x, &curved[j])).sin();
                    }
                    y + config.noise_sd * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            let spec = &config.entities[i];
            AlEntity::new(EntityId::from(i), spec.price, spec.learner, features[i].clone(), labels, split)
        })
        .collect()
}

/// Net payment of `a` to `b`: `c_a·Δ_a − c_b·Δ_b`, where `Δ` is each side's
/// validation gain over its own local step.
fn pair_transfer(a: &ExchangeSide, b: &ExchangeSide, c_a: f64, c_b: f64) -> f64 {
    c_a * a.mu_from_partner - c_b * b.mu_from_partner
}

/// Runs the multi-round PAL game.
pub fn run_pal(config: &PalConfig, seed: RunSeed) -> Result<PalRun> {
    config.validate()?;
    let split = Split::contiguous(config.subjects, config.validation_fraction, config.test_fraction)
        .expect("validated");
    let mut entities = generate(config, &split, seed);
    let ids: Vec<EntityId> = entities.iter().map(|e| e.id).collect();
    let prices: BTreeMap<EntityId, f64> = entities.iter().map(|e| (e.id, e.price)).collect();
    let params = ExchangeParams {
        blend: config.blend,
        step_size: config.step_size,
    };
    let mut ledger = GameLedger::new(
        SystemObjective::default(),
        UtilityIncome::linear(config.utility)?,
        ids.iter().copied(),
    );
    let test_errors = |es: &[AlEntity]| -> Vec<f64> { es.iter().map(|e| e.loss(&e.prediction, &split.test)).collect() };
    let initial_test_error = test_errors(&entities);
    let mut best: Vec<f64> = entities.iter().map(|e| e.loss(&e.prediction, &split.validation)).collect();
    let mut stall = vec![0usize; entities.len()];
    let mut training: BTreeSet<EntityId> = ids.iter().copied().collect();
    let mut estimates = GainEstimates::default();
    let mut rounds = Vec::new();

    for t in 1..=config.rounds {
        if training.is_empty() {
            break;
        }
        let mut favors = BTreeMap::new();
        if config.mode == PalMode::Incentivized {
            let rng = &mut seed.stream(FAVOR_STREAM, t as u64);
            for &i in &training {
                let fav = choose_favorite(i, &ids, &training, config.utility, &prices, &estimates, rng);
                favors.insert(i, fav);
            }
        }
        let pairs = mutual_pairs(&favors);
        let paired: BTreeSet<EntityId> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();

        let mut realized = BTreeMap::new();
        let mut raw_costs: BTreeMap<EntityId, f64> = training.iter().map(|&m| (m, 0.0)).collect();
        for &(a, b) in &pairs {
            let ex = run_pal_round(&entities[a.index()], &entities[b.index()], &split, params, t)?;
            estimates.record(t, a, b, ex.a.mu_pair, ex.a.mu_from_partner, ex.b.mu_pair, ex.b.mu_from_partner);
            let transfer = pair_transfer(&ex.a, &ex.b, prices[&a], prices[&b]);
            raw_costs.insert(a, transfer);
            raw_costs.insert(b, -transfer);
            for side in [ex.a, ex.b] {
                let e = &mut entities[side.id.index()];
                realized.insert(side.id, -e.loss(&side.counterfactual, &split.validation));
                e.apply(side.step, side.prediction);
            }
        }
        for &m in training.difference(&paired) {
            let e = &mut entities[m.index()];
            let update = local_step(e, &split, config.step_size, t);
            e.apply(update.step, update.prediction);
            realized.insert(m, -e.loss(&e.prediction, &split.validation));
        }

        // Costs sit on a common binary grid so their sum is exactly zero.
        let scale = raw_costs.values().fold(0.0f64, |acc, c| acc.max(c.abs()));
        let costs: BTreeMap<EntityId, f64> = raw_costs.iter().map(|(&m, &c)| (m, snap(c, scale))).collect();
        let validation_loss: Vec<f64> = entities.iter().map(|e| e.loss(&e.prediction, &split.validation)).collect();
        let collab: BTreeMap<EntityId, f64> = training.iter().map(|&m| (m, -validation_loss[m.index()])).collect();
        let collab_gain = collab.values().sum::<f64>() / collab.len() as f64;
        ledger.record(RoundInput {
            participants: training.clone(),
            active: paired,
            realized_gains: realized,
            collab_gain,
            entity_collab_gains: collab,
            costs: costs.clone(),
        })?;
        rounds.push(PalRound {
            round: t,
            pairs,
            training: training.clone(),
            test_error: test_errors(&entities),
            validation_loss: validation_loss.clone(),
            costs: ids.iter().map(|m| costs.get(m).copied().unwrap_or(0.0)).collect(),
        });

        for m in training.clone() {
            let i = m.index();
            if validation_loss[i] < best[i] - 1e-12 {
                best[i] = validation_loss[i];
                stall[i] = 0;
            } else {
                stall[i] += 1;
                if stall[i] >= config.patience {
                    training.remove(&m);
                }
            }
        }
    }

    Ok(PalRun {
        rounds,
        ledger,
        initial_test_error,
        entities,
        split,
        estimates,
    })
}
