use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IclError, ParamError, Result};
use crate::mechanism::selection::subset_weights;
use crate::mechanism::{optimize_selection, EntityId, SearchOptions, SelectionObjective, SelectionVector};

/// One Bernoulli(ρ) draw of the weighted active average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Draw {
    /// `‖Σ b_i ζ_i x_i / Σ b_j ζ_j − x̄_P‖₁`.
    pub residual: f64,
    /// Draws discarded because nobody was selected.
    pub resamples: usize,
}

/// Distance between the average over a random active subset and the
/// average over all `K = models.len()` participants. Needs `K ≥ 10`.
pub fn theorem2_residual<R: Rng + ?Sized>(
    rho: f64,
    weights: &[f64],
    models: &[Vec<f64>],
    rng: &mut R,
) -> Result<Theorem2Draw> {
    let k = models.len();
    let mut errors = Vec::new();
    if k < 10 {
        errors.push(ParamError::new("models", "need at least 10 participants"));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        errors.push(ParamError::new("rho", "must lie in (0, 1]"));
    }
    if !weights.iter().all(|w| w.is_finite() && *w > 0.0) {
        errors.push(ParamError::new("weights", "must be finite and > 0"));
    }
    IclError::check(errors)?;
    if weights.len() != k {
        return Err(IclError::DimensionMismatch {
            expected: k,
            found: weights.len(),
        });
    }
    let dim = models[0].len();
    if let Some(bad) = models.iter().find(|x| x.len() != dim) {
        return Err(IclError::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }

    // Averages are offsets from the first model, so identical models give
    // exactly that model whatever the weights.
    let origin = &models[0];
    let weighted_mean = |include: &dyn Fn(usize) -> bool| {
        let mut acc = vec![0.0; dim];
        let mut total = 0.0;
        for (i, (x, w)) in models.iter().zip(weights).enumerate() {
            if include(i) {
                for ((a, xi), oi) in acc.iter_mut().zip(x).zip(origin) {
                    *a += w * (xi - oi);
                }
                total += w;
            }
        }
        acc.iter()
            .zip(origin)
            .map(|(a, oi)| oi + a / total)
            .collect::<Vec<f64>>()
    };
    let full = weighted_mean(&|_| true);

    let mut resamples = 0;
    let selected = loop {
        let b: Vec<bool> = (0..k).map(|_| rng.gen::<f64>() < rho).collect();
        if b.iter().any(|&x| x) {
            break b;
        }
        resamples += 1;
    };
    let partial = weighted_mean(&|i| selected[i]);
    let residual = partial.iter().zip(&full).map(|(a, b)| (a - b).abs()).sum();
    Ok(Theorem2Draw {
        residual,
        resamples,
    })
}

pub const PROP2_MAX_PARTICIPANTS: usize = 12;

/// Expected gain `−E(x̄_A − μ)²` of averaging the active participants'
/// estimates, where participant `m` reports mean `μ_m` and variance `σ²`.
///
/// The variance part is `σ²/Σq`. The bias part `E{(μ̄_A − μ)² | A ≠ ∅}` is
/// exact over all active subsets.
struct Prop2Objective {
    ids: Vec<EntityId>,
    variance: f64,
    bias_sq: Vec<f64>,
}

impl Prop2Objective {
    fn new(means: &[f64], target: f64, variance: f64) -> Self {
        let n = means.len();
        let bias_sq = (0usize..1 << n)
            .map(|mask| {
                let members: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| means[i]).collect();
                if members.is_empty() {
                    0.0
                } else {
                    (members.iter().sum::<f64>() / members.len() as f64 - target).powi(2)
                }
            })
            .collect();
        Self {
            ids: (0..n).map(EntityId::from).collect(),
            variance,
            bias_sq,
        }
    }
}

impl SelectionObjective for Prop2Objective {
    fn ids(&self) -> &[EntityId] {
        &self.ids
    }

    fn evaluation_cost(&self) -> u128 {
        self.bias_sq.len() as u128
    }

    fn value(&self, q: &[f64]) -> f64 {
        let w = subset_weights(q);
        let nonempty = 1.0 - w[0];
        let bias: f64 = w.iter().zip(&self.bias_sq).skip(1).map(|(p, b)| p * b).sum::<f64>() / nonempty;
        -(self.variance / q.iter().sum::<f64>() + bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop2Report {
    /// `U(q*) / U(q_uniform)`, in `[0, 1]`; 1 means uniform selection is optimal.
    pub ratio: f64,
    pub uniform_value: f64,
    pub optimal_value: f64,
    /// Best grid point, or the uniform vector when no grid point beats it.
    pub optimal: SelectionVector,
}

/// How close uniform selection comes to the best selection vector.
///
/// Both values are negative expected losses, so the ratio is taken as
/// optimal over uniform to read as an efficiency.
pub fn prop2_ratio(
    means: &[f64],
    target: f64,
    sigma: f64,
    rho: f64,
    options: SearchOptions,
) -> Result<Prop2Report> {
    let n = means.len();
    if n > PROP2_MAX_PARTICIPANTS {
        return Err(IclError::InstanceTooLarge {
            required: 1u128 << n,
            budget: 1u128 << PROP2_MAX_PARTICIPANTS,
        });
    }
    let mut errors = Vec::new();
    if n == 0 {
        errors.push(ParamError::new("means", "must not be empty"));
    }
    if !means.iter().all(|m| m.is_finite()) || !target.is_finite() {
        errors.push(ParamError::new("means", "must be finite"));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        errors.push(ParamError::new("sigma", "must be finite and >= 0"));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        errors.push(ParamError::new("rho", "must lie in (0, 1]"));
    }
    IclError::check(errors)?;

    let objective = Prop2Objective::new(means, target, sigma * sigma);
    let uniform_q = vec![rho; n];
    let uniform_value = objective.value(&uniform_q);
    let grid = optimize_selection(rho, &objective, options)?;
    let (optimal, optimal_value) = if grid.value > uniform_value {
        (grid.selection, grid.value)
    } else {
        (SelectionVector::uniform(objective.ids.iter().copied(), rho)?, uniform_value)
    };
    let ratio = if uniform_value == 0.0 {
        1.0
    } else {
        optimal_value / uniform_value
    };
    Ok(Prop2Report {
        ratio,
        uniform_value,
        optimal_value,
        optimal,
    })
}
