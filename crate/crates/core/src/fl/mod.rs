//! Incentivized federated learning with a learned pricing plan.
//!
//! Every participant pays `θ1·z̄`. Active participants additionally pay a
//! correction that grows with how far their own model lags the aggregate, so
//! laggards and corrupted clients price themselves out. The server tunes θ by
//! gradient ascent on a smoothed estimate of each client's marginal value,
//! built from the rounds in which that client was last active.

mod sim;
mod task;
mod theory;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{IclError, ParamError, Result};
use crate::mechanism::EntityId;
use crate::stats::sigmoid;

pub use sim::{run_fl, ByzantineKind, FlConfig, FlMode, FlRound, FlRun};
pub use task::{gain, Task, TaskInstance};
pub use theory::{prop2_ratio, theorem2_residual, Prop2Report, Theorem2Draw};

/// Central-difference step for the pricing objective.
pub const GRADIENT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlPricing {
    pub theta1: f64,
    pub theta2: f64,
    /// Strength of the correction charged to active participants.
    pub gamma: f64,
    pub rho: f64,
    /// Sigmoid temperature.
    pub s: f64,
    /// Learning rate for θ.
    pub eta: f64,
}

impl Default for FlPricing {
    fn default() -> Self {
        Self {
            theta1: -0.5,
            theta2: 0.0,
            gamma: 2001.0,
            rho: 0.3,
            s: 0.005,
            eta: 0.01,
        }
    }
}

impl FlPricing {
    pub fn validation_errors(&self, prefix: &str) -> Vec<ParamError> {
        let mut errors = Vec::new();
        let mut need = |ok: bool, field: &str, reason: &str| {
            if !ok {
                errors.push(ParamError::new(format!("{prefix}{field}"), reason));
            }
        };
        need(self.theta1.is_finite(), "theta1", "must be finite");
        need(self.theta2.is_finite(), "theta2", "must be finite");
        need(self.gamma.is_finite() && self.gamma >= 1.0, "gamma", "must be finite and >= 1");
        need(self.rho > 0.0 && self.rho <= 1.0, "rho", "must lie in (0, 1]");
        need(self.s.is_finite() && self.s > 0.0, "s", "must be finite and > 0");
        need(self.eta.is_finite() && self.eta > 0.0, "eta", "must be finite and > 0");
        errors
    }

    pub fn validate(&self) -> Result<()> {
        IclError::check(self.validation_errors(""))
    }

    pub fn theta(&self) -> [f64; 2] {
        [self.theta1, self.theta2]
    }

    pub fn with_theta(&self, theta: [f64; 2]) -> Self {
        Self {
            theta1: theta[0],
            theta2: theta[1],
            ..*self
        }
    }

    fn correction(&self, zbar: f64, z_m: f64) -> f64 {
        self.theta1 * zbar * (-1.0 + self.gamma * sigmoid(zbar - z_m - self.theta2, self.s))
    }
}

/// Realized price. `z_m` is only read for active participants.
pub fn fl_cost(zbar: f64, z_m: f64, is_active: bool, pricing: &FlPricing) -> f64 {
    let base = pricing.theta1 * zbar;
    if is_active {
        base + pricing.correction(zbar, z_m)
    } else {
        base
    }
}

/// Price expected before selection: the correction weighted by `ρ`.
pub fn expected_cost(zbar: f64, z_m: f64, pricing: &FlPricing) -> f64 {
    pricing.theta1 * zbar + pricing.rho * pricing.correction(zbar, z_m)
}

pub fn client_decide(delta: f64) -> bool {
    delta > 0.0
}

/// Weighted average of the active clients' models.
pub fn aggregate(models: &[Vec<f64>], weights: &[f64], active: &BTreeSet<EntityId>) -> Result<Vec<f64>> {
    if models.len() != weights.len() {
        return Err(IclError::DimensionMismatch {
            expected: models.len(),
            found: weights.len(),
        });
    }
    let first = active.first().ok_or(IclError::EmptyActiveSet)?;
    let dim = models
        .get(first.index())
        .ok_or(IclError::DimensionMismatch {
            expected: first.index() + 1,
            found: models.len(),
        })?
        .len();
    let mut acc = vec![0.0; dim];
    let mut total = 0.0;
    for m in active {
        let x = models.get(m.index()).ok_or(IclError::DimensionMismatch {
            expected: m.index() + 1,
            found: models.len(),
        })?;
        if x.len() != dim {
            return Err(IclError::DimensionMismatch {
                expected: dim,
                found: x.len(),
            });
        }
        let w = weights[m.index()];
        for (a, xi) in acc.iter_mut().zip(x) {
            *a += w * xi;
        }
        total += w;
    }
    Ok(acc.into_iter().map(|a| a / total).collect())
}

/// Optimal two-class split of `values` by within-class sum of squares.
///
/// Returns the midpoint between the two classes. With fewer than two values,
/// or when every split ties at zero, the lowest split point wins.
pub fn jenks_two_class(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => return 0.0,
        1 => return v[0],
        _ => {}
    }
    let sse = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let mut best = (f64::INFINITY, 0.0);
    for i in 1..v.len() {
        let cost = sse(&v[..i]) + sse(&v[i..]);
        if cost < best.0 {
            best = (cost, 0.5 * (v[i - 1] + v[i]));
        }
    }
    best.1
}

/// What the server remembers about a client from the round it was last active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientHistory {
    pub last_active: usize,
    /// Collaboration gain `z̄_τ` of that round.
    pub zbar: f64,
    /// The client's own gain `z_{m,τ}`.
    pub z: f64,
    /// `(ζ_m / Σ_{A_τ} ζ) · ∇f(x̄_τ) · (x̄_τ − x_{m,τ})`.
    pub deviation: f64,
}

/// `O_t(θ)`: smoothed participation times each client's marginal value.
///
/// `zbar_prev` is the latest collaboration gain `z̄_{t−1}`; the server
/// predicts clients with unit utility and no belief bias.
pub fn server_objective(
    histories: &[Option<ClientHistory>],
    zbar_prev: f64,
    theta: [f64; 2],
    lambda: f64,
    pricing: &FlPricing,
) -> Result<f64> {
    let p = pricing.with_theta(theta);
    let mut total = 0.0;
    for (m, h) in histories.iter().enumerate() {
        let h = h.ok_or(IclError::UninitializedHistory(EntityId::from(m)))?;
        let c = expected_cost(h.zbar, h.z, &p);
        let delta = zbar_prev - h.z - c;
        total += sigmoid(delta, p.s) * (lambda * c - h.deviation);
    }
    Ok(total)
}

/// Central-difference gradient with step `h`.
pub fn central_gradient(
    objective: impl Fn([f64; 2]) -> Result<f64>,
    theta: [f64; 2],
    h: f64,
) -> Result<[f64; 2]> {
    let mut g = [0.0; 2];
    for (i, gi) in g.iter_mut().enumerate() {
        let (mut up, mut down) = (theta, theta);
        up[i] += h;
        down[i] -= h;
        *gi = (objective(up)? - objective(down)?) / (2.0 * h);
    }
    Ok(g)
}

/// One ascent step `θ + η·∇O`.
pub fn server_update(theta: [f64; 2], gradient: [f64; 2], eta: f64) -> Result<[f64; 2]> {
    if !gradient.iter().all(|g| g.is_finite()) {
        return Err(IclError::NonFiniteGradient);
    }
    let next = [theta[0] + eta * gradient[0], theta[1] + eta * gradient[1]];
    if !next.iter().all(|t| t.is_finite()) {
        return Err(IclError::NonFiniteGradient);
    }
    Ok(next)
}
