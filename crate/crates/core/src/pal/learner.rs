use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ParamError;

/// Regressor an entity fits on its own features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Learner {
    /// Least squares with an L2 penalty on the slopes only.
    Ridge { lambda: f64 },
    /// Gradient-boosted depth-1 trees on squared loss.
    Stumps { rounds: usize, learning_rate: f64 },
}

impl Default for Learner {
    fn default() -> Self {
        Learner::Ridge { lambda: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

/// A fitted regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Linear { coef: Vec<f64>, intercept: f64 },
    Stumps { intercept: f64, stumps: Vec<Stump> },
}

impl Model {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Model::Linear { coef, intercept } => intercept + coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>(),
            Model::Stumps { intercept, stumps } => {
                intercept
                    + stumps
                        .iter()
                        .map(|s| if x[s.feature] <= s.threshold { s.left } else { s.right })
                        .sum::<f64>()
            }
        }
    }
}

impl Learner {
    pub fn validation_errors(&self, field: &str) -> Vec<ParamError> {
        let ok = match *self {
            Learner::Ridge { lambda } => lambda.is_finite() && lambda >= 0.0,
            Learner::Stumps { rounds, learning_rate } => {
                rounds >= 1 && learning_rate.is_finite() && learning_rate > 0.0
            }
        };
        if ok {
            Vec::new()
        } else {
            vec![ParamError::new(field, "needs lambda >= 0, or rounds >= 1 and learning_rate > 0")]
        }
    }

    /// Fits `target[r]` on `x[r]` for every `r` in `rows`.
    pub fn fit(&self, x: &[Vec<f64>], rows: &[usize], target: &[f64]) -> Model {
        match *self {
            Learner::Ridge { lambda } => fit_ridge(x, rows, target, lambda),
            Learner::Stumps { rounds, learning_rate } => fit_stumps(x, rows, target, rounds, learning_rate),
        }
    }
}

fn fit_ridge(x: &[Vec<f64>], rows: &[usize], target: &[f64], lambda: f64) -> Model {
    let d = x.first().map_or(0, Vec::len);
    if rows.is_empty() {
        return Model::Linear {
            coef: vec![0.0; d],
            intercept: 0.0,
        };
    }
    let n = rows.len() as f64;
    let mut x_mean = vec![0.0; d];
    let mut y_mean = 0.0;
    for &r in rows {
        for (m, v) in x_mean.iter_mut().zip(&x[r]) {
            *m += v;
        }
        y_mean += target[r];
    }
    x_mean.iter_mut().for_each(|m| *m /= n);
    y_mean /= n;

    let centered = DMatrix::from_fn(rows.len(), d, |i, j| x[rows[i]][j] - x_mean[j]);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| target[r] - y_mean));
    let gram = centered.transpose() * &centered + DMatrix::identity(d, d) * lambda;
    let rhs = centered.transpose() * y;
    let coef = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.lu().solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(d));
    let coef: Vec<f64> = coef.iter().copied().collect();
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(c, m)| c * m).sum::<f64>();
    Model::Linear { coef, intercept }
}

fn fit_stumps(x: &[Vec<f64>], rows: &[usize], target: &[f64], rounds: usize, lr: f64) -> Model {
    let d = x.first().map_or(0, Vec::len);
    let intercept = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|&r| target[r]).sum::<f64>() / rows.len() as f64
    };
    let mut resid: Vec<f64> = rows.iter().map(|&r| target[r] - intercept).collect();
    let sorted: Vec<Vec<usize>> = (0..d)
        .map(|j| {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.sort_by(|&a, &b| x[rows[a]][j].total_cmp(&x[rows[b]][j]));
            order
        })
        .collect();
    let mut stumps = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let total: f64 = resid.iter().sum();
        let n = resid.len() as f64;
        // Best split maximizes the between-group sum of squares.
        let mut best: Option<(f64, Stump)> = None;
        for (j, order) in sorted.iter().enumerate() {
            let mut left_sum = 0.0;
            for k in 0..order.len().saturating_sub(1) {
                left_sum += resid[order[k]];
                let (a, b) = (x[rows[order[k]]][j], x[rows[order[k + 1]]][j]);
                if a == b {
                    continue;
                }
                let nl = (k + 1) as f64;
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / (n - nl);
                if best.as_ref().map_or(true, |(s, _)| score > *s) {
                    best = Some((
                        score,
                        Stump {
                            feature: j,
                            threshold: 0.5 * (a + b),
                            left: lr * left_sum / nl,
                            right: lr * right_sum / (n - nl),
                        },
                    ));
                }
            }
        }
        let Some((_, stump)) = best else { break };
        for (i, &r) in rows.iter().enumerate() {
            resid[i] -= if x[r][stump.feature] <= stump.threshold {
                stump.left
            } else {
                stump.right
            };
        }
        stumps.push(stump);
    }
    Model::Stumps { intercept, stumps }
}
