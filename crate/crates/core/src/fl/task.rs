use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ParamError, Result};
use crate::stats::{dot, sigmoid, sq_dist};

/// Synthetic learning task shared by all clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    /// Mean estimation. The target has norm `target_norm` in a random
    /// direction; each client holds `samples_per_client` noisy copies of it.
    /// A local update is `blend·x̄ + (1 − blend)·(local sample mean)`.
    Quadratic {
        dim: usize,
        target_norm: f64,
        noise_sd: f64,
        samples_per_client: usize,
        local_blend: f64,
    },
    /// Two Gaussian blobs at `±separation/2` along a random unit direction,
    /// fit by logistic regression without intercept. A local update runs
    /// `local_steps` full-batch gradient steps from the global model.
    Logistic {
        dim: usize,
        samples_per_client: usize,
        test_samples: usize,
        separation: f64,
        local_steps: usize,
        local_lr: f64,
    },
}

impl Default for Task {
    fn default() -> Self {
        Task::Quadratic {
            dim: 10,
            target_norm: 5.5,
            noise_sd: 2.0,
            samples_per_client: 8,
            local_blend: 0.0,
        }
    }
}

impl Task {
    pub fn dim(&self) -> usize {
        match *self {
            Task::Quadratic { dim, .. } | Task::Logistic { dim, .. } => dim,
        }
    }

    pub fn validation_errors(&self) -> Vec<ParamError> {
        let mut errors = Vec::new();
        let mut need = |ok: bool, field: &str, reason: &str| {
            if !ok {
                errors.push(ParamError::new(format!("task.{field}"), reason));
            }
        };
        match *self {
            Task::Quadratic {
                dim,
                target_norm,
                noise_sd,
                samples_per_client,
                local_blend,
            } => {
                need(dim >= 1, "dim", "must be >= 1");
                need(target_norm.is_finite() && target_norm >= 0.0, "target_norm", "must be finite and >= 0");
                need(noise_sd.is_finite() && noise_sd >= 0.0, "noise_sd", "must be finite and >= 0");
                need(samples_per_client >= 1, "samples_per_client", "must be >= 1");
                need((0.0..=1.0).contains(&local_blend), "local_blend", "must lie in [0, 1]");
            }
            Task::Logistic {
                dim,
                samples_per_client,
                test_samples,
                separation,
                local_steps,
                local_lr,
            } => {
                need(dim >= 1, "dim", "must be >= 1");
                need(samples_per_client >= 1, "samples_per_client", "must be >= 1");
                need(test_samples >= 1, "test_samples", "must be >= 1");
                need(separation.is_finite() && separation >= 0.0, "separation", "must be finite and >= 0");
                need(local_steps >= 1, "local_steps", "must be >= 1");
                need(local_lr.is_finite() && local_lr > 0.0, "local_lr", "must be finite and > 0");
            }
        }
        errors
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Labeled {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Labeled {
    fn draw<R: Rng + ?Sized>(n: usize, center: &[f64], rng: &mut R) -> Self {
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let label = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            x.push(
                center
                    .iter()
                    .map(|c| label * c + rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            y.push(label);
        }
        Self { x, y }
    }

    fn mean_log_loss(&self, w: &[f64]) -> f64 {
        let total: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(x, y)| softplus(-y * dot(w, x)))
            .sum();
        total / self.y.len() as f64
    }

    fn loss_gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        for (x, y) in self.x.iter().zip(&self.y) {
            let r = -y * sigmoid(-y * dot(w, x), 1.0);
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += r * xi;
            }
        }
        let n = self.y.len() as f64;
        g.iter_mut().for_each(|gi| *gi /= n);
        g
    }
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
enum Instance {
    Quadratic {
        target: Vec<f64>,
        local_means: Vec<Vec<f64>>,
        blend: f64,
    },
    Logistic {
        direction: Vec<f64>,
        local: Vec<Labeled>,
        test: Labeled,
        steps: usize,
        lr: f64,
    },
}

/// A drawn task: the server's test criterion plus every client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    inner: Instance,
}

fn random_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&u, &u).sqrt();
        if norm > 1e-12 {
            return u.into_iter().map(|v| v / norm).collect();
        }
    }
}

impl TaskInstance {
    /// Draws the target and `flipped.len()` clients. Flipped clients train on
    /// corrupted data: samples reflected about the origin (quadratic) or
    /// negated labels (logistic).
    pub fn generate<R: Rng + ?Sized>(task: &Task, flipped: &[bool], rng: &mut R) -> Result<Self> {
        crate::error::IclError::check(task.validation_errors())?;
        let inner = match *task {
            Task::Quadratic {
                dim,
                target_norm,
                noise_sd,
                samples_per_client,
                local_blend,
            } => {
                let target: Vec<f64> = random_direction(dim, rng)
                    .into_iter()
                    .map(|v| v * target_norm)
                    .collect();
                let local_means = flipped
                    .iter()
                    .map(|&flip| {
                        let mut sum = vec![0.0; dim];
                        for _ in 0..samples_per_client {
                            for (s, t) in sum.iter_mut().zip(&target) {
                                *s += t + noise_sd * rng.sample::<f64, _>(StandardNormal);
                            }
                        }
                        let sign = if flip { -1.0 } else { 1.0 };
                        sum.into_iter()
                            .map(|s| sign * s / samples_per_client as f64)
                            .collect()
                    })
                    .collect();
                Instance::Quadratic {
                    target,
                    local_means,
                    blend: local_blend,
                }
            }
            Task::Logistic {
                dim,
                samples_per_client,
                test_samples,
                separation,
                local_steps,
                local_lr,
            } => {
                let direction = random_direction(dim, rng);
                let center: Vec<f64> = direction.iter().map(|d| d * separation / 2.0).collect();
                let test = Labeled::draw(test_samples, &center, rng);
                let local = flipped
                    .iter()
                    .map(|&flip| {
                        let mut data = Labeled::draw(samples_per_client, &center, rng);
                        if flip {
                            data.y.iter_mut().for_each(|y| *y = -*y);
                        }
                        data
                    })
                    .collect();
                Instance::Logistic {
                    direction,
                    local,
                    test,
                    steps: local_steps,
                    lr: local_lr,
                }
            }
        };
        Ok(Self { inner })
    }

    pub fn dim(&self) -> usize {
        match &self.inner {
            Instance::Quadratic { target, .. } => target.len(),
            Instance::Logistic { direction, .. } => direction.len(),
        }
    }

    pub fn clients(&self) -> usize {
        match &self.inner {
            Instance::Quadratic { local_means, .. } => local_means.len(),
            Instance::Logistic { local, .. } => local.len(),
        }
    }

    /// Quadratic target, or the unit direction separating the logistic blobs.
    pub fn target(&self) -> &[f64] {
        match &self.inner {
            Instance::Quadratic { target, .. } => target,
            Instance::Logistic { direction, .. } => direction,
        }
    }

    /// Negative test loss: `−‖x − μ*‖²` or minus the mean logistic loss.
    pub fn gain(&self, model: &[f64]) -> f64 {
        match &self.inner {
            Instance::Quadratic { target, .. } => -sq_dist(model, target),
            Instance::Logistic { test, .. } => -test.mean_log_loss(model),
        }
    }

    /// Gradient of [`TaskInstance::gain`] in the model.
    pub fn gain_gradient(&self, model: &[f64]) -> Vec<f64> {
        match &self.inner {
            Instance::Quadratic { target, .. } => {
                model.iter().zip(target).map(|(x, t)| -2.0 * (x - t)).collect()
            }
            Instance::Logistic { test, .. } => {
                test.loss_gradient(model).into_iter().map(|g| -g).collect()
            }
        }
    }

    /// Client `m`'s model after training from `global`.
    pub fn local_update(&self, m: usize, global: &[f64]) -> Vec<f64> {
        match &self.inner {
            Instance::Quadratic {
                local_means, blend, ..
            } => global
                .iter()
                .zip(&local_means[m])
                .map(|(g, y)| blend * g + (1.0 - blend) * y)
                .collect(),
            Instance::Logistic {
                local, steps, lr, ..
            } => {
                let mut w = global.to_vec();
                for _ in 0..*steps {
                    let g = local[m].loss_gradient(&w);
                    for (wi, gi) in w.iter_mut().zip(g) {
                        *wi -= lr * gi;
                    }
                }
                w
            }
        }
    }
}

/// `gain` of `model` on a drawn task.
pub fn gain(model: &[f64], task: &TaskInstance) -> f64 {
    task.gain(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RunSeed;

    #[test]
    fn logistic_gradient_matches_differences() {
        let task = Task::Logistic {
            dim: 3,
            samples_per_client: 20,
            test_samples: 50,
            separation: 2.0,
            local_steps: 1,
            local_lr: 0.1,
        };
        let inst = TaskInstance::generate(&task, &[false], &mut RunSeed(1).stream(0, 0)).unwrap();
        let w = [0.3, -0.2, 0.5];
        let g = inst.gain_gradient(&w);
        for i in 0..3 {
            let h = 1e-6;
            let (mut a, mut b) = (w, w);
            a[i] += h;
            b[i] -= h;
            let fd = (inst.gain(&a) - inst.gain(&b)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(800.0), 800.0);
        assert_eq!(softplus(-800.0), 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
