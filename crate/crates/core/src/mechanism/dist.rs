use serde::{Deserialize, Serialize};

use crate::error::{IclError, ParamError, Result};

/// A finitely supported distribution over real outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDist {
    support: Vec<(f64, f64)>,
}

impl FiniteDist {
    /// `(value, probability)` pairs; probabilities must be nonnegative and sum to one.
    pub fn new(support: Vec<(f64, f64)>) -> Result<Self> {
        let mut errors = Vec::new();
        if support.is_empty() {
            errors.push(ParamError::new("support", "must not be empty"));
        }
        if support
            .iter()
            .any(|(v, p)| !v.is_finite() || !p.is_finite() || *p < 0.0)
        {
            errors.push(ParamError::new("support", "values must be finite, probabilities >= 0"));
        }
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            errors.push(ParamError::new("support", format!("probabilities sum to {total}")));
        }
        IclError::check(errors)?;
        Ok(Self { support })
    }

    pub fn point(value: f64) -> Self {
        Self {
            support: vec![(value, 1.0)],
        }
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.support.iter().map(|(v, p)| p * f(*v)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|v| v)
    }
}

/// Calls `visit(values, probability)` for every joint outcome of independent draws.
pub(crate) fn for_each_joint(dists: &[&FiniteDist], mut visit: impl FnMut(&[f64], f64)) {
    let mut idx = vec![0usize; dists.len()];
    let mut values: Vec<f64> = dists.iter().map(|d| d.support[0].0).collect();
    loop {
        let p: f64 = dists
            .iter()
            .zip(&idx)
            .map(|(d, &i)| d.support[i].1)
            .product();
        visit(&values, p);
        // odometer increment
        let mut k = 0;
        loop {
            if k == dists.len() {
                return;
            }
            idx[k] += 1;
            if idx[k] < dists[k].len() {
                values[k] = dists[k].support[idx[k]].0;
                break;
            }
            idx[k] = 0;
            values[k] = dists[k].support[0].0;
            k += 1;
        }
    }
}
