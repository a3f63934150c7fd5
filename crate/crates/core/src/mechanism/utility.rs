use serde::{Deserialize, Serialize};

use crate::error::{IclError, ParamError, Result};

/// Converts a realized gain into monetary-equivalent income.
///
/// Both variants are nondecreasing. The tabulated form interpolates linearly
/// between knots and is flat outside the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityIncome {
    Linear { u: f64 },
    TabulatedMonotone { knots: Vec<(f64, f64)> },
}

impl Default for UtilityIncome {
    fn default() -> Self {
        UtilityIncome::Linear { u: 1.0 }
    }
}

impl UtilityIncome {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn linear(u: f64) -> Result<Self> {
        let income = UtilityIncome::Linear { u };
        income.validate()?;
        Ok(income)
    }

    pub fn tabulated(knots: Vec<(f64, f64)>) -> Result<Self> {
        let income = UtilityIncome::TabulatedMonotone { knots };
        income.validate()?;
        Ok(income)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        match self {
            UtilityIncome::Linear { u } => {
                if !(u.is_finite() && *u >= 0.0) {
                    errors.push(ParamError::new("utility.u", "must be finite and >= 0"));
                }
            }
            UtilityIncome::TabulatedMonotone { knots } => {
                if knots.is_empty() {
                    errors.push(ParamError::new("utility.knots", "must not be empty"));
                }
                if knots.iter().any(|(z, v)| !z.is_finite() || !v.is_finite()) {
                    errors.push(ParamError::new("utility.knots", "must be finite"));
                }
                for w in knots.windows(2) {
                    if w[1].0 <= w[0].0 {
                        errors.push(ParamError::new(
                            "utility.knots",
                            "gains must be strictly increasing",
                        ));
                        break;
                    }
                    if w[1].1 < w[0].1 {
                        errors.push(ParamError::new("utility.knots", "incomes must be nondecreasing"));
                        break;
                    }
                }
            }
        }
        IclError::check(errors)
    }

    pub fn income(&self, z: f64) -> f64 {
        match self {
            UtilityIncome::Linear { u } => u * z,
            UtilityIncome::TabulatedMonotone { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if z <= first.0 {
                    return first.1;
                }
                if z >= last.0 {
                    return last.1;
                }
                let i = knots.partition_point(|(kz, _)| *kz <= z);
                let (z0, v0) = knots[i - 1];
                let (z1, v1) = knots[i];
                let t = (z - z0) / (z1 - z0);
                // convex combination stays inside [v0, v1]
                (v0 + t * (v1 - v0)).clamp(v0, v1)
            }
        }
    }

    /// Derivative of the income with respect to the gain (right derivative at knots).
    pub fn slope(&self, z: f64) -> f64 {
        match self {
            UtilityIncome::Linear { u } => *u,
            UtilityIncome::TabulatedMonotone { knots } => {
                if z < knots[0].0 || z >= knots[knots.len() - 1].0 {
                    return 0.0;
                }
                let i = knots.partition_point(|(kz, _)| *kz <= z);
                let (z0, v0) = knots[i - 1];
                let (z1, v1) = knots[i];
                (v1 - v0) / (z1 - z0)
            }
        }
    }
}
