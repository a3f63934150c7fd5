use std::fmt;

use crate::mechanism::ledger::EntityId;

pub type Result<T> = std::result::Result<T, IclError>;

/// A single rejected parameter, addressed by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamError {
    pub field: String,
    pub reason: String,
}

impl ParamError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ParamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IclError {
    #[error("instance too large: enumeration needs {required} evaluations, budget is {budget}")]
    InstanceTooLarge { required: u128, budget: u128 },

    #[error("invalid selection vector: {0}")]
    InvalidSelectionVector(String),

    #[error("active set is empty")]
    EmptyActiveSet,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("client {0} has no initialized history")]
    UninitializedHistory(EntityId),

    #[error("objective gradient is not finite")]
    NonFiniteGradient,

    #[error("subjects are misaligned: {0}")]
    MisalignedSubjects(String),

    #[error("entity {0} cannot be paired with itself")]
    SelfPairing(EntityId),

    #[error("degenerate denominator for entity {0}")]
    DegenerateDenominator(EntityId),

    #[error("active entity {0} is not a participant")]
    ActiveNotParticipant(EntityId),

    #[error("invalid parameters: {}", join_params(.0))]
    InvalidParams(Vec<ParamError>),

    #[error("ledger invariant violated: {0}")]
    Ledger(String),
}

fn join_params(errors: &[ParamError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl IclError {
    /// Turns a list of validation failures into `Ok(())` when empty.
    pub fn check(errors: Vec<ParamError>) -> Result<()> {
        if errors.is_empty() {
            Ok(())
        } else {
            Err(IclError::InvalidParams(errors))
        }
    }
}
