//! Game primitives shared by all backends: profit accounting, incentive
//! predicates, equilibrium checking and probabilistic selection.
//!
//! Expectations entering the predicates are supplied by the caller as plain
//! scalars. Nothing in this module samples to estimate them.

pub mod dist;
pub mod ledger;
pub mod nash;
pub mod profit;
pub mod selection;
pub mod utility;

pub use dist::FiniteDist;
pub use ledger::{EntityId, GameLedger, RoundInput, RoundRecord};
pub use nash::{nash_check, CandidateReport, NashReport, SmallCandidate, SmallGame};
pub use profit::{
    incent_parti, incent_sys, participant_profit, social_welfare_lambda, system_profit,
    ProfitRecord, SystemObjective,
};
pub use selection::{
    optimize_selection, sample_active, EnumeratedGainObjective, SelectionObjective,
    SelectionOptimum, SelectionVector, SearchOptions,
};
pub use utility::UtilityIncome;
