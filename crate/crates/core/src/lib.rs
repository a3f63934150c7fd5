//! Incentivized collaborative learning (ICL) at desk scale.
//!
//! The crate is split into the game primitives shared by every backend
//! ([`mechanism`]) and three concrete games built on top of them:
//!
//! * [`fl`]: federated learning with a learned two-parameter pricing plan,
//! * [`pal`]: parallel assisted learning between vertically partitioned entities,
//! * [`mab`]: a collaborative multi-armed bandit with a piecewise pricing plan.
//!
//! Every stochastic routine takes an explicit [`rng::RunSeed`] or stream handle,
//! so a run is a pure function of its configuration and seed.

pub mod error;
pub mod fl;
pub mod mab;
pub mod mechanism;
pub mod pal;
pub mod rng;
pub mod stats;

pub use error::{IclError, ParamError, Result};
pub use mechanism::ledger::{EntityId, GameLedger, RoundRecord};
