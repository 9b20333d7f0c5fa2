//! Continuous-time multi-agent market equilibria with power trading costs.
//!
//! Agents' policies are learned by per-agent generators; the asset's drift and
//! volatility by a discriminator that enforces market clearing and the terminal
//! price condition. The two alternate, each frozen while the other trains.

pub mod checkpoint;
pub mod cli;
pub mod diffcore;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod generator;
pub mod market;
pub mod oracle;
pub mod paths;
pub mod rollout;
pub mod trainer;

pub use error::{Error, Result};
