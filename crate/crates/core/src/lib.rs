//! Continuity bounds for the number of losses during a busy period of an
//! M/GI/1/n queue whose service law is close to exponential, together with
//! a busy-period simulator and empirical dominance checks.

pub mod branching;
pub mod dist;
pub mod dominance;
pub mod error;
pub mod metrics;
pub mod quad;
pub mod sim;

pub use dist::{DistSpec, EvaluableCdf, MixtureService, Residual};
pub use error::{Error, Result};
