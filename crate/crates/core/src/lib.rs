//! Multi-objective Bayesian optimization over a combinatorial space of
//! parameter-efficient fine-tuning (PEFT) configurations.
//!
//! The search trades task score (maximized) against the fraction of trainable
//! parameters a configuration adds (minimized) and returns a Pareto-optimal
//! set of configurations.

pub mod acquisition;
pub mod error;
pub mod gp;
pub mod objectives;
pub mod orchestrator;
pub mod pareto;
pub mod peft;
pub mod rng;
pub mod space;

pub use error::{Error, Result};
pub use objectives::{Backend, Observation};
pub use pareto::{ObjectiveVector, ParetoFront};
pub use space::{ConfigText, Configuration, EncodedPoint, SearchSpaceSpec};
