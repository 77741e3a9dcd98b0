//! Evaluation backends.
//!
//! Every backend maps `(configuration, fidelity, seed)` to a score. The cost
//! objective is the configuration's parameter fraction unless the backend
//! reports its own.

mod synthetic;
mod tabular;
pub mod worker;

use std::time::Instant;

use crate::error::{Error, Result};
use crate::pareto::ObjectiveVector;
use crate::space::{Configuration, SearchSpaceSpec};

pub use synthetic::{SyntheticLandscape, SyntheticLandscapeSpec};
pub use tabular::{load_tabular, TabularBenchmark, TabularRecord};
pub use worker::{WorkerClient, WorkerRequest, WorkerResponse};

/// Raw backend result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub score: f64,
    pub cost: Option<f64>,
}

pub trait Backend: Send + Sync {
    fn score(&self, space: &SearchSpaceSpec, config: &Configuration, fidelity: f64, seed: u64) -> Result<Scored>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub config: Configuration,
    pub score: f64,
    pub cost: f64,
    pub fidelity: f64,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl Observation {
    pub fn objectives(&self) -> ObjectiveVector {
        ObjectiveVector::new(self.score, self.cost)
    }
}

pub fn check_fidelity(fidelity: f64) -> Result<()> {
    if fidelity > 0.0 && fidelity <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidRun(format!("fidelity {fidelity} outside (0, 1]")))
    }
}

pub fn evaluate(
    backend: &dyn Backend,
    space: &SearchSpaceSpec,
    config: &Configuration,
    fidelity: f64,
    seed: u64,
) -> Result<Observation> {
    check_fidelity(fidelity)?;
    let exact_cost = space.param_fraction(config)?;
    let start = Instant::now();
    let scored = backend.score(space, config, fidelity, seed)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    if !scored.score.is_finite() {
        return Err(Error::Evaluation(format!(
            "backend returned non-finite score for {config}"
        )));
    }
    Ok(Observation {
        config: config.clone(),
        score: scored.score,
        cost: scored.cost.unwrap_or(exact_cost),
        fidelity,
        seed,
        wall_time_s,
    })
}
