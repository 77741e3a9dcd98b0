//! The optimization loop: random initial design, then surrogate-guided
//! batches until the evaluation budget is spent.

mod persist;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::acquisition::{local_search_ranked, AcquisitionSpec, Nehvi, DEFAULT_MAX_STEPS};
use crate::error::{Error, Result};
use crate::gp::{self, FitOptions, GpModel};
use crate::objectives::{check_fidelity, evaluate, Backend, Observation};
use crate::pareto::{hypervolume, nadir, non_dominated, non_dominated_indices, ObjectiveVector, ParetoFront};
use crate::rng::{derive_seed, seeded, Stream};
use crate::space::{Configuration, SearchSpaceSpec};

pub use persist::{format_f64, read_log, StateHeader, TrialRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Bayesian,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub space: SearchSpaceSpec,
    pub master_seed: u64,
    pub n_init: usize,
    pub n_total: usize,
    pub batch_q: usize,
    pub fidelity: f64,
    pub fit: FitOptions,
    /// Refit hyperparameters every this many batches; in between the last
    /// fitted ensemble is conditioned on the new data.
    pub refit_every: usize,
    pub mc_samples: usize,
    pub max_steps: usize,
    pub ref_point: Option<ObjectiveVector>,
    /// Model the cost objective with its own surrogate instead of using the
    /// exact parameter fraction.
    pub model_cost: bool,
    /// Never evaluate the same configuration twice.
    pub dedup: bool,
    pub state_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(space: SearchSpaceSpec, master_seed: u64) -> Self {
        Self {
            space,
            master_seed,
            n_init: 100,
            n_total: 200,
            batch_q: 1,
            fidelity: 0.05,
            fit: FitOptions::default(),
            refit_every: 1,
            mc_samples: 128,
            max_steps: DEFAULT_MAX_STEPS,
            ref_point: None,
            model_cost: false,
            dedup: true,
            state_path: None,
            log_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        check_fidelity(self.fidelity)?;
        let bad = |m: String| Err(Error::InvalidRun(m));
        if self.n_init == 0 {
            return bad("n_init must be at least 1".into());
        }
        if self.n_total <= self.n_init {
            return bad(format!("n_total {} must exceed n_init {}", self.n_total, self.n_init));
        }
        if self.batch_q == 0 || self.refit_every == 0 || self.mc_samples == 0 {
            return bad("batch_q, refit_every and mc_samples must be positive".into());
        }
        if self.fit.restarts == 0 {
            return bad("at least one restart is required".into());
        }
        if self.dedup && (self.n_total as u128) > self.space.cardinality() {
            return bad(format!(
                "n_total {} exceeds the {} distinct configurations",
                self.n_total,
                self.space.cardinality()
            ));
        }
        Ok(())
    }
}

/// One evaluation and the batch it belonged to (0 for the initial design).
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub observation: Observation,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub master_seed: u64,
    pub trials: Vec<Trial>,
    /// `(evaluations, hypervolume)` after each evaluation.
    pub trajectory: Vec<(usize, f64)>,
}

impl RunState {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            trials: Vec::new(),
            trajectory: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.trials.iter().map(|t| t.observation.clone()).collect()
    }

    pub fn objectives(&self) -> Vec<ObjectiveVector> {
        self.trials.iter().map(|t| t.observation.objectives()).collect()
    }

    pub fn front(&self) -> ParetoFront {
        let pts: Vec<(Configuration, ObjectiveVector)> = self
            .trials
            .iter()
            .map(|t| (t.observation.config.clone(), t.observation.objectives()))
            .collect();
        non_dominated(&pts)
    }

    /// Equality on everything except wall-clock timings.
    pub fn same_outcome(&self, other: &RunState) -> bool {
        self.master_seed == other.master_seed
            && self.trials.len() == other.trials.len()
            && self.trials.iter().zip(&other.trials).all(|(a, b)| {
                let (x, y) = (&a.observation, &b.observation);
                a.iteration == b.iteration
                    && x.config == y.config
                    && x.score.to_bits() == y.score.to_bits()
                    && x.cost.to_bits() == y.cost.to_bits()
                    && x.fidelity.to_bits() == y.fidelity.to_bits()
                    && x.seed == y.seed
            })
    }

    fn refresh_trajectory(&mut self) {
        self.trajectory = hypervolume_trajectory(&self.objectives());
    }
}

/// Hypervolume of every prefix of `points`, all measured against the nadir
/// of the full sequence.
pub fn hypervolume_trajectory(points: &[ObjectiveVector]) -> Vec<(usize, f64)> {
    let Ok(reference) = nadir(points) else {
        return Vec::new();
    };
    let mut front: Vec<ObjectiveVector> = Vec::new();
    let mut out = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        front.push(*p);
        let keep = non_dominated_indices(&front);
        front = keep.into_iter().map(|k| front[k]).collect();
        out.push((i + 1, hypervolume(&front, &reference)));
    }
    out
}

/// The first `n` configurations of the run's sampling stream, distinct when
/// `distinct` is set. Bayesian and random runs share this prefix.
pub fn initial_design(config: &RunConfig, n: usize, distinct: bool) -> Result<Vec<Configuration>> {
    if distinct && (n as u128) > config.space.cardinality() {
        return Err(Error::InvalidRun(format!(
            "cannot draw {n} distinct configurations from {}",
            config.space.cardinality()
        )));
    }
    let mut rng = seeded(derive_seed(config.master_seed, Stream::Sampling, 0));
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let c = config.space.sample(&mut rng);
        if !distinct || seen.insert(c.clone()) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Surrogate-guided optimization from scratch.
pub fn run(config: &RunConfig, backend: &dyn Backend) -> Result<RunState> {
    drive(config, backend, RunState::new(config.master_seed), RunMode::Bayesian)
}

/// Uniform random search with the same initial design and evaluation seeds.
pub fn random_search(config: &RunConfig, backend: &dyn Backend) -> Result<RunState> {
    drive(config, backend, RunState::new(config.master_seed), RunMode::Random)
}

/// Continue a run from a state snapshot written by an earlier call.
///
/// The snapshot must have been produced with the same space, seed, initial
/// design size, batch size, fidelity and dedup setting; `n_total` may grow.
pub fn resume(config: &RunConfig, backend: &dyn Backend, path: &Path) -> Result<RunState> {
    let (header, state) = persist::read_snapshot(path)?;
    if let Some(why) = header.mismatch(config) {
        return Err(Error::StateMismatch(why));
    }
    if state.len() >= config.n_total {
        info!("state already holds {} of {} evaluations", state.len(), config.n_total);
        return Ok(state);
    }
    let mut config = config.clone();
    if config.state_path.is_none() {
        config.state_path = Some(path.to_path_buf());
    }
    drive(&config, backend, state, header.mode)
}

/// Read a state snapshot without running anything.
pub fn load_state(path: &Path) -> Result<(StateHeader, RunState)> {
    persist::read_snapshot(path)
}

/// Continue an in-memory state produced by [`run`] or [`random_search`].
pub fn continue_run(config: &RunConfig, backend: &dyn Backend, state: RunState, mode: RunMode) -> Result<RunState> {
    if state.master_seed != config.master_seed {
        return Err(Error::StateMismatch(format!(
            "master_seed differs: state has {}, run has {}",
            state.master_seed, config.master_seed
        )));
    }
    drive(config, backend, state, mode)
}

fn drive(config: &RunConfig, backend: &dyn Backend, mut state: RunState, mode: RunMode) -> Result<RunState> {
    config.validate()?;
    let header = StateHeader::for_run(config, mode);
    let design_len = match mode {
        RunMode::Bayesian => config.n_init,
        RunMode::Random => config.n_total,
    };
    let design = initial_design(config, design_len, config.dedup)?;
    for (i, t) in state.trials.iter().enumerate().take(config.n_init.min(design_len)) {
        if t.observation.config != design[i] {
            return Err(Error::StateMismatch(format!(
                "observation {} does not match the initial design",
                i + 1
            )));
        }
    }
    let mut surrogate = Surrogate::default();
    while state.len() < config.n_total {
        let n = state.len();
        let (iteration, batch) = if n < config.n_init {
            let end = (n + config.batch_q).min(config.n_init);
            (0, design[n..end].to_vec())
        } else {
            let b = (n - config.n_init) / config.batch_q;
            let q = config.batch_q.min(config.n_total - n);
            let batch = match mode {
                RunMode::Random => design[n..n + q].to_vec(),
                RunMode::Bayesian => suggest(config, &state, &mut surrogate, b, q)?,
            };
            (b + 1, batch)
        };
        let trials = match evaluate_batch(config, backend, &batch, n, iteration) {
            Ok(t) => t,
            Err(source) => {
                let completed = state.len();
                warn!("evaluation failed after {completed} observations: {source}");
                return Err(Error::Interrupted {
                    completed,
                    resume: config.state_path.clone(),
                    source: Box::new(source),
                });
            }
        };
        if let Some(path) = &config.log_path {
            persist::append_log(path, &trials)?;
        }
        state.trials.extend(trials);
        if let Some(path) = &config.state_path {
            persist::write_snapshot(path, &header, &state)?;
        }
        debug!("{} / {} evaluations", state.len(), config.n_total);
    }
    state.refresh_trajectory();
    Ok(state)
}

fn evaluate_batch(
    config: &RunConfig,
    backend: &dyn Backend,
    batch: &[Configuration],
    offset: usize,
    iteration: usize,
) -> Result<Vec<Trial>> {
    let eval = |i: usize, c: &Configuration| -> Result<Trial> {
        let seed = derive_seed(config.master_seed, Stream::Evaluation, (offset + i) as u64);
        let observation = evaluate(backend, &config.space, c, config.fidelity, seed)?;
        Ok(Trial { observation, iteration })
    };
    if batch.len() == 1 {
        return Ok(vec![eval(0, &batch[0])?]);
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .iter()
            .enumerate()
            .map(|(i, c)| s.spawn(move || eval(i, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    })
}

/// Fitted hyperparameters, reused between refits.
#[derive(Default)]
struct Surrogate {
    fitted_at: Option<usize>,
    scores: Vec<GpModel>,
    costs: Vec<GpModel>,
}

impl Surrogate {
    /// Ensembles for batch `b`, conditioned on `obs`.
    fn ensembles(&mut self, config: &RunConfig, obs: &[Observation], b: usize) -> Result<(Vec<GpModel>, Vec<GpModel>)> {
        let anchor = b - b % config.refit_every;
        if self.fitted_at != Some(anchor) {
            // Data available when batch `anchor` was proposed.
            let n = (config.n_init + anchor * config.batch_q).min(obs.len());
            let seed = derive_seed(config.master_seed, Stream::Surrogate, anchor as u64);
            let (x, y, c) = training_data(&config.space, &obs[..n])?;
            self.scores = gp::fit(&x, &y, &config.fit, seed)?;
            self.costs = if config.model_cost {
                gp::fit(&x, &c, &config.fit, seed ^ 1)?
            } else {
                Vec::new()
            };
            self.fitted_at = Some(anchor);
        }
        let (x, y, c) = training_data(&config.space, obs)?;
        let scores = condition_all(&self.scores, &x, &y)?;
        let costs = condition_all(&self.costs, &x, &c)?;
        Ok((scores, costs))
    }
}

/// Encoded points, scores and costs.
type TrainingData = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

fn training_data(space: &SearchSpaceSpec, obs: &[Observation]) -> Result<TrainingData> {
    let mut x = Vec::with_capacity(obs.len());
    for o in obs {
        x.push(space.encode(&o.config)?.coords);
    }
    Ok((
        x,
        obs.iter().map(|o| o.score).collect(),
        obs.iter().map(|o| o.cost).collect(),
    ))
}

fn condition_all(models: &[GpModel], x: &[Vec<f64>], y: &[f64]) -> Result<Vec<GpModel>> {
    models.iter().map(|m| m.condition(x, y)).collect()
}

fn suggest(
    config: &RunConfig,
    state: &RunState,
    surrogate: &mut Surrogate,
    b: usize,
    q: usize,
) -> Result<Vec<Configuration>> {
    let space = &config.space;
    let mut obs = state.observations();
    let mut exclude: HashSet<Configuration> = if config.dedup {
        obs.iter().map(|o| o.config.clone()).collect()
    } else {
        HashSet::new()
    };
    let mut chosen = Vec::with_capacity(q);
    if obs.len() < 2 {
        for j in 0..q {
            let c = fallback(config, &exclude, b, j);
            exclude.insert(c.clone());
            chosen.push(c);
        }
        return Ok(chosen);
    }
    let (mut scores, mut costs) = surrogate.ensembles(config, &obs, b)?;
    for j in 0..q {
        let spec = AcquisitionSpec {
            mc_samples: config.mc_samples,
            ref_point: config.ref_point,
            seed: derive_seed(config.master_seed, Stream::MonteCarlo, (b * config.batch_q + j) as u64),
        };
        let acq = if config.model_cost {
            Nehvi::with_cost_model(space, &spec, &scores, &costs, &obs)?
        } else {
            Nehvi::new(space, &spec, &scores, &obs)?
        };
        let starts: Vec<Configuration> = {
            let pts: Vec<ObjectiveVector> = obs.iter().map(|o| o.objectives()).collect();
            non_dominated_indices(&pts)
                .into_iter()
                .map(|i| obs[i].config.clone())
                .collect()
        };
        let pick = match local_search_ranked(space, |c| acq.value(c), &starts, config.max_steps, &exclude) {
            Ok(ranked) => ranked.into_iter().next().expect("non-empty ranking").0,
            Err(Error::Exhausted) => {
                let c = fallback(config, &exclude, b, j);
                info!("local search exhausted at batch {b}; falling back to {c}");
                c
            }
            Err(e) => return Err(e),
        };
        if config.dedup {
            exclude.insert(pick.clone());
        }
        if j + 1 < q {
            // Fantasize the posterior mean so the next pick accounts for this one.
            let point = space.encode(&pick)?.coords;
            let mut mean = 0.0;
            for m in &scores {
                mean += m.predict(&point)?.0;
            }
            mean /= scores.len() as f64;
            let cost = if config.model_cost {
                let mut c = 0.0;
                for m in &costs {
                    c += m.predict(&point)?.0;
                }
                c / costs.len() as f64
            } else {
                space.param_fraction(&pick)?
            };
            obs.push(Observation {
                config: pick.clone(),
                score: mean,
                cost,
                fidelity: config.fidelity,
                seed: 0,
                wall_time_s: 0.0,
            });
            let (x, y, c) = training_data(space, &obs)?;
            scores = condition_all(&scores, &x, &y)?;
            costs = condition_all(&costs, &x, &c)?;
        }
        chosen.push(pick);
    }
    Ok(chosen)
}

/// Uniform draw outside `exclude`; callers guarantee one exists.
fn fallback(config: &RunConfig, exclude: &HashSet<Configuration>, b: usize, j: usize) -> Configuration {
    let index = (b * config.batch_q + j) as u64;
    let mut rng = seeded(derive_seed(config.master_seed, Stream::Fallback, index));
    loop {
        let c = config.space.sample(&mut rng);
        if !exclude.contains(&c) {
            return c;
        }
    }
}

/// All layers active with the three module sizes stepped together through
/// the grid, smallest first.
pub fn scaling_family(space: &SearchSpaceSpec) -> Vec<Configuration> {
    space
        .size_grid
        .iter()
        .map(|&v| Configuration {
            layer_mask: vec![true; space.num_layers],
            d_sa: v,
            d_pa: v,
            l_pt: v,
        })
        .collect()
}

/// Evaluate the scaling family once each.
pub fn scaling_baseline(config: &RunConfig, backend: &dyn Backend) -> Result<RunState> {
    config.space.validate()?;
    check_fidelity(config.fidelity)?;
    let family = scaling_family(&config.space);
    let mut state = RunState::new(config.master_seed);
    state.trials = evaluate_batch(config, backend, &family, 0, 0)?;
    state.refresh_trajectory();
    Ok(state)
}
