//! Noisy expected hypervolume improvement and its discrete optimizer.
//!
//! For every ensemble member and Monte Carlo sample, scores are drawn jointly
//! at all observed configurations and at the candidate. The observed draws
//! (paired with their costs) form a sampled Pareto front; the candidate's
//! hypervolume improvement over that front is averaged over all samples.
//!
//! Standard normals are keyed by the training point's encoding rather than
//! its position, and the symmetric square root of the posterior covariance
//! is used, so the estimate does not depend on observation order. Candidate
//! draws reuse one normal vector per member (common random numbers), which
//! keeps comparisons between candidates low-variance during local search.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gp::{psd_sqrt, GpModel};
use crate::objectives::Observation;
use crate::pareto::{hypervolume_improvement, nadir, non_dominated_indices, ObjectiveVector};
use crate::rng;
use crate::space::{Configuration, SearchSpaceSpec};

const CANDIDATE_KEY: u64 = 0xC0FF_EE00_D15C_0DE5;

/// Default local-search trajectory cap.
pub const DEFAULT_MAX_STEPS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSpec {
    pub mc_samples: usize,
    /// Defaults to the nadir of the observations.
    pub ref_point: Option<ObjectiveVector>,
    pub seed: u64,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        Self {
            mc_samples: 128,
            ref_point: None,
            seed: 0,
        }
    }
}

/// Joint posterior draws of one output at the observed points, plus what is
/// needed to extend them to a new point.
struct OutputDraws {
    model: GpModel,
    /// Standardized draws, `mc_samples x n`.
    train: DMatrix<f64>,
    /// Standard normals used for the training draws, `mc_samples x n`.
    z_t: DMatrix<f64>,
    /// Pseudo-inverse of the symmetric square root of the training covariance.
    sqrt_pinv: DMatrix<f64>,
    z_c: DVector<f64>,
}

impl OutputDraws {
    fn new(model: &GpModel, points: &[Vec<f64>], values: &[f64], mc_samples: usize, seed: u64) -> Result<Self> {
        let model = model.condition(points, values)?;
        let (mean, cov) = model.joint_standardized(points);
        let (sqrt, sqrt_pinv) = psd_sqrt(&cov)?;
        let n = points.len();
        let mut z_t = DMatrix::zeros(mc_samples, n);
        for (j, p) in points.iter().enumerate() {
            let mut r = rng::seeded(rng::mix(&[seed, point_key(p)]));
            for s in 0..mc_samples {
                z_t[(s, j)] = r.sample(StandardNormal);
            }
        }
        let mut r = rng::seeded(rng::mix(&[seed, CANDIDATE_KEY]));
        let z_c = DVector::from_fn(mc_samples, |_, _| r.sample(StandardNormal));
        let mut train: DMatrix<f64> = &z_t * sqrt;
        for mut row in train.row_iter_mut() {
            row += mean.transpose();
        }
        Ok(Self {
            model,
            train,
            z_t,
            sqrt_pinv,
            z_c,
        })
    }

    /// Candidate draws on the original scale, one per sample.
    fn candidate(&self, point: &[f64]) -> DVector<f64> {
        let m = &self.model;
        let k = m.kernel_vector(point);
        let beta = m.solve(&k);
        let mean = k.dot(m.alpha());
        let var = (m.kernel(point, point) - k.dot(&beta)).max(0.0);
        let cross = beta * m.noise_eff();
        let b = &self.sqrt_pinv * cross;
        let resid = (var - b.dot(&b)).max(0.0).sqrt();
        let offsets = &self.z_t * b;
        DVector::from_fn(self.z_c.len(), |s, _| {
            m.y_mean() + m.y_sd() * (mean + offsets[s] + resid * self.z_c[s])
        })
    }

    fn train_scaled(&self, sample: usize, j: usize) -> f64 {
        self.model.y_mean() + self.model.y_sd() * self.train[(sample, j)]
    }
}

fn point_key(p: &[f64]) -> u64 {
    let words: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
    rng::mix(&words)
}

struct Member {
    score: OutputDraws,
    cost: Option<OutputDraws>,
    /// Sampled Pareto fronts, one per MC sample, sorted by cost.
    fronts: Vec<Vec<ObjectiveVector>>,
}

/// NEHVI over a fixed ensemble and observation set.
pub struct Nehvi<'a> {
    space: &'a SearchSpaceSpec,
    members: Vec<Member>,
    reference: ObjectiveVector,
    mc_samples: usize,
}

impl<'a> Nehvi<'a> {
    /// Scores are modelled by `ensemble`; costs are exact parameter fractions.
    pub fn new(
        space: &'a SearchSpaceSpec,
        spec: &AcquisitionSpec,
        ensemble: &[GpModel],
        observations: &[Observation],
    ) -> Result<Self> {
        Self::build(space, spec, ensemble, None, observations)
    }

    /// Both objectives modelled: `cost_ensemble[i]` pairs with `ensemble[i]`.
    pub fn with_cost_model(
        space: &'a SearchSpaceSpec,
        spec: &AcquisitionSpec,
        ensemble: &[GpModel],
        cost_ensemble: &[GpModel],
        observations: &[Observation],
    ) -> Result<Self> {
        if cost_ensemble.len() != ensemble.len() {
            return Err(Error::Dimension {
                expected: ensemble.len(),
                actual: cost_ensemble.len(),
            });
        }
        Self::build(space, spec, ensemble, Some(cost_ensemble), observations)
    }

    fn build(
        space: &'a SearchSpaceSpec,
        spec: &AcquisitionSpec,
        ensemble: &[GpModel],
        cost_ensemble: Option<&[GpModel]>,
        observations: &[Observation],
    ) -> Result<Self> {
        if ensemble.is_empty() {
            return Err(Error::InvalidRun("acquisition needs a fitted ensemble".into()));
        }
        if spec.mc_samples == 0 {
            return Err(Error::InvalidRun("mc_samples must be at least 1".into()));
        }
        if observations.is_empty() {
            return Err(Error::InvalidRun("acquisition needs observations".into()));
        }
        let points = observations
            .iter()
            .map(|o| space.encode(&o.config).map(|p| p.coords))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<f64> = observations.iter().map(|o| o.score).collect();
        let costs: Vec<f64> = observations.iter().map(|o| o.cost).collect();
        let objectives: Vec<ObjectiveVector> = observations.iter().map(Observation::objectives).collect();
        let reference = match spec.ref_point {
            Some(r) => r,
            None => nadir(&objectives)?,
        };
        let k = spec.mc_samples;
        let mut members = Vec::with_capacity(ensemble.len());
        for (m, model) in ensemble.iter().enumerate() {
            let score = OutputDraws::new(model, &points, &scores, k, rng::mix(&[spec.seed, m as u64, 0]))?;
            let cost = match cost_ensemble {
                Some(ce) => Some(OutputDraws::new(
                    &ce[m],
                    &points,
                    &costs,
                    k,
                    rng::mix(&[spec.seed, m as u64, 1]),
                )?),
                None => None,
            };
            let fronts = (0..k)
                .map(|s| {
                    let sampled: Vec<ObjectiveVector> = (0..points.len())
                        .map(|j| ObjectiveVector {
                            score: score.train_scaled(s, j),
                            cost: cost.as_ref().map_or(costs[j], |c| c.train_scaled(s, j)),
                        })
                        .collect();
                    non_dominated_indices(&sampled)
                        .into_iter()
                        .map(|i| sampled[i])
                        .collect()
                })
                .collect();
            members.push(Member { score, cost, fronts });
        }
        Ok(Self {
            space,
            members,
            reference,
            mc_samples: k,
        })
    }

    pub fn reference(&self) -> ObjectiveVector {
        self.reference
    }

    /// All per-sample improvements, member-major.
    pub fn improvements(&self, candidate: &Configuration) -> Result<Vec<f64>> {
        let point = self.space.encode(candidate)?.coords;
        let exact_cost = self.space.param_fraction(candidate)?;
        let mut out = Vec::with_capacity(self.members.len() * self.mc_samples);
        for member in &self.members {
            let scores = member.score.candidate(&point);
            let costs = member.cost.as_ref().map(|c| c.candidate(&point));
            for (s, front) in member.fronts.iter().enumerate() {
                let p = ObjectiveVector {
                    score: scores[s],
                    cost: costs.as_ref().map_or(exact_cost, |c| c[s]),
                };
                out.push(hypervolume_improvement(front, &p, &self.reference));
            }
        }
        Ok(out)
    }

    pub fn value(&self, candidate: &Configuration) -> Result<f64> {
        Ok(self.value_with_stderr(candidate)?.0)
    }

    /// Monte Carlo mean and its standard error.
    pub fn value_with_stderr(&self, candidate: &Configuration) -> Result<(f64, f64)> {
        let hvi = self.improvements(candidate)?;
        let n = hvi.len() as f64;
        let mean = hvi.iter().sum::<f64>() / n;
        let var = if hvi.len() > 1 {
            hvi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok((mean, (var / n).sqrt()))
    }
}

/// One-shot NEHVI of a single candidate.
pub fn nehvi(
    space: &SearchSpaceSpec,
    spec: &AcquisitionSpec,
    ensemble: &[GpModel],
    observations: &[Observation],
    candidate: &Configuration,
) -> Result<f64> {
    Nehvi::new(space, spec, ensemble, observations)?.value(candidate)
}

/// Candidate ordering: higher acquisition, then lower parameter count, then
/// lexicographically smaller encoding.
fn better(a: &(Configuration, f64, u64), b: &(Configuration, f64, u64)) -> bool {
    match a.1.total_cmp(&b.1) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => (a.2, &a.0) < (b.2, &b.0),
    }
}

/// Hill-climb from every start and rank every visited configuration not in
/// `exclude`, best first.
///
/// A move is taken when the best neighbor beats the current point under the
/// candidate ordering, so plateaus are crossed towards cheaper, smaller
/// configurations and every trajectory terminates.
pub fn local_search_ranked<F>(
    space: &SearchSpaceSpec,
    mut acq: F,
    starts: &[Configuration],
    max_steps: usize,
    exclude: &HashSet<Configuration>,
) -> Result<Vec<(Configuration, f64)>>
where
    F: FnMut(&Configuration) -> Result<f64>,
{
    if starts.is_empty() {
        return Err(Error::InvalidRun("local search needs at least one start".into()));
    }
    let mut cache: HashMap<Configuration, (f64, u64)> = HashMap::new();
    let mut score =
        |c: &Configuration, cache: &mut HashMap<Configuration, (f64, u64)>| -> Result<(Configuration, f64, u64)> {
            if let Some(&(v, cost)) = cache.get(c) {
                return Ok((c.clone(), v, cost));
            }
            let mut v = acq(c)?;
            if v.is_nan() {
                v = f64::NEG_INFINITY;
            }
            let cost = space.param_count(c)?;
            cache.insert(c.clone(), (v, cost));
            Ok((c.clone(), v, cost))
        };
    for start in starts {
        space.check(start)?;
        let mut current = score(start, &mut cache)?;
        for _ in 0..max_steps {
            let mut best: Option<(Configuration, f64, u64)> = None;
            for n in space.neighbors(&current.0) {
                let cand = score(&n, &mut cache)?;
                if best.as_ref().is_none_or(|b| better(&cand, b)) {
                    best = Some(cand);
                }
            }
            match best {
                Some(b) if better(&b, &current) => current = b,
                _ => break,
            }
        }
    }
    let mut ranked: Vec<(Configuration, f64, u64)> = cache
        .into_iter()
        .filter(|(c, _)| !exclude.contains(c))
        .map(|(c, (v, cost))| (c, v, cost))
        .collect();
    if ranked.is_empty() {
        return Err(Error::Exhausted);
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked.into_iter().map(|(c, v, _)| (c, v)).collect())
}

/// Best configuration reachable by hill climbing, excluding `exclude`.
pub fn local_search<F>(
    space: &SearchSpaceSpec,
    acq: F,
    starts: &[Configuration],
    max_steps: usize,
    exclude: &HashSet<Configuration>,
) -> Result<Configuration>
where
    F: FnMut(&Configuration) -> Result<f64>,
{
    let ranked = local_search_ranked(space, acq, starts, max_steps, exclude)?;
    Ok(ranked.into_iter().next().expect("non-empty ranking").0)
}
