use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_fidelity, Backend, Scored};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::space::{Configuration, SearchSpaceSpec};

/// Parameters of the synthetic score landscape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLandscapeSpec {
    pub landscape_seed: u64,
    pub noise_sd: f64,
    /// Fraction of layers whose weight is drawn near zero.
    pub sparse_fraction: f64,
    pub c_sa: f64,
    pub c_pa: f64,
    pub c_pt: f64,
}

impl Default for SyntheticLandscapeSpec {
    fn default() -> Self {
        Self {
            landscape_seed: 0,
            noise_sd: 0.2,
            sparse_fraction: 0.5,
            c_sa: 1.0,
            c_pa: 0.6,
            c_pt: 0.8,
        }
    }
}

impl SyntheticLandscapeSpec {
    pub fn with_seed(landscape_seed: u64) -> Self {
        Self {
            landscape_seed,
            ..Self::default()
        }
    }

    pub fn build(&self, space: &SearchSpaceSpec) -> Result<SyntheticLandscape> {
        if self.noise_sd.is_nan() || self.noise_sd < 0.0 || !(0.0..=1.0).contains(&self.sparse_fraction) {
            return Err(Error::InvalidRun(
                "noise_sd must be >= 0 and sparse_fraction within [0, 1]".into(),
            ));
        }
        let mut rng = rng::seeded(rng::derive_seed(self.landscape_seed, Stream::Landscape, 0));
        let n = space.num_layers;
        let n_sparse = (self.sparse_fraction * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut weights = vec![0.0; n];
        for (rank, &layer) in order.iter().enumerate() {
            weights[layer] = if rank < n_sparse {
                rng.random_range(0.005..0.02)
            } else {
                rng.random_range(0.5..1.5)
            };
        }
        Ok(SyntheticLandscape::from_weights(
            self.clone(),
            weights,
            space.hidden_dim,
        ))
    }
}

/// Saturating additive score over active layers and module sizes.
///
/// `s = sum_i mask_i * w_i * (c_sa g(d_sa) + c_pa g(d_pa) + c_pt g(l_pt))`
/// with `g(v) = log2(1 + v) / log2(1 + hidden)`, and
/// `score = 100 s / (1 + s) + eps`, where `eps` has standard deviation
/// `noise_sd * fidelity^(-1/4)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLandscape {
    spec: SyntheticLandscapeSpec,
    layer_weights: Vec<f64>,
    hidden_dim: u64,
}

impl SyntheticLandscape {
    pub fn from_weights(spec: SyntheticLandscapeSpec, layer_weights: Vec<f64>, hidden_dim: u64) -> Self {
        Self {
            spec,
            layer_weights,
            hidden_dim,
        }
    }

    pub fn spec(&self) -> &SyntheticLandscapeSpec {
        &self.spec
    }

    pub fn layer_weights(&self) -> &[f64] {
        &self.layer_weights
    }

    fn size_utility(&self, v: u64) -> f64 {
        (1.0 + v as f64).log2() / (1.0 + self.hidden_dim as f64).log2()
    }

    /// Score without noise.
    pub fn mean_score(&self, config: &Configuration) -> f64 {
        let module = self.spec.c_sa * self.size_utility(config.d_sa)
            + self.spec.c_pa * self.size_utility(config.d_pa)
            + self.spec.c_pt * self.size_utility(config.l_pt);
        let layer_sum: f64 = config
            .layer_mask
            .iter()
            .zip(&self.layer_weights)
            .filter(|(&on, _)| on)
            .fold(0.0, |acc, (_, w)| acc + w);
        let s = layer_sum * module;
        100.0 * s / (1.0 + s)
    }

    pub fn synthetic_score(
        &self,
        space: &SearchSpaceSpec,
        config: &Configuration,
        fidelity: f64,
        seed: u64,
    ) -> Result<f64> {
        check_fidelity(fidelity)?;
        if config.layer_mask.len() != self.layer_weights.len() {
            return Err(Error::Dimension {
                expected: self.layer_weights.len(),
                actual: config.layer_mask.len(),
            });
        }
        let mean = self.mean_score(config);
        if self.spec.noise_sd == 0.0 {
            return Ok(mean);
        }
        let key = space.index_of(config)?;
        let noise_seed = rng::mix(&[
            self.spec.landscape_seed,
            Stream::Noise as u64,
            seed,
            key as u64,
            (key >> 64) as u64,
        ]);
        let z: f64 = StandardNormal.sample(&mut rng::seeded(noise_seed));
        Ok(mean + z * self.spec.noise_sd * fidelity.powf(-0.25))
    }
}

impl Backend for SyntheticLandscape {
    fn score(&self, space: &SearchSpaceSpec, config: &Configuration, fidelity: f64, seed: u64) -> Result<Scored> {
        Ok(Scored {
            score: self.synthetic_score(space, config, fidelity, seed)?,
            cost: None,
        })
    }
}
