//! The PEFT configuration search space.
//!
//! A configuration activates the PEFT block (serial adapter, parallel adapter
//! and prefix) in a subset of layers and picks one size for each of the three
//! modules from a shared, roughly logarithmic grid. A size of zero removes the
//! module from every active layer.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Pretrained parameter total of a 12-layer, 768-wide uncased encoder.
pub const BERT_BASE_PARAMS: u64 = 109_482_240;
/// Pretrained parameter total of a 24-layer, 1024-wide uncased encoder.
pub const BERT_LARGE_PARAMS: u64 = 335_141_888;

const DECODE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpaceSpec {
    pub num_layers: usize,
    pub hidden_dim: u64,
    pub size_grid: Vec<u64>,
    pub base_param_count: u64,
}

impl SearchSpaceSpec {
    pub fn new(num_layers: usize, hidden_dim: u64, size_grid: Vec<u64>, base_param_count: u64) -> Result<Self> {
        let spec = Self {
            num_layers,
            hidden_dim,
            size_grid,
            base_param_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 12 layers, hidden size 768, halving grid.
    pub fn bert_base() -> Self {
        Self {
            num_layers: 12,
            hidden_dim: 768,
            size_grid: halving_grid(768),
            base_param_count: BERT_BASE_PARAMS,
        }
    }

    /// 24 layers, hidden size 1024, halving grid.
    pub fn bert_large() -> Self {
        Self {
            num_layers: 24,
            hidden_dim: 1024,
            size_grid: halving_grid(1024),
            base_param_count: BERT_LARGE_PARAMS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::InvalidSpace("num_layers must be at least 1".into()));
        }
        if self.num_layers > 64 {
            return Err(Error::InvalidSpace(format!(
                "num_layers {} exceeds the supported maximum of 64",
                self.num_layers
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidSpace("hidden_dim must be positive".into()));
        }
        if self.base_param_count == 0 {
            return Err(Error::InvalidSpace("base_param_count must be positive".into()));
        }
        let grid = &self.size_grid;
        if grid.len() < 2 {
            return Err(Error::InvalidSpace("size_grid needs at least two levels".into()));
        }
        if grid[0] != 0 {
            return Err(Error::InvalidSpace("size_grid must start at 0".into()));
        }
        if *grid.last().unwrap() != self.hidden_dim {
            return Err(Error::InvalidSpace(format!(
                "size_grid must end at hidden_dim {}",
                self.hidden_dim
            )));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpace("size_grid must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.size_grid.len()
    }

    /// Dimension of the encoded representation.
    pub fn encoded_dim(&self) -> usize {
        self.num_layers + 3
    }

    /// Number of distinct configurations: `2^layers * |grid|^3`.
    pub fn cardinality(&self) -> u128 {
        let levels = self.levels() as u128;
        (1u128 << self.num_layers) * levels * levels * levels
    }

    pub fn grid_index(&self, size: u64) -> Option<usize> {
        self.size_grid.binary_search(&size).ok()
    }

    pub fn check(&self, config: &Configuration) -> Result<()> {
        if config.layer_mask.len() != self.num_layers {
            return Err(Error::InvalidConfiguration(format!(
                "layer mask has {} entries, space has {} layers",
                config.layer_mask.len(),
                self.num_layers
            )));
        }
        for (name, size) in config.named_sizes() {
            if self.grid_index(size).is_none() {
                return Err(Error::InvalidConfiguration(format!(
                    "{name}={size} is not on the size grid {:?}",
                    self.size_grid
                )));
            }
        }
        Ok(())
    }

    /// Added trainable weights: `active_layers * 2 * hidden * (d_sa + d_pa + l_pt)`.
    pub fn param_count(&self, config: &Configuration) -> Result<u64> {
        self.check(config)?;
        let per_layer = 2 * self.hidden_dim * (config.d_sa + config.d_pa + config.l_pt);
        Ok(config.active_layers() as u64 * per_layer)
    }

    pub fn param_fraction(&self, config: &Configuration) -> Result<f64> {
        Ok(self.param_count(config)? as f64 / self.base_param_count as f64)
    }

    pub fn empty_config(&self) -> Configuration {
        Configuration {
            layer_mask: vec![false; self.num_layers],
            d_sa: 0,
            d_pa: 0,
            l_pt: 0,
        }
    }

    /// Every layer active, every module at `hidden_dim`.
    pub fn full_config(&self) -> Configuration {
        Configuration {
            layer_mask: vec![true; self.num_layers],
            d_sa: self.hidden_dim,
            d_pa: self.hidden_dim,
            l_pt: self.hidden_dim,
        }
    }

    pub fn encode(&self, config: &Configuration) -> Result<EncodedPoint> {
        self.check(config)?;
        let top = (self.levels() - 1) as f64;
        let mut coords: Vec<f64> = config.layer_mask.iter().map(|&on| if on { 1.0 } else { 0.0 }).collect();
        for (_, size) in config.named_sizes() {
            coords.push(self.grid_index(size).unwrap() as f64 / top);
        }
        Ok(EncodedPoint { coords })
    }

    pub fn decode(&self, point: &EncodedPoint) -> Result<Configuration> {
        let coords = &point.coords;
        if coords.len() != self.encoded_dim() {
            return Err(Error::Dimension {
                expected: self.encoded_dim(),
                actual: coords.len(),
            });
        }
        let mut layer_mask = Vec::with_capacity(self.num_layers);
        for (i, &c) in coords[..self.num_layers].iter().enumerate() {
            if c.abs() <= DECODE_TOLERANCE {
                layer_mask.push(false);
            } else if (c - 1.0).abs() <= DECODE_TOLERANCE {
                layer_mask.push(true);
            } else {
                return Err(Error::Encoding(format!("layer coordinate {i} = {c} is not 0 or 1")));
            }
        }
        let top = (self.levels() - 1) as f64;
        let mut sizes = [0u64; 3];
        for (k, &c) in coords[self.num_layers..].iter().enumerate() {
            let scaled = c * top;
            let idx = scaled.round();
            if (scaled - idx).abs() > DECODE_TOLERANCE * top || idx < 0.0 || idx > top {
                return Err(Error::Encoding(format!("size coordinate {k} = {c} is off the grid")));
            }
            sizes[k] = self.size_grid[idx as usize];
        }
        Ok(Configuration {
            layer_mask,
            d_sa: sizes[0],
            d_pa: sizes[1],
            l_pt: sizes[2],
        })
    }

    /// Mixed-radix rank of a configuration in `0..cardinality`.
    ///
    /// Layer bits form the low digits (bit `i` for layer `i`), followed by the
    /// grid indices of `d_sa`, `d_pa` and `l_pt`.
    pub fn index_of(&self, config: &Configuration) -> Result<u128> {
        self.check(config)?;
        let levels = self.levels() as u128;
        let mut bits: u128 = 0;
        for (i, &on) in config.layer_mask.iter().enumerate() {
            if on {
                bits |= 1 << i;
            }
        }
        let sa = self.grid_index(config.d_sa).unwrap() as u128;
        let pa = self.grid_index(config.d_pa).unwrap() as u128;
        let pt = self.grid_index(config.l_pt).unwrap() as u128;
        let sizes = (pt * levels + pa) * levels + sa;
        Ok(bits + (sizes << self.num_layers))
    }

    pub fn config_at(&self, index: u128) -> Result<Configuration> {
        if index >= self.cardinality() {
            return Err(Error::InvalidConfiguration(format!(
                "index {index} out of range for cardinality {}",
                self.cardinality()
            )));
        }
        let levels = self.levels() as u128;
        let bits = index & ((1u128 << self.num_layers) - 1);
        let mut rest = index >> self.num_layers;
        let sa = (rest % levels) as usize;
        rest /= levels;
        let pa = (rest % levels) as usize;
        rest /= levels;
        let pt = rest as usize;
        Ok(Configuration {
            layer_mask: (0..self.num_layers).map(|i| bits >> i & 1 == 1).collect(),
            d_sa: self.size_grid[sa],
            d_pa: self.size_grid[pa],
            l_pt: self.size_grid[pt],
        })
    }

    /// All configurations one layer flip or one grid step away.
    ///
    /// Order: layer flips by layer index, then `d_sa`, `d_pa`, `l_pt`, each
    /// one step down before one step up.
    pub fn neighbors(&self, config: &Configuration) -> Vec<Configuration> {
        let mut out = Vec::with_capacity(self.num_layers + 6);
        for i in 0..self.num_layers {
            let mut n = config.clone();
            n.layer_mask[i] = !n.layer_mask[i];
            out.push(n);
        }
        for slot in 0..3 {
            let current = config.size(slot);
            let Some(idx) = self.grid_index(current) else {
                continue;
            };
            if idx > 0 {
                let mut n = config.clone();
                n.set_size(slot, self.size_grid[idx - 1]);
                out.push(n);
            }
            if idx + 1 < self.levels() {
                let mut n = config.clone();
                n.set_size(slot, self.size_grid[idx + 1]);
                out.push(n);
            }
        }
        out
    }

    /// Draw one configuration with every dimension independent and uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let layer_mask = (0..self.num_layers).map(|_| rng.random_bool(0.5)).collect();
        let levels = self.levels();
        let mut pick = || self.size_grid[rng.random_range(0..levels)];
        let d_sa = pick();
        let d_pa = pick();
        let l_pt = pick();
        Configuration {
            layer_mask,
            d_sa,
            d_pa,
            l_pt,
        }
    }

    pub fn random_sample(&self, seed: u64, n: usize) -> Vec<Configuration> {
        let mut rng = rng::seeded(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }

    pub fn resolve(&self, text: &ConfigText) -> Result<Configuration> {
        let mut layer_mask = vec![false; self.num_layers];
        for &layer in &text.layers {
            if layer == 0 || layer > self.num_layers {
                return Err(Error::InvalidConfiguration(format!(
                    "layer {layer} outside 1..={}",
                    self.num_layers
                )));
            }
            if layer_mask[layer - 1] {
                return Err(Error::InvalidConfiguration(format!("layer {layer} listed twice")));
            }
            layer_mask[layer - 1] = true;
        }
        let config = Configuration {
            layer_mask,
            d_sa: text.d_sa,
            d_pa: text.d_pa,
            l_pt: text.l_pt,
        };
        self.check(&config)?;
        Ok(config)
    }
}

impl Default for SearchSpaceSpec {
    fn default() -> Self {
        Self::bert_base()
    }
}

/// `{0, 1, h/256, h/128, ..., h/2, h}`, deduplicated.
pub fn halving_grid(hidden_dim: u64) -> Vec<u64> {
    let mut grid = vec![0, 1];
    for shift in (0..=8).rev() {
        let v = hidden_dim >> shift;
        if v > 1 {
            grid.push(v);
        }
    }
    grid.dedup();
    grid
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    pub layer_mask: Vec<bool>,
    pub d_sa: u64,
    pub d_pa: u64,
    pub l_pt: u64,
}

impl Configuration {
    pub fn active_layers(&self) -> usize {
        self.layer_mask.iter().filter(|&&b| b).count()
    }

    /// 1-indexed active layers, ascending.
    pub fn layers(&self) -> Vec<usize> {
        self.layer_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &on)| on.then_some(i + 1))
            .collect()
    }

    pub fn size(&self, slot: usize) -> u64 {
        match slot {
            0 => self.d_sa,
            1 => self.d_pa,
            2 => self.l_pt,
            _ => panic!("size slot {slot} out of range"),
        }
    }

    fn set_size(&mut self, slot: usize, value: u64) {
        match slot {
            0 => self.d_sa = value,
            1 => self.d_pa = value,
            2 => self.l_pt = value,
            _ => panic!("size slot {slot} out of range"),
        }
    }

    fn named_sizes(&self) -> [(&'static str, u64); 3] {
        [("d_sa", self.d_sa), ("d_pa", self.d_pa), ("l_pt", self.l_pt)]
    }

    pub fn to_text(&self) -> ConfigText {
        ConfigText {
            layers: self.layers(),
            d_sa: self.d_sa,
            d_pa: self.d_pa,
            l_pt: self.l_pt,
        }
    }

    /// Canonical single-line text form, e.g.
    /// `{"layers":[3,4,8,9,10],"d_sa":12,"d_pa":96,"l_pt":1}`.
    pub fn canonical(&self) -> String {
        self.to_text().canonical()
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// External text form of a configuration with 1-indexed layers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigText {
    pub layers: Vec<usize>,
    pub d_sa: u64,
    pub d_pa: u64,
    pub l_pt: u64,
}

impl ConfigText {
    /// Sorted, deduplicated layers serialized with fixed key order.
    pub fn canonical(&self) -> String {
        let mut layers = self.layers.clone();
        layers.sort_unstable();
        layers.dedup();
        let normalized = ConfigText { layers, ..self.clone() };
        serde_json::to_string(&normalized).expect("config text always serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPoint {
    pub coords: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sparse_config() -> Configuration {
        let spec = SearchSpaceSpec::bert_base();
        spec.resolve(&ConfigText {
            layers: vec![3, 4, 8, 9, 10],
            d_sa: 12,
            d_pa: 96,
            l_pt: 1,
        })
        .unwrap()
    }

    #[test]
    fn default_grid() {
        assert_eq!(halving_grid(768), vec![0, 1, 3, 6, 12, 24, 48, 96, 192, 384, 768]);
        assert_eq!(halving_grid(1024).len(), 11);
        SearchSpaceSpec::bert_base().validate().unwrap();
        SearchSpaceSpec::bert_large().validate().unwrap();
    }

    #[test]
    fn cardinality_examples() {
        assert_eq!(SearchSpaceSpec::bert_base().cardinality(), 5_451_776);
        let one = SearchSpaceSpec::new(1, 4, vec![0, 4], 100).unwrap();
        assert_eq!(one.cardinality(), 16);
        let deep = SearchSpaceSpec {
            num_layers: 24,
            ..SearchSpaceSpec::bert_base()
        };
        assert_eq!(deep.cardinality(), 22_330_474_496);
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(SearchSpaceSpec::new(0, 768, halving_grid(768), 1).is_err());
        assert!(SearchSpaceSpec::new(12, 768, vec![1, 768], 1).is_err());
        assert!(SearchSpaceSpec::new(12, 768, vec![0, 512], 1).is_err());
        assert!(SearchSpaceSpec::new(12, 768, vec![0, 6, 3, 768], 1).is_err());
        assert!(SearchSpaceSpec::new(12, 768, vec![0, 768], 0).is_err());
    }

    #[test]
    fn param_count_examples() {
        let spec = SearchSpaceSpec::bert_base();
        assert_eq!(spec.param_count(&sparse_config()).unwrap(), 837_120);
        assert_eq!(spec.param_count(&spec.empty_config()).unwrap(), 0);
        let mut one = spec.empty_config();
        one.layer_mask[0] = true;
        one.d_sa = 768;
        assert_eq!(spec.param_count(&one).unwrap(), 1_179_648);

        let mut bad = spec.empty_config();
        bad.d_pa = 16;
        assert!(matches!(spec.param_count(&bad), Err(Error::InvalidConfiguration(_))));
    }

    #[test]
    fn param_fraction_examples() {
        let spec = SearchSpaceSpec::bert_base();
        let frac = spec.param_fraction(&sparse_config()).unwrap();
        assert!((frac - 0.007646).abs() < 5e-7);
        assert_eq!(format!("{:.2}%", frac * 100.0), "0.76%");
        assert_eq!(spec.param_fraction(&spec.empty_config()).unwrap(), 0.0);
        let full = spec.param_fraction(&spec.full_config()).unwrap();
        assert!((full - 12.0 * 2.0 * 768.0 * 2304.0 / 109_482_240.0).abs() < 1e-15);
        assert!((full - 0.3879).abs() < 1e-4);
    }

    #[test]
    fn encode_examples() {
        let spec = SearchSpaceSpec::bert_base();
        let empty = spec.encode(&spec.empty_config()).unwrap();
        assert!(empty.coords.iter().all(|&c| c == 0.0));
        let full = spec.encode(&spec.full_config()).unwrap();
        assert!(full.coords.iter().all(|&c| c == 1.0));

        let p = spec.encode(&sparse_config()).unwrap();
        let bits: Vec<usize> = (0..12).filter(|&i| p.coords[i] == 1.0).map(|i| i + 1).collect();
        assert_eq!(bits, vec![3, 4, 8, 9, 10]);
        assert_eq!(&p.coords[12..], &[0.4, 0.7, 0.1]);
        assert_eq!(spec.decode(&p).unwrap(), sparse_config());
    }

    #[test]
    fn decode_rejects_off_grid() {
        let spec = SearchSpaceSpec::bert_base();
        let mut p = spec.encode(&sparse_config()).unwrap();
        p.coords[12] = 0.45;
        assert!(matches!(spec.decode(&p), Err(Error::Encoding(_))));
        let mut p = spec.encode(&sparse_config()).unwrap();
        p.coords[0] = 0.5;
        assert!(matches!(spec.decode(&p), Err(Error::Encoding(_))));
        let short = EncodedPoint { coords: vec![0.0; 3] };
        assert!(matches!(spec.decode(&short), Err(Error::Dimension { .. })));
        // tolerance
        let mut p = spec.encode(&sparse_config()).unwrap();
        p.coords[13] += 5e-7;
        assert_eq!(spec.decode(&p).unwrap(), sparse_config());
    }

    #[test]
    fn neighbor_counts() {
        let spec = SearchSpaceSpec::bert_base();
        assert_eq!(spec.neighbors(&sparse_config()).len(), 18);
        assert_eq!(spec.neighbors(&spec.empty_config()).len(), 15);
        assert_eq!(spec.neighbors(&spec.full_config()).len(), 15);
        let n = spec.neighbors(&sparse_config());
        assert!(!n.contains(&sparse_config()));
        let mut dedup = n.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), n.len());
    }

    #[test]
    fn sampling() {
        let spec = SearchSpaceSpec::bert_base();
        assert!(spec.random_sample(1, 0).is_empty());
        assert_eq!(spec.random_sample(42, 50), spec.random_sample(42, 50));
        let samples = spec.random_sample(7, 10_000);
        let mean = samples.iter().map(|c| c.active_layers() as f64).sum::<f64>() / 10_000.0;
        assert!((mean - 6.0).abs() < 0.2, "mean popcount {mean}");
        assert!(samples.iter().all(|c| spec.check(c).is_ok()));
    }

    #[test]
    fn index_roundtrip_corners() {
        let spec = SearchSpaceSpec::bert_base();
        assert_eq!(spec.index_of(&spec.empty_config()).unwrap(), 0);
        assert_eq!(spec.index_of(&spec.full_config()).unwrap(), spec.cardinality() - 1);
        let c = sparse_config();
        assert_eq!(spec.config_at(spec.index_of(&c).unwrap()).unwrap(), c);
        assert!(spec.config_at(spec.cardinality()).is_err());
    }

    #[test]
    fn text_form() {
        let c = sparse_config();
        assert_eq!(c.canonical(), r#"{"layers":[3,4,8,9,10],"d_sa":12,"d_pa":96,"l_pt":1}"#);
        let spec = SearchSpaceSpec::bert_base();
        let bad = ConfigText {
            layers: vec![0],
            d_sa: 0,
            d_pa: 0,
            l_pt: 0,
        };
        assert!(spec.resolve(&bad).is_err());
        let dup = ConfigText {
            layers: vec![2, 2],
            d_sa: 0,
            d_pa: 0,
            l_pt: 0,
        };
        assert!(spec.resolve(&dup).is_err());
    }
}
