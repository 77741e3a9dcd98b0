//! Dense reference implementation of the PEFT module math.
//!
//! Small-matrix versions of the serial adapter, parallel adapter, their
//! combination around a feed-forward block, and prefix extension of attention
//! keys and values. Used as an oracle for parameter counting.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::space::{Configuration, SearchSpaceSpec};

/// Down- and up-projection of a bottleneck adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckWeights {
    w_down: DMatrix<f64>,
    w_up: DMatrix<f64>,
}

impl BottleneckWeights {
    pub fn new(w_down: DMatrix<f64>, w_up: DMatrix<f64>) -> Result<Self> {
        let (hidden, bottleneck) = w_down.shape();
        if bottleneck == 0 || hidden == 0 {
            return Err(Error::InvalidConfiguration(
                "bottleneck weights need hidden and bottleneck sizes of at least 1".into(),
            ));
        }
        if w_up.shape() != (bottleneck, hidden) {
            return Err(Error::Dimension {
                expected: bottleneck * hidden,
                actual: w_up.nrows() * w_up.ncols(),
            });
        }
        Ok(Self { w_down, w_up })
    }

    pub fn zeros(hidden: usize, bottleneck: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(hidden, bottleneck), DMatrix::zeros(bottleneck, hidden))
    }

    /// Entries drawn from uniform(-0.5, 0.5).
    pub fn random<R: Rng + ?Sized>(hidden: usize, bottleneck: usize, rng: &mut R) -> Result<Self> {
        Self::new(
            uniform_matrix(hidden, bottleneck, rng),
            uniform_matrix(bottleneck, hidden, rng),
        )
    }

    pub fn hidden(&self) -> usize {
        self.w_down.nrows()
    }

    pub fn bottleneck(&self) -> usize {
        self.w_down.ncols()
    }

    pub fn w_down(&self) -> &DMatrix<f64> {
        &self.w_down
    }

    pub fn w_up(&self) -> &DMatrix<f64> {
        &self.w_up
    }

    pub fn scale_up(&self, factor: f64) -> Self {
        Self {
            w_down: self.w_down.clone(),
            w_up: &self.w_up * factor,
        }
    }

    pub fn num_weights(&self) -> usize {
        self.w_down.len() + self.w_up.len()
    }
}

/// Learned key and value rows prepended to attention inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixWeights {
    p_k: DMatrix<f64>,
    p_v: DMatrix<f64>,
}

impl PrefixWeights {
    pub fn new(p_k: DMatrix<f64>, p_v: DMatrix<f64>) -> Result<Self> {
        if p_k.shape() != p_v.shape() {
            return Err(Error::Dimension {
                expected: p_k.len(),
                actual: p_v.len(),
            });
        }
        Ok(Self { p_k, p_v })
    }

    pub fn zeros(length: usize, hidden: usize) -> Self {
        Self {
            p_k: DMatrix::zeros(length, hidden),
            p_v: DMatrix::zeros(length, hidden),
        }
    }

    pub fn random<R: Rng + ?Sized>(length: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            p_k: uniform_matrix(length, hidden, rng),
            p_v: uniform_matrix(length, hidden, rng),
        }
    }

    pub fn len(&self) -> usize {
        self.p_k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.p_k.nrows() == 0
    }

    pub fn hidden(&self) -> usize {
        self.p_k.ncols()
    }

    pub fn num_weights(&self) -> usize {
        self.p_k.len() + self.p_v.len()
    }
}

pub fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let dist = Uniform::new(-0.5, 0.5).expect("valid range");
    DMatrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

fn bottleneck_forward(input: &DMatrix<f64>, w: &BottleneckWeights) -> Result<DMatrix<f64>> {
    if input.ncols() != w.hidden() {
        return Err(Error::Dimension {
            expected: w.hidden(),
            actual: input.ncols(),
        });
    }
    let inner = (input * &w.w_down).map(|v| v.max(0.0));
    Ok(inner * &w.w_up)
}

/// `relu(h W_down) W_up`, applied to the feed-forward output.
pub fn serial_forward(h: &DMatrix<f64>, w: &BottleneckWeights) -> Result<DMatrix<f64>> {
    bottleneck_forward(h, w)
}

/// `relu(x W_down) W_up`, applied to the feed-forward input.
pub fn parallel_forward(x: &DMatrix<f64>, w: &BottleneckWeights) -> Result<DMatrix<f64>> {
    bottleneck_forward(x, w)
}

/// Serial adapter on `ffn(x)` plus parallel adapter on `x`.
pub fn sapa_forward<F>(
    x: &DMatrix<f64>,
    ffn: F,
    w_sa: &BottleneckWeights,
    w_pa: &BottleneckWeights,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let h = ffn(x);
    if h.shape() != x.shape() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: h.len(),
        });
    }
    Ok(serial_forward(&h, w_sa)? + parallel_forward(x, w_pa)?)
}

/// Prepend the prefix rows to keys and values.
pub fn prefix_extend(
    k: &DMatrix<f64>,
    v: &DMatrix<f64>,
    prefix: &PrefixWeights,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let hidden = prefix.hidden();
    for m in [k, v] {
        if m.ncols() != hidden {
            return Err(Error::Dimension {
                expected: hidden,
                actual: m.ncols(),
            });
        }
    }
    if k.nrows() != v.nrows() {
        return Err(Error::Dimension {
            expected: k.nrows(),
            actual: v.nrows(),
        });
    }
    let stack = |p: &DMatrix<f64>, m: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(p.nrows() + m.nrows(), hidden);
        out.rows_mut(0, p.nrows()).copy_from(p);
        out.rows_mut(p.nrows(), m.nrows()).copy_from(m);
        out
    };
    Ok((stack(&prefix.p_k, k), stack(&prefix.p_v, v)))
}

/// The PEFT block of one active layer.
#[derive(Debug, Clone)]
pub struct PeftLayer {
    pub serial: Option<BottleneckWeights>,
    pub parallel: Option<BottleneckWeights>,
    pub prefix: PrefixWeights,
}

impl PeftLayer {
    pub fn zeros(hidden: usize, d_sa: usize, d_pa: usize, l_pt: usize) -> Result<Self> {
        let serial = (d_sa > 0).then(|| BottleneckWeights::zeros(hidden, d_sa)).transpose()?;
        let parallel = (d_pa > 0).then(|| BottleneckWeights::zeros(hidden, d_pa)).transpose()?;
        Ok(Self {
            serial,
            parallel,
            prefix: PrefixWeights::zeros(l_pt, hidden),
        })
    }

    pub fn num_weights(&self) -> usize {
        self.serial.as_ref().map_or(0, BottleneckWeights::num_weights)
            + self.parallel.as_ref().map_or(0, BottleneckWeights::num_weights)
            + self.prefix.num_weights()
    }
}

/// Materialize every active layer's modules and count their scalar entries.
pub fn count_weights(spec: &SearchSpaceSpec, config: &Configuration) -> Result<u64> {
    spec.check(config)?;
    let hidden = spec.hidden_dim as usize;
    let mut total = 0u64;
    for _ in 0..config.active_layers() {
        let layer = PeftLayer::zeros(hidden, config.d_sa as usize, config.d_pa as usize, config.l_pt as usize)?;
        total += layer.num_weights() as u64;
    }
    Ok(total)
}
