//! Gaussian-process surrogate with sparse axis-aligned subspace priors.
//!
//! The kernel is Matérn-5/2 with one inverse squared lengthscale `kappa_i`
//! per input dimension. A global shrinkage `tau ~ HalfCauchy(tau_scale)` and
//! `kappa_i | tau ~ HalfCauchy(tau)` push most dimensions towards
//! irrelevance. Hyperparameters are fitted by MAP (Adam in log space) from
//! several seeded starting points; the resulting models are used as an
//! equally weighted ensemble.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Minimum fitted noise variance (standardized units).
pub const NOISE_FLOOR: f64 = 1e-6;
/// Diagonal jitter tried in order when a factorization fails.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-6, 1e-4, 1e-2];

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub log_outputscale: f64,
    pub log_noise: f64,
    pub log_inv_sq_lengthscales: Vec<f64>,
    pub log_tau: f64,
}

impl KernelHyperparams {
    pub fn new(outputscale: f64, noise: f64, inv_sq_lengthscales: &[f64], tau: f64) -> Self {
        Self {
            log_outputscale: outputscale.ln(),
            log_noise: noise.ln(),
            log_inv_sq_lengthscales: inv_sq_lengthscales.iter().map(|k| k.ln()).collect(),
            log_tau: tau.ln(),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_inv_sq_lengthscales.len()
    }

    pub fn outputscale(&self) -> f64 {
        self.log_outputscale.exp()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn inv_sq_lengthscales(&self) -> Vec<f64> {
        self.log_inv_sq_lengthscales.iter().map(|v| v.exp()).collect()
    }

    /// Flat parameter vector: outputscale, noise, tau, then lengthscales.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.log_outputscale, self.log_noise, self.log_tau];
        v.extend_from_slice(&self.log_inv_sq_lengthscales);
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        Self {
            log_outputscale: v[0],
            log_noise: v[1],
            log_tau: v[2],
            log_inv_sq_lengthscales: v[3..].to_vec(),
        }
    }

    fn check_finite(&self) -> Result<()> {
        if self.to_vec().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numerical("non-finite hyperparameter".into()))
        }
    }
}

/// Matérn-5/2 correlation as a function of the squared scaled distance `u`,
/// and its derivative with respect to `u`.
#[inline]
pub fn matern52(u: f64) -> (f64, f64) {
    let r = u.max(0.0).sqrt();
    let s5r = SQRT5 * r;
    let e = (-s5r).exp();
    ((1.0 + s5r + 5.0 * u / 3.0) * e, -(5.0 / 6.0) * (1.0 + s5r) * e)
}

fn scaled_sq_dist(a: &[f64], b: &[f64], kappa: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(kappa)
        .map(|((x, y), k)| k * (x - y) * (x - y))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub restarts: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub tau_scale: f64,
    /// Hold the noise variance (standardized units) fixed instead of fitting it.
    pub fixed_noise: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            steps: 200,
            learning_rate: 0.1,
            tau_scale: 0.1,
            fixed_noise: None,
        }
    }
}

/// Training inputs with cached per-dimension squared differences.
struct Dataset {
    x: Vec<Vec<f64>>,
    /// Row-major over pairs `i < j`, `dim` entries each.
    sqdiff: Vec<f64>,
    dim: usize,
}

impl Dataset {
    fn new(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        for p in points {
            if p.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: p.len(),
                });
            }
        }
        let n = points.len();
        let mut sqdiff = Vec::with_capacity(n * n.saturating_sub(1) / 2 * dim);
        for i in 0..n {
            for j in (i + 1)..n {
                for (a, b) in points[i].iter().zip(&points[j]) {
                    sqdiff.push((a - b) * (a - b));
                }
            }
        }
        Ok(Self {
            x: points.to_vec(),
            sqdiff,
            dim,
        })
    }

    fn len(&self) -> usize {
        self.x.len()
    }
}

fn factorize(mut k: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let mut applied = 0.0;
    for &jitter in &JITTER_LADDER {
        for i in 0..n {
            k[(i, i)] += jitter - applied;
        }
        applied = jitter;
        if let Some(chol) = Cholesky::new(k.clone()) {
            return Ok((chol, jitter));
        }
    }
    Err(Error::Numerical(format!(
        "kernel matrix not positive definite after jitter {:e}",
        applied
    )))
}

struct Evaluation {
    value: f64,
    grad: Vec<f64>,
}

/// Log marginal likelihood (plus optional log prior) and its gradient with
/// respect to `KernelHyperparams::to_vec` coordinates.
fn evaluate(
    hyp: &KernelHyperparams,
    data: &Dataset,
    y: &DVector<f64>,
    prior_scale: Option<f64>,
    noise_is_fixed: bool,
) -> Result<Evaluation> {
    hyp.check_finite()?;
    let n = data.len();
    let dim = data.dim;
    if hyp.dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            actual: hyp.dim(),
        });
    }
    let s2 = hyp.outputscale();
    let noise = hyp.noise();
    let kappa = hyp.inv_sq_lengthscales();

    let npairs = n * n.saturating_sub(1) / 2;
    let mut dk_du = Vec::with_capacity(npairs);
    let mut k = DMatrix::zeros(n, n);
    let mut p = 0;
    for i in 0..n {
        k[(i, i)] = s2 + noise;
        for j in (i + 1)..n {
            let d = &data.sqdiff[p * dim..(p + 1) * dim];
            let u: f64 = d.iter().zip(&kappa).map(|(a, b)| a * b).sum();
            let (f, df) = matern52(u);
            k[(i, j)] = s2 * f;
            k[(j, i)] = s2 * f;
            dk_du.push(s2 * df);
            p += 1;
        }
    }
    let (chol, _) = factorize(k.clone())?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let mut value = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln();

    let kinv = chol.inverse();
    let mut grad = vec![0.0; 3 + dim];
    let mut trace_w = 0.0;
    let mut os = 0.0;
    for i in 0..n {
        let w = alpha[i] * alpha[i] - kinv[(i, i)];
        trace_w += w;
        os += w * s2;
    }
    let mut p = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            os += 2.0 * w * k[(i, j)];
            let c = w * dk_du[p];
            let d = &data.sqdiff[p * dim..(p + 1) * dim];
            for m in 0..dim {
                grad[3 + m] += c * d[m];
            }
            p += 1;
        }
    }
    grad[0] = 0.5 * os;
    grad[1] = if noise_is_fixed { 0.0 } else { 0.5 * noise * trace_w };
    for m in 0..dim {
        grad[3 + m] *= kappa[m];
    }

    if let Some(scale) = prior_scale {
        let tau = hyp.tau();
        value += log_half_cauchy(tau, scale);
        grad[2] += -2.0 * tau * tau / (scale * scale + tau * tau);
        for m in 0..dim {
            let km = kappa[m];
            value += log_half_cauchy(km, tau);
            let denom = tau * tau + km * km;
            grad[2] += -1.0 + 2.0 * km * km / denom;
            grad[3 + m] += -2.0 * km * km / denom;
        }
    }
    if !value.is_finite() {
        return Err(Error::Numerical("non-finite log likelihood".into()));
    }
    Ok(Evaluation { value, grad })
}

fn log_half_cauchy(x: f64, scale: f64) -> f64 {
    (2.0 / PI).ln() - scale.ln() - (1.0 + (x / scale) * (x / scale)).ln()
}

/// Exact Gaussian log marginal likelihood of zero-mean `values`.
pub fn log_marginal_likelihood(hyp: &KernelHyperparams, points: &[Vec<f64>], values: &[f64]) -> Result<f64> {
    Ok(log_marginal_likelihood_grad(hyp, points, values)?.0)
}

/// Log marginal likelihood and its analytic gradient in the coordinates of
/// [`KernelHyperparams::to_vec`]. The `tau` component is zero.
pub fn log_marginal_likelihood_grad(
    hyp: &KernelHyperparams,
    points: &[Vec<f64>],
    values: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_lengths(points, values)?;
    let data = Dataset::new(points)?;
    let y = DVector::from_column_slice(values);
    let e = evaluate(hyp, &data, &y, None, false)?;
    Ok((e.value, e.grad))
}

/// Log marginal likelihood plus the log shrinkage prior, with gradient.
pub fn log_posterior_grad(
    hyp: &KernelHyperparams,
    points: &[Vec<f64>],
    values: &[f64],
    tau_scale: f64,
) -> Result<(f64, Vec<f64>)> {
    check_lengths(points, values)?;
    let data = Dataset::new(points)?;
    let y = DVector::from_column_slice(values);
    let e = evaluate(hyp, &data, &y, Some(tau_scale), false)?;
    Ok((e.value, e.grad))
}

fn check_lengths(points: &[Vec<f64>], values: &[f64]) -> Result<()> {
    if points.len() != values.len() {
        return Err(Error::Dimension {
            expected: points.len(),
            actual: values.len(),
        });
    }
    Ok(())
}

fn standardize(values: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sd = var.sqrt();
    if sd.is_nan() || sd <= 1e-12 * mean.abs().max(1.0) {
        sd = 1.0;
    }
    (values.iter().map(|v| (v - mean) / sd).collect(), mean, sd)
}

const LOG_BOUNDS: [(f64, f64); 3] = [(-10.0, 10.0), (-13.815_510_557_964_274, 3.0), (-15.0, 5.0)];
const LOG_KAPPA_BOUNDS: (f64, f64) = (-15.0, 10.0);

fn clamp_params(v: &mut [f64], fixed_noise: Option<f64>) {
    for (i, x) in v.iter_mut().enumerate() {
        let (lo, hi) = if i < 3 { LOG_BOUNDS[i] } else { LOG_KAPPA_BOUNDS };
        *x = x.clamp(lo, hi);
    }
    if let Some(noise) = fixed_noise {
        v[1] = noise.ln();
    }
}

/// Fit an ensemble of MAP models, one per restart.
pub fn fit(points: &[Vec<f64>], values: &[f64], opts: &FitOptions, seed: u64) -> Result<Vec<GpModel>> {
    check_lengths(points, values)?;
    if points.len() < 2 {
        return Err(Error::InvalidRun("GP fit needs at least two observations".into()));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidRun("GP fit needs at least one restart".into()));
    }
    if let Some(noise) = opts.fixed_noise {
        if noise.is_nan() || noise < 0.0 {
            return Err(Error::InvalidRun(format!("fixed noise {noise} must be >= 0")));
        }
    }
    let data = Dataset::new(points)?;
    let (ystd, mean, sd) = standardize(values);
    let y = DVector::from_vec(ystd);
    let dim = data.dim;

    let mut ensemble = Vec::with_capacity(opts.restarts);
    for restart in 0..opts.restarts {
        let mut rng = rng::seeded(rng::mix(&[seed, restart as u64]));
        let mut log_uniform = |lo: f64, hi: f64| rng.random_range(lo.ln()..hi.ln());
        let mut params = vec![log_uniform(0.5, 2.0), log_uniform(1e-3, 1e-1), log_uniform(0.01, 1.0)];
        for _ in 0..dim {
            params.push(log_uniform(0.1, 10.0));
        }
        clamp_params(&mut params, opts.fixed_noise);
        let best = adam(&params, &data, &y, opts)?;
        let hyp = KernelHyperparams::from_vec(&best);
        ensemble.push(GpModel::with_standardization(hyp, points, values, mean, sd)?);
    }
    Ok(ensemble)
}

fn adam(start: &[f64], data: &Dataset, y: &DVector<f64>, opts: &FitOptions) -> Result<Vec<f64>> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let fixed = opts.fixed_noise.is_some();
    let mut params = start.to_vec();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut best = params.clone();
    let mut best_value = f64::NEG_INFINITY;
    for step in 1..=opts.steps.max(1) {
        let hyp = KernelHyperparams::from_vec(&params);
        let e = match evaluate(&hyp, data, y, Some(opts.tau_scale), fixed) {
            Ok(e) => e,
            Err(err) if best_value.is_finite() => {
                log::debug!("stopping restart early: {err}");
                break;
            }
            Err(err) => return Err(err),
        };
        if e.value > best_value {
            best_value = e.value;
            best.clone_from(&params);
        }
        if step == opts.steps.max(1) {
            break;
        }
        let b1 = 1.0 - BETA1.powi(step as i32);
        let b2 = 1.0 - BETA2.powi(step as i32);
        for i in 0..params.len() {
            let g = e.grad[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            params[i] += opts.learning_rate * (m[i] / b1) / ((v[i] / b2).sqrt() + EPS);
        }
        clamp_params(&mut params, opts.fixed_noise);
    }
    Ok(best)
}

/// A GP conditioned on training data under fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyperparams: KernelHyperparams,
    kappa: Vec<f64>,
    train_x: Vec<Vec<f64>>,
    train_y: DVector<f64>,
    y_mean: f64,
    y_sd: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    noise_eff: f64,
}

impl GpModel {
    /// Condition on data, standardizing `values` internally.
    pub fn new(hyperparams: KernelHyperparams, points: &[Vec<f64>], values: &[f64]) -> Result<Self> {
        check_lengths(points, values)?;
        if points.is_empty() {
            return Err(Error::InvalidRun("GP needs at least one observation".into()));
        }
        let (_, mean, sd) = standardize(values);
        Self::with_standardization(hyperparams, points, values, mean, sd)
    }

    fn with_standardization(
        hyperparams: KernelHyperparams,
        points: &[Vec<f64>],
        values: &[f64],
        y_mean: f64,
        y_sd: f64,
    ) -> Result<Self> {
        hyperparams.check_finite()?;
        let data = Dataset::new(points)?;
        if data.dim != hyperparams.dim() {
            return Err(Error::Dimension {
                expected: hyperparams.dim(),
                actual: data.dim,
            });
        }
        let kappa = hyperparams.inv_sq_lengthscales();
        let s2 = hyperparams.outputscale();
        let noise = hyperparams.noise();
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = s2 + noise;
            for j in (i + 1)..n {
                let v = s2 * matern52(scaled_sq_dist(&points[i], &points[j], &kappa)).0;
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        let (chol, jitter) = factorize(k)?;
        let train_y = DVector::from_iterator(n, values.iter().map(|v| (v - y_mean) / y_sd));
        let alpha = chol.solve(&train_y);
        Ok(Self {
            hyperparams,
            kappa,
            train_x: data.x,
            train_y,
            y_mean,
            y_sd,
            chol,
            alpha,
            noise_eff: noise + jitter,
        })
    }

    /// Same hyperparameters, new data.
    pub fn condition(&self, points: &[Vec<f64>], values: &[f64]) -> Result<Self> {
        Self::new(self.hyperparams.clone(), points, values)
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hyperparams
    }

    pub fn train_x(&self) -> &[Vec<f64>] {
        &self.train_x
    }

    /// Standardized training targets.
    pub fn train_y(&self) -> &DVector<f64> {
        &self.train_y
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn y_sd(&self) -> f64 {
        self.y_sd
    }

    pub fn dim(&self) -> usize {
        self.kappa.len()
    }

    /// Noise variance plus any jitter added during factorization (standardized).
    pub fn noise_eff(&self) -> f64 {
        self.noise_eff
    }

    /// Prior signal variance on the original scale.
    pub fn outputscale(&self) -> f64 {
        self.hyperparams.outputscale() * self.y_sd * self.y_sd
    }

    fn check_dim(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: point.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        self.hyperparams.outputscale() * matern52(scaled_sq_dist(a, b, &self.kappa)).0
    }

    pub(crate) fn kernel_vector(&self, point: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.train_x.len(), self.train_x.iter().map(|x| self.kernel(x, point)))
    }

    /// `(K + noise I)^-1 v`.
    pub(crate) fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    pub(crate) fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Latent posterior mean and variance in standardized units.
    pub(crate) fn predict_standardized(&self, point: &[f64]) -> (f64, f64) {
        let k = self.kernel_vector(point);
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("non-singular factor");
        let var = (self.hyperparams.outputscale() - v.dot(&v)).max(0.0);
        (mean, var)
    }

    /// Latent predictive mean and variance on the original scale.
    pub fn predict(&self, point: &[f64]) -> Result<(f64, f64)> {
        self.check_dim(point)?;
        let (m, v) = self.predict_standardized(point);
        Ok((self.y_mean + self.y_sd * m, v * self.y_sd * self.y_sd))
    }

    /// Joint latent posterior over `points` in standardized units.
    pub(crate) fn joint_standardized(&self, points: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.train_x.len();
        let m = points.len();
        let mut kxp = DMatrix::zeros(n, m);
        for (j, p) in points.iter().enumerate() {
            kxp.set_column(j, &self.kernel_vector(p));
        }
        let mean = kxp.transpose() * &self.alpha;
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kxp)
            .expect("non-singular factor");
        let mut cov = DMatrix::from_fn(m, m, |a, b| self.kernel(&points[a], &points[b]));
        cov -= v.transpose() * v;
        (mean, cov)
    }

    /// Joint latent posterior mean and covariance on the original scale.
    pub fn posterior(&self, points: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        for p in points {
            self.check_dim(p)?;
        }
        let (mean, cov) = self.joint_standardized(points);
        Ok((mean.map(|v| self.y_mean + self.y_sd * v), cov * (self.y_sd * self.y_sd)))
    }
}

/// Symmetric positive semi-definite square root `S` with `S S = cov`,
/// clipping negative eigenvalues to zero. Returns `S` and the pseudo-inverse
/// of `S`.
pub(crate) fn psd_sqrt(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite covariance".into()));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let cutoff = max_ev * 1e-12 * cov.nrows() as f64;
    let q = &eig.eigenvectors;
    let root = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| if l > cutoff { l.sqrt() } else { 0.0 }),
    );
    let inv_root = root.map(|r| if r > 0.0 { 1.0 / r } else { 0.0 });
    let sqrt = q * DMatrix::from_diagonal(&root) * q.transpose();
    let pinv = q * DMatrix::from_diagonal(&inv_root) * q.transpose();
    Ok((sqrt, pinv))
}

/// Joint draws of the latent function at `points`, one matrix per ensemble
/// member with `n_samples` rows and one column per point.
pub fn sample_posterior(
    ensemble: &[GpModel],
    points: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(ensemble.len());
    for (member, model) in ensemble.iter().enumerate() {
        let (mean, cov) = model.posterior(points)?;
        let (sqrt, _) = psd_sqrt(&cov)?;
        let mut rng = rng::seeded(rng::mix(&[seed, member as u64]));
        let z = DMatrix::from_fn(points.len(), n_samples, |_, _| rng.sample::<f64, _>(StandardNormal));
        let draws = (sqrt * z).transpose();
        out.push(DMatrix::from_fn(n_samples, points.len(), |s, j| {
            mean[j] + draws[(s, j)]
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matern_derivative() {
        for &u in &[0.0, 0.01, 0.3, 2.0, 9.0] {
            let h = 1e-6;
            let fd = (matern52(u + h).0 - matern52((u - h).max(0.0)).0) / (u + h - (u - h).max(0.0));
            assert!((fd - matern52(u).1).abs() < 1e-5, "u={u}");
        }
        assert_eq!(matern52(0.0).0, 1.0);
    }

    #[test]
    fn single_observation_closed_form() {
        let hyp = KernelHyperparams::new(0.7, 1.0, &[2.0], 0.1);
        let lml = log_marginal_likelihood(&hyp, &[vec![0.3]], &[0.0]).unwrap();
        let want = -0.5 * (2.0 * PI * (0.7 + 1.0)).ln();
        assert!((lml - want).abs() < 1e-14);
    }

    #[test]
    fn interpolates_two_points() {
        let points = vec![vec![0.0], vec![1.0]];
        let values = [0.0, 1.0];
        let opts = FitOptions {
            restarts: 2,
            fixed_noise: Some(1e-8),
            ..FitOptions::default()
        };
        let ensemble = fit(&points, &values, &opts, 3).unwrap();
        for m in &ensemble {
            let (mean, var) = m.predict(&[0.0]).unwrap();
            assert!(mean.abs() < 1e-3, "mean {mean}");
            assert!(var >= 0.0);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let opts = FitOptions::default();
        assert!(fit(&[vec![0.0]], &[1.0], &opts, 0).is_err());
        assert!(matches!(
            fit(&[vec![0.0], vec![1.0, 2.0]], &[1.0, 2.0], &opts, 0),
            Err(Error::Dimension { .. })
        ));
        let ensemble = fit(
            &[vec![0.0], vec![1.0]],
            &[0.0, 1.0],
            &FitOptions {
                restarts: 1,
                steps: 5,
                ..opts
            },
            0,
        )
        .unwrap();
        assert!(ensemble[0].predict(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn constant_values_fit() {
        let points: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let ensemble = fit(
            &points,
            &[3.0; 5],
            &FitOptions {
                restarts: 2,
                steps: 30,
                ..FitOptions::default()
            },
            1,
        )
        .unwrap();
        let (mean, _) = ensemble[0].predict(&[0.5]).unwrap();
        assert!((mean - 3.0).abs() < 1e-9);
    }

    #[test]
    fn psd_sqrt_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 0.0]);
        let cov = &a * a.transpose();
        let (s, pinv) = psd_sqrt(&cov).unwrap();
        assert!((&s * &s - &cov).abs().max() < 1e-12);
        let proj = &s * &pinv;
        assert!((&proj * &s - &s).abs().max() < 1e-10);
    }
}
