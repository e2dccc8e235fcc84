//! Gaussian-process surrogate of `θ ↦ JSD` with lower-confidence-bound
//! acquisition.
//!
//! Targets are normalized to `[−1, 1]` and modelled with a zero-mean GP and a
//! squared-exponential kernel. Hyperparameters are MAP estimates under gamma
//! priors. During a BOLFI run the factorization is extended one row at a time
//! and hyperparameters are refitted on a doubling schedule.

use std::f64::consts::LN_2;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::{EmpiricalCounts, RngStream};
use crate::divergence::{jsd_of, MixingWeight};
use crate::inference::{check_observed, SimSize};
use crate::simulators::SimulatorModel;
use crate::special::ln_gamma;
use crate::{Error, Result};

const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Maps a summed JSD over `epochs` epochs onto `[−1, 1]`. Values outside
/// `[0, L ln 2]` are clamped with a warning.
pub fn normalize_jsd(y: f64, epochs: usize) -> f64 {
    let top = epochs as f64 * LN_2;
    let c = y.clamp(0.0, top);
    if c != y {
        warn!("JSD value {y} outside [0, {top}], clamped");
    }
    2.0 * c / top - 1.0
}

pub fn denormalize_jsd(z: f64, epochs: usize) -> f64 {
    (z + 1.0) * epochs as f64 * LN_2 / 2.0
}

/// Whether a variance hyperparameter is fixed or estimated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperMode {
    Fixed(f64),
    Estimate(EstimateTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateTag {
    Estimate,
}

impl HyperMode {
    pub const ESTIMATE: HyperMode = HyperMode::Estimate(EstimateTag::Estimate);
}

/// Priors and fitting options. Gamma priors are given by shape and mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub lengthscale_shape: f64,
    /// Prior mean of each lengthscale as a fraction of its bound width.
    pub lengthscale_mean_fraction: f64,
    pub signal_variance: HyperMode,
    pub signal_shape: f64,
    pub signal_mean: f64,
    pub noise_variance: HyperMode,
    pub noise_shape: f64,
    pub noise_mean: f64,
    /// Smallest admissible noise variance.
    pub noise_floor: f64,
    /// Optimizer starts.
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            lengthscale_shape: 2.0,
            lengthscale_mean_fraction: 1.0 / 3.0,
            signal_variance: HyperMode::ESTIMATE,
            signal_shape: 2.0,
            signal_mean: 1.0,
            noise_variance: HyperMode::ESTIMATE,
            noise_shape: 1.1,
            noise_mean: 0.05,
            noise_floor: 1e-8,
            restarts: 3,
            max_iter: 60,
        }
    }
}

impl GpConfig {
    fn validate(&self) -> Result<()> {
        let pos = [
            self.lengthscale_shape,
            self.lengthscale_mean_fraction,
            self.signal_shape,
            self.signal_mean,
            self.noise_shape,
            self.noise_mean,
            self.noise_floor,
        ];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("GP prior parameters must be positive".into()));
        }
        for mode in [self.signal_variance, self.noise_variance] {
            if let HyperMode::Fixed(v) = mode {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config("fixed GP variances must be positive".into()));
                }
            }
        }
        if self.restarts == 0 {
            return Err(Error::Config("need at least one optimizer start".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Hyperparameters {
    /// `[ln ℓ_1, …, ln ℓ_d, ln s², ln σ_n²]`.
    pub fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_variance.ln());
        v.push(self.noise_variance.ln());
        v
    }

    pub fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        Self {
            lengthscales: v[..d].iter().map(|x| x.exp()).collect(),
            signal_variance: v[d].exp(),
            noise_variance: v[d + 1].exp(),
        }
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).zip(&self.lengthscales).map(|((x, y), l)| (x - y) * (x - y) / (l * l)).sum();
        self.signal_variance * (-0.5 * r2).exp()
    }
}

/// `K_f + (σ_n² + jitter) I` for `inputs`.
pub fn kernel_matrix(inputs: &[Vec<f64>], hyper: &Hyperparameters, jitter: f64) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = hyper.kernel(&inputs[i], &inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += hyper.noise_variance + jitter;
    }
    k
}

fn gamma_log_density(h: f64, shape: f64, mean: f64) -> (f64, f64) {
    // value and derivative with respect to ln h
    let rate = shape / mean;
    let v = shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * h.ln() - rate * h;
    (v, (shape - 1.0) - rate * h)
}

fn check_training(inputs: &[Vec<f64>], targets: &[f64], bounds: &[(f64, f64)]) -> Result<()> {
    if inputs.len() < 2 || inputs.len() != targets.len() {
        return Err(Error::Argument("need at least 2 training points with matching targets".into()));
    }
    if bounds.is_empty() || inputs.iter().any(|x| x.len() != bounds.len()) {
        return Err(Error::Argument("training inputs do not match the bounds dimension".into()));
    }
    if targets.iter().chain(inputs.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Argument("training data must be finite".into()));
    }
    Ok(())
}

/// Log posterior (log marginal likelihood plus log priors) of the
/// hyperparameters given as `[ln ℓ_1, …, ln ℓ_d, ln s², ln σ_n²]`, and its
/// gradient in the same coordinates. `None` when the kernel matrix cannot be
/// factorized even with maximal jitter.
pub fn map_objective(
    inputs: &[Vec<f64>],
    targets: &[f64],
    cfg: &GpConfig,
    bounds: &[(f64, f64)],
    log_hyper: &[f64],
) -> Result<Option<(f64, Vec<f64>)>> {
    check_training(inputs, targets, bounds)?;
    let d = bounds.len();
    if log_hyper.len() != d + 2 {
        return Err(Error::Argument(format!("expected {} log-hyperparameters", d + 2)));
    }
    Ok(objective(inputs, targets, cfg, bounds, log_hyper))
}

fn objective(
    inputs: &[Vec<f64>],
    targets: &[f64],
    cfg: &GpConfig,
    bounds: &[(f64, f64)],
    log_hyper: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let h = Hyperparameters::from_log(log_hyper);
    let n = inputs.len();
    let d = bounds.len();
    let y = DVector::from_column_slice(targets);
    let (chol, kf) = JITTER_LADDER.iter().find_map(|&j| {
        let k = kernel_matrix(inputs, &h, j);
        let mut kf = k.clone();
        for i in 0..n {
            kf[(i, i)] -= h.noise_variance + j;
        }
        k.cholesky().map(|c| (c, kf))
    })?;
    let alpha = chol.solve(&y);
    let l = chol.l_dirty();
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let mut value = -0.5 * y.dot(&alpha) - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut w = chol.inverse();
    // W = α αᵀ − K⁻¹
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] = alpha[i] * alpha[j] - w[(i, j)];
        }
    }
    let mut grad = vec![0.0; d + 2];
    for i in 0..n {
        for j in 0..n {
            let wk = w[(i, j)] * kf[(i, j)];
            grad[d] += wk;
            for (dd, g) in grad.iter_mut().take(d).enumerate() {
                let diff = inputs[i][dd] - inputs[j][dd];
                *g += wk * diff * diff / (h.lengthscales[dd] * h.lengthscales[dd]);
            }
        }
        grad[d + 1] += w[(i, i)];
    }
    grad.iter_mut().take(d + 1).for_each(|g| *g *= 0.5);
    grad[d + 1] *= 0.5 * h.noise_variance;

    for (dd, &(lo, hi)) in bounds.iter().enumerate() {
        let (v, g) = gamma_log_density(h.lengthscales[dd], cfg.lengthscale_shape, (hi - lo) * cfg.lengthscale_mean_fraction);
        value += v;
        grad[dd] += g;
    }
    if cfg.signal_variance == HyperMode::ESTIMATE {
        let (v, g) = gamma_log_density(h.signal_variance, cfg.signal_shape, cfg.signal_mean);
        value += v;
        grad[d] += g;
    } else {
        grad[d] = 0.0;
    }
    if cfg.noise_variance == HyperMode::ESTIMATE {
        let (v, g) = gamma_log_density(h.noise_variance, cfg.noise_shape, cfg.noise_mean);
        value += v;
        grad[d + 1] += g;
    } else {
        grad[d + 1] = 0.0;
    }
    Some((value, grad))
}

/// Projected quasi-Newton minimization of `f` over the box `[lo, hi]`.
fn minimize_box<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], max_iter: usize) -> Option<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let project = |x: &mut Vec<f64>| x.iter_mut().zip(lo.iter().zip(hi)).for_each(|(v, (&a, &b))| *v = v.clamp(a, b));
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut g) = f(&x)?;
    let mut hinv = identity(n);
    for _ in 0..max_iter {
        let mut dir: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| hinv[i][j] * g[j]).sum::<f64>()).collect();
        if dot(&dir, &g) >= 0.0 {
            hinv = identity(n);
            dir = g.iter().map(|v| -v).collect();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            project(&mut xn);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            if decrease < 0.0 {
                if let Some((fn_, gn)) = f(&xn) {
                    if fn_ <= fx + 1e-4 * decrease {
                        accepted = Some((xn, fn_, gn, step));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else { break };
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            // BFGS update of the inverse Hessian
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| hinv[i][j] * yv[j]).sum()).collect();
            let yhy = dot(&yv, &hy);
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += ((sy + yhy) * s[i] * s[j]) / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        let done = (fx - fn_).abs() <= 1e-10 * (1.0 + fx.abs()) && s.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-8;
        x = xn;
        fx = fn_;
        g = gn;
        if done {
            break;
        }
    }
    Some((x, fx))
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn hyper_box(cfg: &GpConfig, bounds: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    let mut lo: Vec<f64> = bounds.iter().map(|&(a, b)| ((b - a) * 1e-3).ln()).collect();
    let mut hi: Vec<f64> = bounds.iter().map(|&(a, b)| ((b - a) * 100.0).ln()).collect();
    match cfg.signal_variance {
        HyperMode::Fixed(v) => {
            lo.push(v.ln());
            hi.push(v.ln());
        }
        HyperMode::Estimate(_) => {
            lo.push(1e-4f64.ln());
            hi.push(1e3f64.ln());
        }
    }
    match cfg.noise_variance {
        HyperMode::Fixed(v) => {
            lo.push(v.ln());
            hi.push(v.ln());
        }
        HyperMode::Estimate(_) => {
            lo.push(cfg.noise_floor.ln());
            hi.push(0.0);
        }
    }
    (lo, hi)
}

fn starting_points(cfg: &GpConfig, bounds: &[(f64, f64)], targets: &[f64]) -> Vec<Vec<f64>> {
    let second_moment = targets.iter().map(|y| y * y).sum::<f64>() / targets.len() as f64;
    let signal = match cfg.signal_variance {
        HyperMode::Fixed(v) => v,
        HyperMode::Estimate(_) => second_moment.max(0.1),
    };
    let noise = |v: f64| match cfg.noise_variance {
        HyperMode::Fixed(f) => f,
        HyperMode::Estimate(_) => v.max(cfg.noise_floor),
    };
    let plan = [(1.0, 1e-2), (1.0 / 3.0, 1e-4), (3.0, 1e-3), (1.0, 1e-6), (0.1, 1e-2), (10.0, 1e-5)];
    (0..cfg.restarts)
        .map(|r| {
            let (ls_mult, nv) = plan[r % plan.len()];
            let bump = 1.5f64.powi((r / plan.len()) as i32);
            let mut v: Vec<f64> =
                bounds.iter().map(|&(a, b)| ((b - a) * cfg.lengthscale_mean_fraction * ls_mult * bump).ln()).collect();
            v.push(signal.ln());
            v.push(noise(nv).ln());
            v
        })
        .collect()
}

/// MAP hyperparameters by multi-start quasi-Newton ascent.
pub fn fit_hyperparameters(
    inputs: &[Vec<f64>],
    targets: &[f64],
    cfg: &GpConfig,
    bounds: &[(f64, f64)],
) -> Result<Hyperparameters> {
    cfg.validate()?;
    check_training(inputs, targets, bounds)?;
    let (lo, hi) = hyper_box(cfg, bounds);
    let neg = |x: &[f64]| objective(inputs, targets, cfg, bounds, x).map(|(v, g)| (-v, g.iter().map(|v| -v).collect()));
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starting_points(cfg, bounds, targets) {
        if let Some((x, fx)) = minimize_box(neg, &start, &lo, &hi, cfg.max_iter) {
            if best.as_ref().is_none_or(|(_, b)| fx < *b) {
                best = Some((x, fx));
            }
        }
    }
    let (x, _) = best.ok_or_else(|| Error::Numerical("kernel matrix not positive definite at any start".into()))?;
    Ok(Hyperparameters::from_log(&x))
}

/// Fits hyperparameters and factorizes the kernel matrix.
pub fn gp_fit(
    inputs: &[Vec<f64>],
    targets: &[f64],
    cfg: &GpConfig,
    bounds: &[(f64, f64)],
    epochs: usize,
) -> Result<GpSurrogate> {
    let hyper = fit_hyperparameters(inputs, targets, cfg, bounds)?;
    GpSurrogate::with_hyperparameters(inputs.to_vec(), targets.to_vec(), hyper, bounds.to_vec(), epochs)
}

/// A fitted GP over normalized JSD values.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "GpState", try_from = "GpState")]
pub struct GpSurrogate {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    hyper: Hyperparameters,
    bounds: Vec<(f64, f64)>,
    epochs: usize,
    jitter: f64,
    // row-packed lower Cholesky factor of K + (σ_n² + jitter) I
    chol: Vec<f64>,
    alpha: Vec<f64>,
}

/// Serialized form of a [`GpSurrogate`]; the factorization is rebuilt on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpState {
    pub version: u32,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub hyperparameters: Hyperparameters,
    pub bounds: Vec<(f64, f64)>,
    pub epochs: usize,
}

impl From<GpSurrogate> for GpState {
    fn from(s: GpSurrogate) -> Self {
        GpState { version: 1, inputs: s.inputs, targets: s.targets, hyperparameters: s.hyper, bounds: s.bounds, epochs: s.epochs }
    }
}

impl TryFrom<GpState> for GpSurrogate {
    type Error = Error;

    fn try_from(s: GpState) -> Result<Self> {
        GpSurrogate::with_hyperparameters(s.inputs, s.targets, s.hyperparameters, s.bounds, s.epochs)
    }
}

fn row(i: usize) -> usize {
    i * (i + 1) / 2
}

impl GpSurrogate {
    /// Factorizes with the given hyperparameters (no fitting).
    pub fn with_hyperparameters(
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        hyper: Hyperparameters,
        bounds: Vec<(f64, f64)>,
        epochs: usize,
    ) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Argument("need at least one training point with matching targets".into()));
        }
        if hyper.lengthscales.len() != bounds.len() || inputs.iter().any(|x| x.len() != bounds.len()) {
            return Err(Error::Argument("hyperparameter and input dimensions differ".into()));
        }
        let pos = hyper.lengthscales.iter().chain([&hyper.signal_variance, &hyper.noise_variance]);
        if pos.into_iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Argument("hyperparameters must be positive".into()));
        }
        if epochs == 0 {
            return Err(Error::Argument("epoch count must be at least 1".into()));
        }
        let mut s = Self { inputs, targets, hyper, bounds, epochs, jitter: 0.0, chol: Vec::new(), alpha: Vec::new() };
        s.refactor()?;
        Ok(s)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn diag(&self) -> f64 {
        self.hyper.signal_variance + self.hyper.noise_variance + self.jitter
    }

    fn refactor(&mut self) -> Result<()> {
        let n = self.inputs.len();
        for &j in &JITTER_LADDER {
            self.jitter = j;
            let mut l = vec![0.0; row(n)];
            let mut ok = true;
            'rows: for i in 0..n {
                for c in 0..=i {
                    let kic = if i == c { self.diag() } else { self.hyper.kernel(&self.inputs[i], &self.inputs[c]) };
                    let s = kic - dot(&l[row(i)..row(i) + c], &l[row(c)..row(c) + c]);
                    if i == c {
                        if s <= 0.0 || !s.is_finite() {
                            ok = false;
                            break 'rows;
                        }
                        l[row(i) + i] = s.sqrt();
                    } else {
                        l[row(i) + c] = s / l[row(c) + c];
                    }
                }
            }
            if ok {
                self.chol = l;
                self.update_alpha();
                return Ok(());
            }
        }
        Err(Error::Numerical("kernel matrix not positive definite after maximal jitter".into()))
    }

    fn forward(&self, b: &mut [f64]) {
        for i in 0..b.len() {
            let r = row(i);
            b[i] = (b[i] - dot(&self.chol[r..r + i], &b[..i])) / self.chol[r + i];
        }
    }

    fn backward(&self, b: &mut [f64]) {
        for i in (0..b.len()).rev() {
            let r = row(i);
            b[i] /= self.chol[r + i];
            let bi = b[i];
            for (bj, lij) in b[..i].iter_mut().zip(&self.chol[r..r + i]) {
                *bj -= lij * bi;
            }
        }
    }

    fn update_alpha(&mut self) {
        let mut a = self.targets.clone();
        self.forward(&mut a);
        self.backward(&mut a);
        self.alpha = a;
    }

    /// Appends a training point, extending the factorization by one row.
    /// Hyperparameters are kept.
    pub fn add_point(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        if x.len() != self.bounds.len() || !y.is_finite() {
            return Err(Error::Argument("training point has the wrong dimension or a non-finite target".into()));
        }
        let mut l: Vec<f64> = self.inputs.iter().map(|xi| self.hyper.kernel(xi, &x)).collect();
        self.forward(&mut l);
        let d2 = self.diag() - dot(&l, &l);
        self.inputs.push(x);
        self.targets.push(y);
        if d2 > 1e-12 * self.diag() {
            self.chol.extend(l);
            self.chol.push(d2.sqrt());
            self.update_alpha();
            Ok(())
        } else {
            self.refactor()
        }
    }

    /// Replaces the hyperparameters and refactorizes.
    pub fn set_hyperparameters(&mut self, hyper: Hyperparameters) -> Result<()> {
        if hyper.lengthscales.len() != self.bounds.len() {
            return Err(Error::Argument("hyperparameter dimension differs from the inputs".into()));
        }
        self.hyper = hyper;
        self.refactor()
    }

    /// Posterior mean and latent variance at `theta`, in normalized units.
    pub fn predict(&self, theta: &[f64]) -> (f64, f64) {
        let mut v: Vec<f64> = self.inputs.iter().map(|xi| self.hyper.kernel(xi, theta)).collect();
        let mean = dot(&v, &self.alpha);
        self.forward(&mut v);
        (mean, (self.hyper.signal_variance - dot(&v, &v)).max(0.0))
    }

    /// Mean, variance and their gradients in `theta`.
    fn predict_with_gradient(&self, theta: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let d = theta.len();
        let kstar: Vec<f64> = self.inputs.iter().map(|xi| self.hyper.kernel(xi, theta)).collect();
        let mean = dot(&kstar, &self.alpha);
        let mut v = kstar.clone();
        self.forward(&mut v);
        let var = (self.hyper.signal_variance - dot(&v, &v)).max(0.0);
        let mut w = v;
        self.backward(&mut w);
        let mut dmean = vec![0.0; d];
        let mut dvar = vec![0.0; d];
        for (i, xi) in self.inputs.iter().enumerate() {
            for dd in 0..d {
                let l = self.hyper.lengthscales[dd];
                let dk = -kstar[i] * (theta[dd] - xi[dd]) / (l * l);
                dmean[dd] += dk * self.alpha[i];
                dvar[dd] -= 2.0 * w[i] * dk;
            }
        }
        (mean, var, dmean, dvar)
    }

    fn lcb(&self, theta: &[f64], beta: f64) -> f64 {
        let (m, v) = self.predict(theta);
        m - beta * v.sqrt()
    }

    fn lcb_with_gradient(&self, theta: &[f64], beta: f64) -> (f64, Vec<f64>) {
        let (m, v, dm, dv) = self.predict_with_gradient(theta);
        let sd = v.sqrt();
        let grad = if beta > 0.0 && sd > 1e-10 {
            dm.iter().zip(&dv).map(|(a, b)| a - beta * b / (2.0 * sd)).collect()
        } else {
            dm
        };
        (m - beta * sd, grad)
    }

    /// Training input with the lowest target.
    pub fn best_seen(&self) -> &[f64] {
        let i = crate::inference::min_jsd_index(&self.targets);
        &self.inputs[i]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Posterior mean and latent variance, normalized units.
pub fn gp_predict(s: &GpSurrogate, theta: &[f64]) -> (f64, f64) {
    s.predict(theta)
}

/// Denormalized posterior mean of the summed JSD, clamped to `[0, L ln 2]`.
pub fn surrogate_expected_jsd(s: &GpSurrogate, theta: &[f64]) -> f64 {
    let (m, _) = s.predict(theta);
    denormalize_jsd(m.clamp(-1.0, 1.0), s.epochs)
}

/// Local refinements after screening the random starts.
const REFINE_STARTS: usize = 3;
const RANDOM_STARTS: usize = 64;

/// Approximate minimizer of `mean − β·sd` over `bounds`: 64 uniform starts plus
/// the best training input are screened and the most promising few refined.
pub fn lcb_acquire(s: &GpSurrogate, bounds: &[(f64, f64)], beta: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    assert!(beta >= 0.0, "LCB weight must be non-negative");
    assert_eq!(bounds.len(), s.bounds.len(), "bounds dimension differs from the surrogate");
    let lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let hi: Vec<f64> = bounds.iter().map(|b| b.1).collect();
    let mut starts: Vec<Vec<f64>> =
        (0..RANDOM_STARTS).map(|_| bounds.iter().map(|&(a, b)| rng.random_range(a..=b)).collect()).collect();
    starts.push(s.best_seen().iter().zip(bounds).map(|(v, &(a, b))| v.clamp(a, b)).collect());
    let mut scored: Vec<(f64, Vec<f64>)> = starts.into_iter().map(|x| (s.lcb(&x, beta), x)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = scored[0].clone();
    for (_, x0) in scored.iter().take(REFINE_STARTS) {
        if let Some((x, fx)) = minimize_box(|x| Some(s.lcb_with_gradient(x, beta)), x0, &lo, &hi, 50) {
            if fx < best.0 {
                best = (fx, x);
            }
        }
    }
    best.1
}

/// Minimizer of the surrogate posterior mean.
pub fn surrogate_minimizer(s: &GpSurrogate, rng: &mut ChaCha8Rng) -> Vec<f64> {
    lcb_acquire(s, &s.bounds, 0.0, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    /// Uniform random evaluations before acquisition starts.
    pub init_count: usize,
    /// Total number of simulations.
    pub budget: usize,
    /// Exploration weight β.
    pub lcb_weight: f64,
    /// Simulated sample size per evaluation.
    pub sim_size: SimSize,
    /// Largest data subset used when refitting hyperparameters.
    pub refit_subset: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self { init_count: 20, budget: 1000, lcb_weight: 2.0, sim_size: SimSize::NObs, refit_subset: 128 }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_count < 2 || self.init_count > self.budget {
            return Err(Error::Config("need 2 <= init_count <= budget".into()));
        }
        if !(self.lcb_weight >= 0.0 && self.lcb_weight.is_finite()) {
            return Err(Error::Config("lcb_weight must be non-negative".into()));
        }
        if self.refit_subset < 2 {
            return Err(Error::Config("refit_subset must be at least 2".into()));
        }
        Ok(())
    }
}

fn refit(s: &mut GpSurrogate, cfg: &GpConfig, limit: usize) -> Result<()> {
    let n = s.len();
    let (xs, ys): (Vec<Vec<f64>>, Vec<f64>) = if n <= limit {
        (s.inputs.clone(), s.targets.clone())
    } else {
        (0..limit).map(|i| i * n / limit).map(|i| (s.inputs[i].clone(), s.targets[i])).unzip()
    };
    let hyper = fit_hyperparameters(&xs, &ys, cfg, &s.bounds)?;
    s.set_hyperparameters(hyper)
}

const DESIGN_PURPOSE: u64 = 0x626f_6c66;
const SIM_PURPOSE: u64 = 0x7369_6d73;

/// Sequential design: `init_count` uniform draws, then LCB acquisitions, one
/// simulation each, until `budget` simulations have run. Targets are the
/// summed JSD over epochs, normalized. Hyperparameters are refitted whenever
/// the data size doubles and once more at the end.
pub fn bolfi_run(
    model: &dyn SimulatorModel,
    observed: &[EmpiricalCounts],
    bo: &BoConfig,
    gp: &GpConfig,
    w: MixingWeight,
    stream: RngStream,
) -> Result<GpSurrogate> {
    bo.validate()?;
    gp.validate()?;
    check_observed(model, observed)?;
    let bounds = model.bounds();
    let epochs = observed.len();
    let n_sim = bo.sim_size.resolve(observed[0].n());
    let obs: Vec<Vec<f64>> = observed.iter().map(|o| o.proportions()).collect();
    let mut design = stream.for_purpose(DESIGN_PURPOSE).rng();
    let mut sim_rng = stream.for_purpose(SIM_PURPOSE).rng();
    let mut evaluate = |theta: &[f64]| -> Result<f64> {
        let sims = model.simulate(theta, n_sim, &mut sim_rng)?;
        let total: f64 = sims.iter().zip(&obs).map(|(s, o)| jsd_of(o, &s.proportions(), w)).sum();
        Ok(normalize_jsd(total, epochs))
    };

    let mut xs = Vec::with_capacity(bo.budget);
    let mut ys = Vec::with_capacity(bo.budget);
    for _ in 0..bo.init_count {
        let theta: Vec<f64> = bounds.iter().map(|&(a, b)| design.random_range(a..=b)).collect();
        ys.push(evaluate(&theta)?);
        xs.push(theta);
    }
    let mut s = gp_fit(&xs, &ys, gp, &bounds, epochs)?;
    let mut next_refit = 2 * bo.init_count;
    while s.len() < bo.budget {
        let theta = lcb_acquire(&s, &bounds, bo.lcb_weight, &mut design);
        let y = evaluate(&theta)?;
        s.add_point(theta, y)?;
        if s.len() == next_refit && s.len() < bo.budget {
            refit(&mut s, gp, bo.refit_subset)?;
            next_refit *= 2;
        }
    }
    if bo.budget > bo.init_count {
        refit(&mut s, gp, bo.refit_subset)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fixed(ls: f64, sv: f64, nv: f64) -> Hyperparameters {
        Hyperparameters { lengthscales: vec![ls], signal_variance: sv, noise_variance: nv }
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_jsd(0.0, 1), -1.0);
        assert_abs_diff_eq!(normalize_jsd(LN_2, 1), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_jsd(0.346574, 1), 0.0, epsilon = 1e-5);
        assert_eq!(normalize_jsd(-0.1, 2), -1.0);
    }

    #[test]
    fn interpolates_training_points() {
        let xs = vec![vec![-0.5], vec![0.0], vec![0.7]];
        let ys = vec![0.2, -0.4, 0.1];
        let s = GpSurrogate::with_hyperparameters(xs.clone(), ys.clone(), fixed(0.4, 1.0, 1e-10), vec![(-1.0, 1.0)], 1).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let (m, v) = s.predict(x);
            assert_abs_diff_eq!(m, *y, epsilon = 1e-6);
            assert!(v < 1e-6);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let s = GpSurrogate::with_hyperparameters(vec![vec![0.0], vec![0.1]], vec![0.5, 0.4], fixed(0.05, 0.7, 1e-4), vec![(-100.0, 100.0)], 1)
            .unwrap();
        let (m, v) = s.predict(&[50.0]);
        assert!(m.abs() < 1e-12);
        assert_abs_diff_eq!(v, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn incremental_matches_full_factorization() {
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![-1.0 + 0.17 * i as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x[0]).sin()).collect();
        let h = fixed(0.3, 1.2, 1e-3);
        let full = GpSurrogate::with_hyperparameters(xs.clone(), ys.clone(), h.clone(), vec![(-1.0, 1.0)], 1).unwrap();
        let mut inc = GpSurrogate::with_hyperparameters(xs[..2].to_vec(), ys[..2].to_vec(), h, vec![(-1.0, 1.0)], 1).unwrap();
        for i in 2..xs.len() {
            inc.add_point(xs[i].clone(), ys[i]).unwrap();
        }
        for t in [-0.9, -0.2, 0.33, 0.8] {
            let (a, b) = (full.predict(&[t]), inc.predict(&[t]));
            assert_abs_diff_eq!(a.0, b.0, epsilon = 1e-10);
            assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-10);
        }
    }

    #[test]
    fn state_round_trip() {
        let s = GpSurrogate::with_hyperparameters(vec![vec![0.1], vec![0.4]], vec![-0.3, 0.2], fixed(0.5, 1.0, 1e-3), vec![(0.0, 1.0)], 2)
            .unwrap();
        let back = GpSurrogate::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back.predict(&[0.25]), s.predict(&[0.25]));
        assert_eq!(back.epochs(), 2);
    }

    #[test]
    fn hyper_mode_serde() {
        let m: HyperMode = serde_json::from_str("\"estimate\"").unwrap();
        assert_eq!(m, HyperMode::ESTIMATE);
        let m: HyperMode = serde_json::from_str("0.25").unwrap();
        assert_eq!(m, HyperMode::Fixed(0.25));
    }

    #[test]
    fn surrogate_expectation_clamps() {
        let s = GpSurrogate::with_hyperparameters(vec![vec![0.0], vec![1.0]], vec![-3.0, -3.0], fixed(1.0, 1.0, 1e-6), vec![(0.0, 1.0)], 1)
            .unwrap();
        assert!(s.predict(&[0.5]).0 < -1.0);
        assert_eq!(surrogate_expected_jsd(&s, &[0.5]), 0.0);
    }
}
