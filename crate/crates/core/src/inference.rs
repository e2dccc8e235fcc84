//! Expected-JSD estimation, effective sample size, the χ²-calibrated test
//! statistic and test inversion over a parameter grid.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::exact_expected_jsd;
use crate::categorical::{EmpiricalCounts, RngStream};
use crate::divergence::{jsd_of, MixingWeight};
use crate::simulators::SimulatorModel;
use crate::special::gamma_p;
use crate::surrogate::{surrogate_expected_jsd, GpSurrogate};
use crate::{Error, Result};

/// Monte Carlo estimate of `E[JSD(p̂, Q̂_θ)]` per epoch.
#[derive(Clone, Debug)]
pub struct McEstimate {
    pub expected_jsd: Vec<f64>,
    /// Standard error of each mean.
    pub se: Vec<f64>,
    /// `proportions[epoch][replicate]` is a simulated proportion vector.
    pub proportions: Vec<Vec<Vec<f64>>>,
}

impl McEstimate {
    /// ESS per epoch from the retained replicates.
    pub fn ess(&self) -> Result<Vec<f64>> {
        self.proportions.iter().map(|p| ess(p)).collect()
    }

    pub fn total(&self) -> f64 {
        self.expected_jsd.iter().sum()
    }
}

pub(crate) fn check_observed(model: &dyn SimulatorModel, observed: &[EmpiricalCounts]) -> Result<()> {
    if observed.len() != model.epochs() {
        return Err(Error::Argument(format!(
            "model '{}' has {} epochs but {} observation sets were given",
            model.name(),
            model.epochs(),
            observed.len()
        )));
    }
    if let Some(o) = observed.iter().find(|o| o.k() != model.k()) {
        return Err(Error::Argument(format!("observation has {} categories, model has {}", o.k(), model.k())));
    }
    Ok(())
}

/// Averages `JSD(p̂, Q̂^(j))` over `m` simulations of size `n` at `theta`.
pub fn expected_jsd_mc(
    model: &dyn SimulatorModel,
    theta: &[f64],
    observed: &[EmpiricalCounts],
    n: u64,
    m: usize,
    w: MixingWeight,
    stream: RngStream,
) -> Result<McEstimate> {
    check_observed(model, observed)?;
    if m < 2 {
        return Err(Error::Argument("need at least 2 replicates".into()));
    }
    let obs: Vec<Vec<f64>> = observed.iter().map(|o| o.proportions()).collect();
    let epochs = observed.len();
    let mut values = vec![Vec::with_capacity(m); epochs];
    let mut proportions = vec![Vec::with_capacity(m); epochs];
    let mut rng = stream.rng();
    for _ in 0..m {
        let sims = model.simulate(theta, n, &mut rng)?;
        for (e, sim) in sims.iter().enumerate() {
            let q = sim.proportions();
            values[e].push(jsd_of(&obs[e], &q, w));
            proportions[e].push(q);
        }
    }
    let (expected_jsd, se) = values
        .iter()
        .map(|v| {
            let mean = v.iter().sum::<f64>() / m as f64;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64;
            (mean, (var / m as f64).sqrt())
        })
        .unzip();
    Ok(McEstimate { expected_jsd, se, proportions })
}

/// Effective sample size `Σ q̄_i(1−q̄_i) / ((1/m) Σ_i Σ_j (q̂_i^(j) − q̄_i)²)`.
pub fn ess(sim_proportions: &[Vec<f64>]) -> Result<f64> {
    let m = sim_proportions.len();
    if m < 2 {
        return Err(Error::Argument("ESS needs at least 2 replicates".into()));
    }
    let k = sim_proportions[0].len();
    if sim_proportions.iter().any(|q| q.len() != k) {
        return Err(Error::Argument("replicates differ in category count".into()));
    }
    let mut mean = vec![0.0; k];
    for q in sim_proportions {
        mean.iter_mut().zip(q).for_each(|(a, b)| *a += b);
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let num: f64 = mean.iter().map(|q| q * (1.0 - q)).sum();
    let den: f64 = sim_proportions
        .iter()
        .map(|q| q.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / m as f64;
    if den <= 0.0 || num <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(num / den)
}

/// `T = (2 n_o / (π(1−π))) E[JSD] − (n_o / n_eff)(k − 1)`.
pub fn test_statistic(expected_jsd: f64, n_o: f64, n_eff: f64, k: usize, w: MixingWeight) -> f64 {
    assert!(n_o > 0.0 && n_eff > 0.0, "sample sizes must be positive");
    2.0 * n_o / w.product() * expected_jsd - n_o / n_eff * (k as f64 - 1.0)
}

pub fn chi2_cdf(x: f64, dof: u32) -> f64 {
    assert!(dof >= 1, "chi-squared needs at least one degree of freedom");
    if x <= 0.0 {
        return 0.0;
    }
    gamma_p(dof as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Inverse of [`chi2_cdf`] by bisection.
pub fn chi2_quantile(q: f64, dof: u32) -> f64 {
    assert!(q > 0.0 && q < 1.0, "quantile level must lie in (0, 1)");
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while chi2_cdf(hi, dof) < q {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Accept at level `alpha` iff `T ≤ chi2_quantile(1 − α, dof)`.
pub fn accepts(t_stat: f64, dof: u32, alpha: f64) -> bool {
    t_stat <= chi2_quantile(1.0 - alpha, dof)
}

pub(crate) fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::Config("need at least one significance level".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::Config(format!("significance level {a} outside (0, 1)")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub alpha: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsdTestReport {
    pub expected_jsd: Vec<f64>,
    pub ess: Option<Vec<f64>>,
    pub t_stat: f64,
    pub dof: u32,
    pub p_value: f64,
    pub decisions: Vec<Decision>,
}

/// Inputs of a (possibly multi-epoch) test at one θ.
#[derive(Clone, Copy, Debug)]
pub struct TestInputs<'a> {
    pub expected_jsd: &'a [f64],
    /// Observed sample size per epoch.
    pub n_obs: &'a [f64],
    /// Simulated sample size.
    pub n_sim: f64,
    /// When present, replaces both the observed and simulated sizes.
    pub ess: Option<&'a [f64]>,
    pub k: usize,
    pub w: MixingWeight,
}

impl TestInputs<'_> {
    /// Summed statistic and its degrees of freedom.
    pub fn statistic(&self) -> (f64, u32) {
        let t = self
            .expected_jsd
            .iter()
            .enumerate()
            .map(|(e, &ej)| match self.ess {
                Some(ess) => test_statistic(ej, ess[e], ess[e], self.k, self.w),
                None => test_statistic(ej, self.n_obs[e], self.n_sim, self.k, self.w),
            })
            .sum();
        (t, (self.expected_jsd.len() * (self.k - 1)) as u32)
    }
}

pub fn hypothesis_test(inputs: &TestInputs, alphas: &[f64]) -> Result<JsdTestReport> {
    validate_alphas(alphas)?;
    let epochs = inputs.expected_jsd.len();
    if epochs == 0 || inputs.n_obs.len() != epochs || inputs.ess.is_some_and(|e| e.len() != epochs) {
        return Err(Error::Argument("per-epoch inputs differ in length".into()));
    }
    let (t_stat, dof) = inputs.statistic();
    if !t_stat.is_finite() {
        return Err(Error::Numerical("test statistic is not finite".into()));
    }
    Ok(JsdTestReport {
        expected_jsd: inputs.expected_jsd.to_vec(),
        ess: inputs.ess.map(<[f64]>::to_vec),
        t_stat,
        dof,
        p_value: (1.0 - chi2_cdf(t_stat, dof)).clamp(0.0, 1.0),
        decisions: alphas.iter().map(|&alpha| Decision { alpha, accepted: accepts(t_stat, dof, alpha) }).collect(),
    })
}

/// How the simulated sample size follows from the observed one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimSize {
    /// `n = n_o`.
    #[serde(rename = "n_o")]
    NObs,
    /// `n = c · n_o`.
    Multiple(f64),
    /// A fixed `n`.
    Fixed(u64),
}

impl SimSize {
    pub fn resolve(self, n_obs: u64) -> u64 {
        match self {
            SimSize::NObs => n_obs,
            SimSize::Multiple(c) => ((c * n_obs as f64).round() as u64).max(1),
            SimSize::Fixed(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EssMode {
    /// Raw sample sizes.
    #[default]
    Off,
    /// One ESS per epoch from the replicates at the minimum-JSD grid point,
    /// reused at every θ.
    AtMin,
    /// ESS from the replicates at each θ.
    PerTheta,
}

/// Settings shared by every grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub sim_size: SimSize,
    /// Replicates per θ.
    pub m: usize,
    pub weight: MixingWeight,
    pub ess: EssMode,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { sim_size: SimSize::NObs, m: 200, weight: MixingWeight::HALF, ess: EssMode::Off }
    }
}

/// Where expected JSD values come from.
#[derive(Clone, Copy)]
pub enum Estimator<'a> {
    /// Repeated simulation.
    MonteCarlo,
    /// Closed-form Bernstein expectation; single-epoch tractable models only.
    Exact,
    /// Posterior mean of a fitted surrogate of the summed JSD, split evenly
    /// across epochs.
    Surrogate(&'a GpSurrogate),
}

/// One row of a grid evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub theta: Vec<f64>,
    pub expected_jsd: Vec<f64>,
    pub ess: Option<Vec<f64>>,
    pub t_stat: f64,
    pub dof: u32,
    /// One flag per α of the owning [`ConfidenceSet`].
    pub accepted: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub alphas: Vec<f64>,
    pub points: Vec<GridPoint>,
}

impl ConfidenceSet {
    /// Accepted θ at the `a`-th significance level.
    pub fn accepted(&self, a: usize) -> Vec<&[f64]> {
        self.points.iter().filter(|p| p.accepted[a]).map(|p| p.theta.as_slice()).collect()
    }

    pub fn is_empty(&self, a: usize) -> bool {
        self.points.iter().all(|p| !p.accepted[a])
    }
}

/// Logs a warning when expected observed counts are small enough to strain
/// the χ² approximation; returns the offending `(epoch, category)` pairs.
pub fn warn_low_counts(observed: &[EmpiricalCounts]) -> Vec<(usize, usize)> {
    let mut low = Vec::new();
    for (e, o) in observed.iter().enumerate() {
        for (i, &c) in o.counts().iter().enumerate() {
            if c < 5 {
                low.push((e, i));
            }
        }
    }
    if !low.is_empty() {
        let zero = observed.iter().flat_map(|o| o.counts()).filter(|&&c| c == 0).count();
        warn!("{} observed categories have counts below 5 ({zero} empty); the chi-squared calibration may be poor", low.len());
    }
    low
}

const GRID_PURPOSE: u64 = 0x6772_6964;
const ESS_PURPOSE: u64 = 0x6573_7300;

/// Evaluates the test at every grid point and inverts it.
pub fn confidence_set(
    model: &dyn SimulatorModel,
    observed: &[EmpiricalCounts],
    grid: &[Vec<f64>],
    alphas: &[f64],
    cfg: &EstimationConfig,
    estimator: Estimator,
    stream: RngStream,
) -> Result<ConfidenceSet> {
    check_observed(model, observed)?;
    validate_alphas(alphas)?;
    if grid.is_empty() {
        return Err(Error::Argument("grid is empty".into()));
    }
    for theta in grid {
        model.check_theta(theta)?;
    }
    warn_low_counts(observed);
    let n_obs: Vec<f64> = observed.iter().map(|o| o.n() as f64).collect();
    let n_sim = cfg.sim_size.resolve(observed[0].n());
    let epochs = observed.len();
    let need_mc = matches!(estimator, Estimator::MonteCarlo) || cfg.ess == EssMode::PerTheta;

    let estimates: Vec<(Vec<f64>, Option<Vec<f64>>)> = grid
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let mc = if need_mc {
                let s = stream.for_purpose(GRID_PURPOSE.wrapping_add(i as u64));
                Some(expected_jsd_mc(model, theta, observed, n_sim, cfg.m, cfg.weight, s)?)
            } else {
                None
            };
            let e = match estimator {
                Estimator::MonteCarlo => mc.as_ref().expect("computed above").expected_jsd.clone(),
                Estimator::Exact => exact_expected_jsd_per_epoch(model, theta, observed, n_sim, cfg.weight)?,
                Estimator::Surrogate(s) => vec![surrogate_expected_jsd(s, theta) / epochs as f64; epochs],
            };
            let ess = match (&mc, cfg.ess) {
                (Some(mc), EssMode::PerTheta) => Some(mc.ess()?),
                _ => None,
            };
            Ok((e, ess))
        })
        .collect::<Result<_>>()?;

    let shared_ess = if cfg.ess == EssMode::AtMin {
        let totals: Vec<f64> = estimates.iter().map(|(e, _)| e.iter().sum()).collect();
        let best = min_jsd_index(&totals);
        let s = stream.for_purpose(ESS_PURPOSE);
        Some(expected_jsd_mc(model, &grid[best], observed, n_sim, cfg.m, cfg.weight, s)?.ess()?)
    } else {
        None
    };

    let points = grid
        .iter()
        .zip(estimates)
        .map(|(theta, (expected_jsd, ess))| {
            let ess = ess.or_else(|| shared_ess.clone());
            let report = hypothesis_test(
                &TestInputs {
                    expected_jsd: &expected_jsd,
                    n_obs: &n_obs,
                    n_sim: n_sim as f64,
                    ess: ess.as_deref(),
                    k: model.k(),
                    w: cfg.weight,
                },
                alphas,
            )?;
            Ok(GridPoint {
                theta: theta.clone(),
                expected_jsd,
                ess,
                t_stat: report.t_stat,
                dof: report.dof,
                accepted: report.decisions.iter().map(|d| d.accepted).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConfidenceSet { alphas: alphas.to_vec(), points })
}

/// Bernstein expectation per epoch; needs a tractable model.
pub fn exact_expected_jsd_per_epoch(
    model: &dyn SimulatorModel,
    theta: &[f64],
    observed: &[EmpiricalCounts],
    n: u64,
    w: MixingWeight,
) -> Result<Vec<f64>> {
    let pmfs = model.true_pmf(theta)?;
    pmfs.iter().zip(observed).map(|(p, o)| exact_expected_jsd(&o.to_pmf(), p, n, w)).collect()
}

/// Index of the smallest value; the lowest index wins ties.
pub fn min_jsd_index(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "search domain is empty");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Minimum estimated-JSD point over `grid` with Monte Carlo estimates.
/// Returns the minimizer and its summed expected JSD.
pub fn min_jsd_estimate(
    model: &dyn SimulatorModel,
    observed: &[EmpiricalCounts],
    grid: &[Vec<f64>],
    cfg: &EstimationConfig,
    stream: RngStream,
) -> Result<(Vec<f64>, f64)> {
    check_observed(model, observed)?;
    if grid.is_empty() {
        return Err(Error::Argument("grid is empty".into()));
    }
    let n_sim = cfg.sim_size.resolve(observed[0].n());
    let totals: Vec<f64> = grid
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let s = stream.for_purpose(GRID_PURPOSE.wrapping_add(i as u64));
            Ok(expected_jsd_mc(model, theta, observed, n_sim, cfg.m, cfg.weight, s)?.total())
        })
        .collect::<Result<_>>()?;
    let best = min_jsd_index(&totals);
    Ok((grid[best].clone(), totals[best]))
}
