//! Experiment engine behind the CLI: coverage studies, confidence-set runs
//! and machine-readable reports.
//!
//! Every replicate `r` draws from streams with id `r`; observation and
//! estimation use different keys derived from the master seed, so a run is
//! reproducible for any worker count.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::categorical::{CategoricalPmf, EmpiricalCounts, RngStream};
use crate::divergence::MixingWeight;
use crate::inference::{
    accepts, check_observed, confidence_set, exact_expected_jsd_per_epoch, expected_jsd_mc, validate_alphas, ConfidenceSet,
    EssMode, EstimationConfig, Estimator, SimSize, TestInputs,
};
use crate::simulators::{ModelSpec, SimulatorModel};
use crate::surrogate::{bolfi_run, surrogate_expected_jsd, BoConfig, GpConfig};
use crate::{Error, Result};

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimationMode {
    #[default]
    Mc,
    Exact,
    Bolfi,
}

/// One axis of a Cartesian grid: `points` equally spaced values in `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Axes { axes: Vec<Axis> },
    Points { points: Vec<Vec<f64>> },
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            GridSpec::Points { points } => Ok(points.clone()),
            GridSpec::Axes { axes } => {
                if axes.is_empty() || axes.iter().any(|a| a.points == 0 || a.lo.partial_cmp(&a.hi).is_none_or(|o| o.is_gt())) {
                    return Err(Error::Config("each grid axis needs lo <= hi and at least one point".into()));
                }
                let values: Vec<Vec<f64>> = axes
                    .iter()
                    .map(|a| {
                        if a.points == 1 {
                            vec![a.lo]
                        } else {
                            (0..a.points).map(|i| a.lo + (a.hi - a.lo) * i as f64 / (a.points - 1) as f64).collect()
                        }
                    })
                    .collect();
                let mut out = vec![Vec::new()];
                for v in &values {
                    out = out.into_iter().flat_map(|p| v.iter().map(move |x| [p.clone(), vec![*x]].concat())).collect();
                }
                Ok(out)
            }
        }
    }
}

/// Everything a coverage or confidence-set run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    /// Generating parameter.
    pub theta: Vec<f64>,
    pub n_obs: Vec<u64>,
    #[serde(default = "default_sim_size")]
    pub sim_size: SimSize,
    /// Simulation replicates per expected-JSD estimate.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Number of observation sets.
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub estimation: EstimationMode,
    #[serde(default)]
    pub ess: EssMode,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weight: MixingWeight,
    /// Merge categories whose observed count is below this value into one
    /// tail category before testing.
    #[serde(default)]
    pub collapse_below: Option<u64>,
    #[serde(default)]
    pub bo: BoConfig,
    #[serde(default)]
    pub gp: GpConfig,
}

fn default_sim_size() -> SimSize {
    SimSize::Multiple(100.0)
}

fn default_m() -> usize {
    200
}

fn default_replicates() -> usize {
    300
}

fn default_alphas() -> Vec<f64> {
    vec![0.01, 0.05, 0.1, 0.5]
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_alphas(&self.alphas)?;
        if self.alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("alphas must be strictly increasing".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.n_obs.is_empty() || self.n_obs.contains(&0) {
            return Err(Error::Config("n_obs must be a non-empty list of positive sizes".into()));
        }
        if self.m < 2 {
            return Err(Error::Config("m must be at least 2".into()));
        }
        if self.estimation == EstimationMode::Bolfi {
            self.bo.validate()?;
        }
        let model = self.model.build()?;
        model.check_theta(&self.theta).map_err(|e| Error::Config(format!("true theta: {e}")))?;
        if let Some(g) = &self.grid {
            for p in g.points()? {
                model.check_theta(&p).map_err(|e| Error::Config(format!("grid point: {e}")))?;
            }
        }
        Ok(())
    }

    fn estimation_config(&self) -> EstimationConfig {
        EstimationConfig { sim_size: self.sim_size, m: self.m, weight: self.weight, ess: self.ess }
    }
}

/// A model whose output categories are merged by a fixed map.
pub struct CollapsedModel {
    inner: Arc<dyn SimulatorModel>,
    groups: Vec<usize>,
    k_out: usize,
}

impl CollapsedModel {
    pub fn new(inner: Arc<dyn SimulatorModel>, groups: Vec<usize>, k_out: usize) -> Result<Self> {
        if groups.len() != inner.k() || k_out < 2 || groups.iter().any(|&g| g >= k_out) {
            return Err(Error::Argument("invalid category map".into()));
        }
        Ok(Self { inner, groups, k_out })
    }

    pub fn collapse(&self, counts: &[EmpiricalCounts]) -> Result<Vec<EmpiricalCounts>> {
        counts.iter().map(|c| c.merge(&self.groups, self.k_out)).collect()
    }
}

impl SimulatorModel for CollapsedModel {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        self.inner.bounds()
    }

    fn epochs(&self) -> usize {
        self.inner.epochs()
    }

    fn k(&self) -> usize {
        self.k_out
    }

    fn simulate(&self, theta: &[f64], n: u64, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Vec<EmpiricalCounts>> {
        self.collapse(&self.inner.simulate(theta, n, rng)?)
    }

    fn true_pmf(&self, theta: &[f64]) -> Result<Vec<CategoricalPmf>> {
        self.inner
            .true_pmf(theta)?
            .iter()
            .map(|p| {
                let mut out = vec![0.0; self.k_out];
                for (&g, &v) in self.groups.iter().zip(p.probs()) {
                    out[g] += v;
                }
                CategoricalPmf::new(out)
            })
            .collect()
    }
}

/// Category map sending every category whose count is below `threshold` in
/// any epoch to one tail category placed last. `None` when nothing merges.
pub fn collapse_map(observed: &[EmpiricalCounts], threshold: u64) -> Option<(Vec<usize>, usize)> {
    let k = observed.first()?.k();
    let rare: Vec<bool> = (0..k).map(|i| observed.iter().any(|o| o.counts()[i] < threshold)).collect();
    if !rare.contains(&true) {
        return None;
    }
    let kept = rare.iter().filter(|r| !**r).count();
    let mut next = 0;
    let groups = rare
        .iter()
        .map(|&r| {
            if r {
                kept
            } else {
                next += 1;
                next - 1
            }
        })
        .collect();
    Some((groups, kept + 1))
}

/// Applies the optional collapse rule and returns the model and observations
/// to test with.
pub fn prepare(
    model: Arc<dyn SimulatorModel>,
    observed: Vec<EmpiricalCounts>,
    collapse_below: Option<u64>,
) -> Result<(Arc<dyn SimulatorModel>, Vec<EmpiricalCounts>)> {
    match collapse_below.and_then(|t| collapse_map(&observed, t)) {
        None => Ok((model, observed)),
        Some((groups, k_out)) => {
            if k_out < 2 {
                return Err(Error::Numerical("collapsing left fewer than two categories".into()));
            }
            let c = CollapsedModel::new(model, groups, k_out)?;
            let obs = c.collapse(&observed)?;
            Ok((Arc::new(c), obs))
        }
    }
}

/// Estimates at the generating θ for one observation set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub expected_jsd: Vec<f64>,
    pub n_obs: Vec<f64>,
    pub n_sim: f64,
    pub ess: Option<Vec<f64>>,
    pub k: usize,
}

impl ReplicateOutcome {
    fn inputs(&self, w: MixingWeight, use_ess: bool) -> TestInputs<'_> {
        TestInputs {
            expected_jsd: &self.expected_jsd,
            n_obs: &self.n_obs,
            n_sim: self.n_sim,
            ess: if use_ess { self.ess.as_deref() } else { None },
            k: self.k,
            w,
        }
    }

    pub fn statistic(&self, w: MixingWeight, use_ess: bool) -> (f64, u32) {
        self.inputs(w, use_ess).statistic()
    }
}

const OBS_PURPOSE: u64 = 1;
const EST_PURPOSE: u64 = 2;

fn replicate_streams(seed: u64, size_index: usize, replicate: usize) -> (RngStream, RngStream) {
    let base = RngStream::new(seed, replicate as u64);
    let tag = (size_index as u64) << 8;
    (base.for_purpose(tag | OBS_PURPOSE), base.for_purpose(tag | EST_PURPOSE))
}

/// Simulates one observation set at the generating θ and estimates what the
/// test needs there. ESS is computed whenever `want_ess` is set.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    model: &Arc<dyn SimulatorModel>,
    n_obs: u64,
    size_index: usize,
    replicate: usize,
    want_ess: bool,
) -> Result<ReplicateOutcome> {
    let (obs_stream, est_stream) = replicate_streams(cfg.seed, size_index, replicate);
    let observed = model.simulate(&cfg.theta, n_obs, &mut obs_stream.rng())?;
    let (model, observed) = prepare(Arc::clone(model), observed, cfg.collapse_below)?;
    let n_sim = cfg.sim_size.resolve(n_obs);
    let epochs = observed.len();
    let w = cfg.weight;
    let mc = if cfg.estimation == EstimationMode::Mc || want_ess {
        Some(expected_jsd_mc(model.as_ref(), &cfg.theta, &observed, n_sim, cfg.m, w, est_stream)?)
    } else {
        None
    };
    let expected_jsd = match cfg.estimation {
        EstimationMode::Mc => mc.as_ref().expect("computed for mc").expected_jsd.clone(),
        EstimationMode::Exact => exact_expected_jsd_per_epoch(model.as_ref(), &cfg.theta, &observed, n_sim, w)?,
        EstimationMode::Bolfi => {
            let s = bolfi_run(model.as_ref(), &observed, &cfg.bo, &cfg.gp, w, est_stream.for_purpose(EST_PURPOSE))?;
            vec![surrogate_expected_jsd(&s, &cfg.theta) / epochs as f64; epochs]
        }
    };
    let ess = match (&mc, want_ess) {
        (Some(mc), true) => Some(mc.ess()?),
        _ => None,
    };
    Ok(ReplicateOutcome {
        expected_jsd,
        n_obs: observed.iter().map(|o| o.n() as f64).collect(),
        n_sim: n_sim as f64,
        ess,
        k: model.k(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub n_obs: u64,
    pub alpha: f64,
    pub coverage: f64,
    pub se: f64,
    pub replicates: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub rows: Vec<CoverageRow>,
    /// Replicates that failed and were left out of the rows.
    pub failures: usize,
}

impl CoverageTable {
    pub fn row(&self, n_obs: u64, alpha: f64) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.n_obs == n_obs && r.alpha == alpha)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn tabulate(
    n_obs: u64,
    alphas: &[f64],
    outcomes: &[&ReplicateOutcome],
    w: MixingWeight,
    use_ess: bool,
) -> Vec<CoverageRow> {
    let stats: Vec<(f64, u32)> = outcomes.iter().map(|o| o.statistic(w, use_ess)).collect();
    alphas
        .iter()
        .map(|&alpha| {
            let r = stats.len();
            let hits = stats.iter().filter(|(t, dof)| accepts(*t, *dof, alpha)).count();
            let coverage = if r == 0 { 0.0 } else { hits as f64 / r as f64 };
            let se = if r == 0 { 0.0 } else { (coverage * (1.0 - coverage) / r as f64).sqrt() };
            CoverageRow { n_obs, alpha, coverage, se, replicates: r }
        })
        .collect()
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// All replicate outcomes for one observed size, in replicate order.
fn outcomes_for(
    cfg: &ExperimentConfig,
    model: &Arc<dyn SimulatorModel>,
    n_obs: u64,
    size_index: usize,
    want_ess: bool,
) -> Vec<Result<ReplicateOutcome>> {
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, model, n_obs, size_index, r, want_ess))
        .collect()
}

/// Acceptance frequency of the generating θ over `replicates` observation
/// sets, per observed size and significance level.
pub fn run_coverage(cfg: &ExperimentConfig, workers: usize) -> Result<CoverageTable> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let want_ess = cfg.ess != EssMode::Off;
    let pool = thread_pool(workers)?;
    let mut table = CoverageTable::default();
    for (si, &n_obs) in cfg.n_obs.iter().enumerate() {
        let results = pool.install(|| outcomes_for(cfg, &model, n_obs, si, want_ess));
        let ok: Vec<&ReplicateOutcome> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        table.failures += results.len() - ok.len();
        table.rows.extend(tabulate(n_obs, &cfg.alphas, &ok, cfg.weight, want_ess));
    }
    Ok(table)
}

/// Coverage with raw sample sizes and with the ESS substitution, computed
/// from the same replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssStudy {
    pub raw: CoverageTable,
    pub corrected: CoverageTable,
    pub n_obs: Vec<u64>,
    /// Mean ESS over replicates and epochs, per observed size.
    pub mean_ess: Vec<f64>,
    /// Simulated sample size per observed size.
    pub n_sim: Vec<u64>,
}

impl EssStudy {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            n_eff_rule: &'static str,
            n_obs: u64,
            alpha: f64,
            coverage: f64,
            se: f64,
            replicates: usize,
            mean_ess: f64,
        }
        let mut w = csv::Writer::from_writer(out);
        for (rule, t) in [("n", &self.raw), ("ess", &self.corrected)] {
            for r in &t.rows {
                let si = self.n_obs.iter().position(|&n| n == r.n_obs).expect("row sizes come from n_obs");
                w.serialize(Row {
                    n_eff_rule: rule,
                    n_obs: r.n_obs,
                    alpha: r.alpha,
                    coverage: r.coverage,
                    se: r.se,
                    replicates: r.replicates,
                    mean_ess: self.mean_ess[si],
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Paired coverage study for an overdispersed model: the statistic with the
/// raw sizes and with both sizes replaced by the per-epoch ESS.
pub fn run_nfds_ess_study(cfg: &ExperimentConfig, workers: usize) -> Result<EssStudy> {
    cfg.validate()?;
    if cfg.estimation != EstimationMode::Mc {
        return Err(Error::Config("the ESS study needs estimation = \"mc\"".into()));
    }
    let model = cfg.model.build()?;
    let pool = thread_pool(workers)?;
    let mut raw = CoverageTable::default();
    let mut corrected = CoverageTable::default();
    let mut mean_ess = Vec::new();
    let mut n_sim = Vec::new();
    for (si, &n_obs) in cfg.n_obs.iter().enumerate() {
        let results = pool.install(|| outcomes_for(cfg, &model, n_obs, si, true));
        let ok: Vec<&ReplicateOutcome> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        let failures = results.len() - ok.len();
        raw.failures += failures;
        corrected.failures += failures;
        raw.rows.extend(tabulate(n_obs, &cfg.alphas, &ok, cfg.weight, false));
        corrected.rows.extend(tabulate(n_obs, &cfg.alphas, &ok, cfg.weight, true));
        let all: Vec<f64> = ok.iter().flat_map(|o| o.ess.iter().flatten().copied()).collect();
        mean_ess.push(if all.is_empty() { f64::NAN } else { all.iter().sum::<f64>() / all.len() as f64 });
        n_sim.push(cfg.sim_size.resolve(n_obs));
    }
    Ok(EssStudy { raw, corrected, n_obs: cfg.n_obs.clone(), mean_ess, n_sim })
}

/// Test inversion over the configured grid for one observation set.
pub fn run_confset(cfg: &ExperimentConfig, observed: Vec<EmpiricalCounts>, workers: usize) -> Result<ConfidenceSet> {
    cfg.validate()?;
    let grid = cfg.grid.as_ref().ok_or_else(|| Error::Config("confset needs a grid".into()))?.points()?;
    let model = cfg.model.build()?;
    check_observed(model.as_ref(), &observed)?;
    let (model, observed) = prepare(model, observed, cfg.collapse_below)?;
    let stream = RngStream::new(cfg.seed, 0).for_purpose(EST_PURPOSE);
    let est = cfg.estimation_config();
    let pool = thread_pool(workers)?;
    pool.install(|| match cfg.estimation {
        EstimationMode::Mc => confidence_set(model.as_ref(), &observed, &grid, &cfg.alphas, &est, Estimator::MonteCarlo, stream),
        EstimationMode::Exact => confidence_set(model.as_ref(), &observed, &grid, &cfg.alphas, &est, Estimator::Exact, stream),
        EstimationMode::Bolfi => {
            let s = bolfi_run(model.as_ref(), &observed, &cfg.bo, &cfg.gp, cfg.weight, stream)?;
            confidence_set(model.as_ref(), &observed, &grid, &cfg.alphas, &est, Estimator::Surrogate(&s), stream)
        }
    })
}

/// CSV with columns `theta_1..theta_d, t_stat, accepted_<alpha>...`.
pub fn write_confset_csv<W: Write>(set: &ConfidenceSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = set.points.first().map_or(0, |p| p.theta.len());
    let mut header: Vec<String> = (1..=d).map(|i| format!("theta_{i}")).collect();
    header.push("t_stat".into());
    header.extend(set.alphas.iter().map(|a| format!("accepted_{a}")));
    w.write_record(&header)?;
    for p in &set.points {
        let mut rec: Vec<String> = p.theta.iter().map(|v| v.to_string()).collect();
        rec.push(p.t_stat.to_string());
        rec.extend(p.accepted.iter().map(|a| a.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Wraps a serializable payload with the schema version.
#[derive(Serialize)]
pub struct Report<'a, T: Serialize> {
    pub schema_version: u32,
    pub kind: &'a str,
    #[serde(flatten)]
    pub body: &'a T,
}

pub fn to_json_report<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Report { schema_version: SCHEMA_VERSION, kind, body })?)
}
