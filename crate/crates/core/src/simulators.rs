//! Simulator models producing categorical counts at one or more epochs.
//!
//! A model is anything implementing [`SimulatorModel`]. [`ModelSpec`] is the
//! JSON form, `{"model": "<name>", "params": {...}}`:
//!
//! | model           | params                                                        |
//! |-----------------|---------------------------------------------------------------|
//! | `softmax_decay` | `k` (default 5), `bounds` (default `[[-1, 1]]`)                |
//! | `log_linear`    | `saturated` (default false), `bounds` (default `[-1, 1]` each) |
//! | `bernoulli`     | none                                                          |
//! | `nfds_lite`     | see [`NfdsParams`]                                             |

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::categorical::{multinomial_sample, CategoricalPmf, EmpiricalCounts, RngStream};
use crate::{Error, Result};

/// A stochastic simulator with categorical output.
pub trait SimulatorModel: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Closed interval per parameter dimension.
    fn bounds(&self) -> Vec<(f64, f64)>;

    fn epochs(&self) -> usize {
        1
    }

    fn k(&self) -> usize;

    /// One `EmpiricalCounts` per epoch, each with total `n`.
    fn simulate(&self, theta: &[f64], n: u64, rng: &mut ChaCha8Rng) -> Result<Vec<EmpiricalCounts>>;

    /// Exact category probabilities per epoch, for models with a tractable
    /// likelihood.
    fn true_pmf(&self, _theta: &[f64]) -> Result<Vec<CategoricalPmf>> {
        Err(Error::Unsupported(format!("model '{}' has no tractable likelihood", self.name())))
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let bounds = self.bounds();
        if theta.len() != bounds.len() {
            return Err(Error::Domain(format!(
                "parameter has {} components, model '{}' expects {}",
                theta.len(),
                self.name(),
                bounds.len()
            )));
        }
        for (i, (&t, &(lo, hi))) in theta.iter().zip(&bounds).enumerate() {
            if !(lo..=hi).contains(&t) {
                return Err(Error::Domain(format!("theta[{i}] = {t} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Runs `model` with a generator built from `stream`.
pub fn simulate(model: &dyn SimulatorModel, theta: &[f64], n: u64, stream: RngStream) -> Result<Vec<EmpiricalCounts>> {
    model.simulate(theta, n, &mut stream.rng())
}

fn require_n(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("sample size must be at least 1".into()));
    }
    Ok(())
}

fn check_bounds(bounds: &[(f64, f64)], dim: usize) -> Result<()> {
    if bounds.len() != dim {
        return Err(Error::Config(format!("expected {dim} bound pairs, got {}", bounds.len())));
    }
    if bounds.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
        return Err(Error::Config("each bound must be a finite interval with lo < hi".into()));
    }
    Ok(())
}

/// `p_i(θ) ∝ exp(−θ(i−1))`, `i = 1..k`.
#[derive(Clone, Debug)]
pub struct SoftmaxDecay {
    k: usize,
    bounds: (f64, f64),
}

impl SoftmaxDecay {
    pub fn new(k: usize) -> Result<Self> {
        Self::with_bounds(k, (-1.0, 1.0))
    }

    pub fn with_bounds(k: usize, bounds: (f64, f64)) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config("softmax_decay needs k >= 2".into()));
        }
        check_bounds(&[bounds], 1)?;
        Ok(Self { k, bounds })
    }

    pub fn pmf(&self, theta: f64) -> CategoricalPmf {
        let logits: Vec<f64> = (0..self.k).map(|i| -theta * i as f64).collect();
        CategoricalPmf::softmax(&logits).expect("finite logits")
    }
}

impl SimulatorModel for SoftmaxDecay {
    fn name(&self) -> &str {
        "softmax_decay"
    }

    fn dim(&self) -> usize {
        1
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![self.bounds]
    }

    fn k(&self) -> usize {
        self.k
    }

    fn simulate(&self, theta: &[f64], n: u64, rng: &mut ChaCha8Rng) -> Result<Vec<EmpiricalCounts>> {
        self.check_theta(theta)?;
        require_n(n)?;
        Ok(vec![multinomial_sample(&self.pmf(theta[0]), n, rng)])
    }

    fn true_pmf(&self, theta: &[f64]) -> Result<Vec<CategoricalPmf>> {
        self.check_theta(theta)?;
        Ok(vec![self.pmf(theta[0])])
    }
}

/// Effect coding of the 2×2 table: cells (X, Y) = (1,1), (1,−1), (−1,1), (−1,−1).
pub const EFFECT_X: [f64; 4] = [1.0, 1.0, -1.0, -1.0];
pub const EFFECT_Y: [f64; 4] = [1.0, -1.0, 1.0, -1.0];

/// Log-linear model for a 2×2 table. θ = (λ^X, λ^Y) or, when saturated,
/// (λ^X, λ^Y, λ^{XY}); the intercept is absorbed by normalization.
#[derive(Clone, Debug)]
pub struct LogLinear {
    saturated: bool,
    bounds: Vec<(f64, f64)>,
}

impl LogLinear {
    pub fn new(saturated: bool) -> Self {
        let dim = if saturated { 3 } else { 2 };
        Self { saturated, bounds: vec![(-1.0, 1.0); dim] }
    }

    pub fn with_bounds(saturated: bool, bounds: Vec<(f64, f64)>) -> Result<Self> {
        check_bounds(&bounds, if saturated { 3 } else { 2 })?;
        Ok(Self { saturated, bounds })
    }

    pub fn pmf(&self, theta: &[f64]) -> CategoricalPmf {
        let lxy = if self.saturated { theta[2] } else { 0.0 };
        let logits: Vec<f64> =
            (0..4).map(|i| EFFECT_X[i] * theta[0] + EFFECT_Y[i] * theta[1] + EFFECT_X[i] * EFFECT_Y[i] * lxy).collect();
        CategoricalPmf::softmax(&logits).expect("finite logits")
    }
}

impl SimulatorModel for LogLinear {
    fn name(&self) -> &str {
        if self.saturated {
            "log_linear_saturated"
        } else {
            "log_linear"
        }
    }

    fn dim(&self) -> usize {
        self.bounds.len()
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        self.bounds.clone()
    }

    fn k(&self) -> usize {
        4
    }

    fn simulate(&self, theta: &[f64], n: u64, rng: &mut ChaCha8Rng) -> Result<Vec<EmpiricalCounts>> {
        self.check_theta(theta)?;
        require_n(n)?;
        Ok(vec![multinomial_sample(&self.pmf(theta), n, rng)])
    }

    fn true_pmf(&self, theta: &[f64]) -> Result<Vec<CategoricalPmf>> {
        self.check_theta(theta)?;
        Ok(vec![self.pmf(theta)])
    }
}

/// Zeros and ones with `P(1) = θ`; categories are ordered (0, 1).
#[derive(Clone, Copy, Debug, Default)]
pub struct Bernoulli;

impl SimulatorModel for Bernoulli {
    fn name(&self) -> &str {
        "bernoulli"
    }

    fn dim(&self) -> usize {
        1
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0)]
    }

    fn k(&self) -> usize {
        2
    }

    fn simulate(&self, theta: &[f64], n: u64, rng: &mut ChaCha8Rng) -> Result<Vec<EmpiricalCounts>> {
        let p = self.true_pmf(theta)?;
        require_n(n)?;
        Ok(vec![multinomial_sample(&p[0], n, rng)])
    }

    fn true_pmf(&self, theta: &[f64]) -> Result<Vec<CategoricalPmf>> {
        self.check_theta(theta)?;
        Ok(vec![CategoricalPmf::new(vec![1.0 - theta[0], theta[0]])?])
    }
}

/// Configuration of the synthetic multilocus NFDS population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NfdsParams {
    /// Carrying capacity.
    pub kappa: f64,
    /// Binary loci per genotype.
    pub loci: usize,
    /// Clusters present at t = 0.
    pub clusters: usize,
    /// Clusters that only enter through migration.
    pub novel_clusters: usize,
    /// Share of vaccine-type individuals at t = 0.
    pub vaccine_fraction: f64,
    /// Share of the migration pool made of novel-cluster genotypes.
    pub novel_share: f64,
    /// Generations at which the population is sampled.
    pub epochs: Vec<u32>,
    /// Seed of the population template (not of the simulation).
    pub template_seed: u64,
    /// Bounds on (ln m, ln v, ln σ_f).
    pub bounds: Vec<(f64, f64)>,
}

impl Default for NfdsParams {
    fn default() -> Self {
        Self {
            kappa: 1e5,
            loci: 5,
            clusters: 40,
            novel_clusters: 10,
            vaccine_fraction: 0.35,
            novel_share: 0.1,
            epochs: vec![36, 72],
            template_seed: 20_160_601,
            bounds: vec![(-7.0, -1.6), (-7.0, -0.7), (-7.0, -1.6)],
        }
    }
}

/// Collapsed output categories of [`NfdsLite`].
pub const NFDS_CATEGORIES: [&str; 4] = ["vt", "nvt_only_cluster", "nvt_mixed_cluster", "nvt_novel"];

#[derive(Clone, Debug)]
struct Genotype {
    vaccine: bool,
    loci: Vec<bool>,
    category: usize,
}

/// Multilocus negative frequency-dependent selection with vaccination and
/// migration, tracked as counts per genotype.
///
/// Each generation genotype `g` with `c_g` individuals leaves
/// `Poisson(c_g (κ/N_t)(1−m)(1−v_g)(1+σ_f)^{π_g})` offspring, where `v_g = v`
/// for vaccine types and 0 otherwise, plus `Poisson(κm)` migrants drawn from a
/// fixed pool. `π_g ∈ [0, 1]` rewards genotypes carrying alleles that are
/// currently below their t = 0 frequency:
/// `π_g = (1 + (1/L) Σ_l (e_l − f_{l,t})(2g_l − 1)) / 2`.
///
/// θ = (ln m, ln v, ln σ_f). Sampling at each epoch is without replacement
/// when `n ≤ N_t`.
#[derive(Clone, Debug)]
pub struct NfdsLite {
    params: NfdsParams,
    genotypes: Vec<Genotype>,
    initial: Vec<u64>,
    pool: CategoricalPmf,
    equilibrium: Vec<f64>,
}

impl NfdsLite {
    pub fn new(params: NfdsParams) -> Result<Self> {
        if !(params.kappa >= 10.0 && params.kappa.is_finite()) {
            return Err(Error::Config("kappa must be at least 10".into()));
        }
        if params.loci == 0 || params.clusters < 2 {
            return Err(Error::Config("need at least one locus and two clusters".into()));
        }
        if !(0.0..1.0).contains(&params.vaccine_fraction) || !(0.0..1.0).contains(&params.novel_share) {
            return Err(Error::Config("vaccine_fraction and novel_share must lie in [0, 1)".into()));
        }
        if params.novel_clusters == 0 && params.novel_share > 0.0 {
            return Err(Error::Config("novel_share > 0 needs novel_clusters > 0".into()));
        }
        if params.epochs.is_empty() || params.epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("epochs must be a non-empty increasing list".into()));
        }
        check_bounds(&params.bounds, 3)?;

        let mut rng = RngStream::new(params.template_seed, 0).rng();
        let mut genotypes = Vec::new();
        let mut weights = Vec::new();
        // cluster kinds: 0 vaccine only, 1 non-vaccine only, 2 mixed
        let cluster_kind = |rng: &mut ChaCha8Rng| match rng.random::<f64>() {
            u if u < 0.3 => 0,
            u if u < 0.7 => 1,
            _ => 2,
        };
        for _ in 0..params.clusters {
            let base: Vec<bool> = (0..params.loci).map(|_| rng.random::<f64>() < 0.5).collect();
            let kind = cluster_kind(&mut rng);
            if kind != 1 {
                genotypes.push(Genotype { vaccine: true, loci: base.clone(), category: 0 });
                weights.push(rng.random_range(0.5..2.0));
            }
            if kind != 0 {
                let mut loci = base;
                if kind == 2 {
                    let flip = rng.random_range(0..params.loci);
                    loci[flip] = !loci[flip];
                }
                genotypes.push(Genotype { vaccine: false, loci, category: if kind == 1 { 1 } else { 2 } });
                weights.push(rng.random_range(0.5..2.0));
            }
        }
        let (vt_total, nvt_total) = genotypes.iter().zip(&weights).fold((0.0, 0.0), |(a, b), (g, &w)| {
            if g.vaccine {
                (a + w, b)
            } else {
                (a, b + w)
            }
        });
        if vt_total == 0.0 || nvt_total == 0.0 {
            return Err(Error::Config("template produced no vaccine or no non-vaccine genotypes; change template_seed".into()));
        }
        let resident = genotypes.len();
        let initial_freq: Vec<f64> = genotypes
            .iter()
            .zip(&weights)
            .map(|(g, &w)| {
                if g.vaccine {
                    params.vaccine_fraction * w / vt_total
                } else {
                    (1.0 - params.vaccine_fraction) * w / nvt_total
                }
            })
            .collect();
        for _ in 0..params.novel_clusters {
            let loci = (0..params.loci).map(|_| rng.random::<f64>() < 0.5).collect();
            genotypes.push(Genotype { vaccine: false, loci, category: 3 });
        }
        let mut pool: Vec<f64> = initial_freq.iter().map(|f| f * (1.0 - params.novel_share)).collect();
        for _ in 0..params.novel_clusters {
            pool.push(params.novel_share / params.novel_clusters as f64);
        }
        let pool = CategoricalPmf::new(pool)?;

        let mut initial: Vec<u64> = initial_freq.iter().map(|f| (f * params.kappa).round() as u64).collect();
        initial.resize(genotypes.len(), 0);
        debug_assert_eq!(resident + params.novel_clusters, genotypes.len());
        let equilibrium = allele_frequencies(&genotypes, &initial, params.loci);
        Ok(Self { params, genotypes, initial, pool, equilibrium })
    }

    pub fn params(&self) -> &NfdsParams {
        &self.params
    }

    /// Population sizes per collapsed category at every epoch.
    pub fn evolve(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<[u64; 4]>> {
        self.check_theta(theta)?;
        let m = theta[0].exp();
        let v = theta[1].exp();
        let sigma = theta[2].exp();
        let kappa = self.params.kappa;
        let loci = self.params.loci;
        let mut counts = self.initial.clone();
        let mut out = Vec::with_capacity(self.params.epochs.len());
        let mut next_epoch = 0;
        let last = *self.params.epochs.last().expect("validated non-empty");
        for t in 1..=last {
            let total: u64 = counts.iter().sum();
            let freq = allele_frequencies(&self.genotypes, &counts, loci);
            let scale = if total > 0 { kappa / total as f64 * (1.0 - m) } else { 0.0 };
            for (g, c) in self.genotypes.iter().zip(counts.iter_mut()) {
                if *c == 0 {
                    continue;
                }
                let dev: f64 = g
                    .loci
                    .iter()
                    .zip(self.equilibrium.iter().zip(&freq))
                    .map(|(&a, (&e, &f))| (e - f) * if a { 1.0 } else { -1.0 })
                    .sum::<f64>()
                    / loci as f64;
                let exponent = 0.5 * (1.0 + dev);
                let vacc = if g.vaccine { 1.0 - v } else { 1.0 };
                let mean = *c as f64 * scale * vacc * (1.0 + sigma).powf(exponent);
                *c = poisson(mean, rng);
            }
            let migrants = poisson(kappa * m, rng);
            if migrants > 0 {
                let arrivals = multinomial_sample(&self.pool, migrants, rng);
                for (c, a) in counts.iter_mut().zip(arrivals.counts()) {
                    *c += a;
                }
            }
            if t == self.params.epochs[next_epoch] {
                let mut cat = [0u64; 4];
                for (g, &c) in self.genotypes.iter().zip(&counts) {
                    cat[g.category] += c;
                }
                out.push(cat);
                next_epoch += 1;
            }
        }
        Ok(out)
    }
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

fn allele_frequencies(genotypes: &[Genotype], counts: &[u64], loci: usize) -> Vec<f64> {
    let mut f = vec![0.0; loci];
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return f;
    }
    for (g, &c) in genotypes.iter().zip(counts) {
        if c > 0 {
            for (fl, &a) in f.iter_mut().zip(&g.loci) {
                if a {
                    *fl += c as f64;
                }
            }
        }
    }
    f.iter_mut().for_each(|x| *x /= total as f64);
    f
}

/// Multivariate hypergeometric draw of `n` items from category sizes `sizes`,
/// one item at a time.
fn sample_without_replacement(sizes: &[u64], n: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut left = sizes.to_vec();
    let mut total: u64 = sizes.iter().sum();
    let mut out = vec![0u64; sizes.len()];
    for _ in 0..n {
        let mut u = rng.random_range(0..total);
        let c = left
            .iter()
            .position(|&s| {
                if u < s {
                    true
                } else {
                    u -= s;
                    false
                }
            })
            .expect("draw below the remaining total");
        left[c] -= 1;
        out[c] += 1;
        total -= 1;
    }
    out
}

impl SimulatorModel for NfdsLite {
    fn name(&self) -> &str {
        "nfds_lite"
    }

    fn dim(&self) -> usize {
        3
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        self.params.bounds.clone()
    }

    fn epochs(&self) -> usize {
        self.params.epochs.len()
    }

    fn k(&self) -> usize {
        4
    }

    fn simulate(&self, theta: &[f64], n: u64, rng: &mut ChaCha8Rng) -> Result<Vec<EmpiricalCounts>> {
        require_n(n)?;
        let sizes = self.evolve(theta, rng)?;
        sizes
            .iter()
            .map(|cat| {
                let total: u64 = cat.iter().sum();
                if total == 0 {
                    return Err(Error::Numerical("population went extinct".into()));
                }
                let counts = if n <= total {
                    sample_without_replacement(cat, n, rng)
                } else {
                    let p = CategoricalPmf::new(cat.iter().map(|&c| c as f64 / total as f64).collect())?;
                    multinomial_sample(&p, n, rng).counts().to_vec()
                };
                EmpiricalCounts::new(counts)
            })
            .collect()
    }
}

fn default_softmax_k() -> usize {
    5
}

/// JSON description of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "snake_case")]
pub enum ModelSpec {
    SoftmaxDecay {
        #[serde(default = "default_softmax_k")]
        k: usize,
        #[serde(default)]
        bounds: Option<(f64, f64)>,
    },
    LogLinear {
        #[serde(default)]
        saturated: bool,
        #[serde(default)]
        bounds: Option<Vec<(f64, f64)>>,
    },
    Bernoulli {},
    NfdsLite(#[serde(default)] NfdsParams),
}

impl ModelSpec {
    pub fn build(&self) -> Result<Arc<dyn SimulatorModel>> {
        Ok(match self {
            ModelSpec::SoftmaxDecay { k, bounds } => Arc::new(SoftmaxDecay::with_bounds(*k, bounds.unwrap_or((-1.0, 1.0)))?),
            ModelSpec::LogLinear { saturated, bounds: None } => Arc::new(LogLinear::new(*saturated)),
            ModelSpec::LogLinear { saturated, bounds: Some(b) } => Arc::new(LogLinear::with_bounds(*saturated, b.clone())?),
            ModelSpec::Bernoulli {} => Arc::new(Bernoulli),
            ModelSpec::NfdsLite(p) => Arc::new(NfdsLite::new(p.clone())?),
        })
    }
}
