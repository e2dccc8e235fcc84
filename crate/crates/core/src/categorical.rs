//! Probability-simplex types, empirical summaries and sampling.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sums within this distance of one are renormalized; anything further off
/// is rejected.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A probability vector on the (k−1)-simplex, k ≥ 2.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoricalPmf {
    probs: Vec<f64>,
}

impl CategoricalPmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidPmf(format!(
                "need at least 2 categories, got {}",
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidPmf(format!("entry {bad} is not a finite non-negative number")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidPmf(format!("entries sum to {total}, not 1")));
        }
        let probs = if total == 1.0 { probs } else { probs.into_iter().map(|p| p / total).collect() };
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    /// Normalized exponential of `logits`.
    pub fn softmax(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidPmf("softmax logits must be finite".into()));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self::new(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    /// All entries strictly positive.
    pub fn is_interior(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn require_interior(&self, what: &str) -> Result<()> {
        if self.is_interior() {
            Ok(())
        } else {
            Err(Error::Domain(format!("{what} must have all entries > 0")))
        }
    }
}

impl<'de> Deserialize<'de> for CategoricalPmf {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(d)?;
        CategoricalPmf::new(probs).map_err(serde::de::Error::custom)
    }
}

/// Category counts of a sample of size `n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EmpiricalCounts {
    counts: Vec<u64>,
    n: u64,
}

impl EmpiricalCounts {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidCounts("need at least 2 categories".into()));
        }
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::InvalidCounts("total sample size must be at least 1".into()));
        }
        Ok(Self { counts, n })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    /// Relative frequencies `counts[i] / n`.
    pub fn proportions(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn to_pmf(&self) -> CategoricalPmf {
        CategoricalPmf { probs: self.proportions() }
    }

    /// Merges categories: category `i` is added into output slot `groups[i]`.
    pub fn merge(&self, groups: &[usize], k_out: usize) -> Result<Self> {
        if groups.len() != self.k() || groups.iter().any(|&g| g >= k_out) {
            return Err(Error::Argument("category grouping does not match counts".into()));
        }
        let mut out = vec![0u64; k_out];
        for (c, &g) in self.counts.iter().zip(groups) {
            out[g] += c;
        }
        Self::new(out)
    }
}

impl<'de> Deserialize<'de> for EmpiricalCounts {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Bare(Vec<u64>),
            Full { counts: Vec<u64> },
        }
        let counts = match Repr::deserialize(d)? {
            Repr::Bare(c) | Repr::Full { counts: c } => c,
        };
        EmpiricalCounts::new(counts).map_err(serde::de::Error::custom)
    }
}

/// A reproducible random stream identified by `(seed, stream)`.
///
/// The seed keys a ChaCha8 generator and the stream id selects one of its
/// 2^64 independent streams, so replicates can run in any order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Same stream id under a key derived from `purpose`; different purposes
    /// never share draws.
    pub fn for_purpose(&self, purpose: u64) -> Self {
        Self { seed: splitmix64(self.seed ^ splitmix64(purpose.wrapping_add(0x9e37_79b9))), stream: self.stream }
    }

    pub fn with_stream(&self, stream: u64) -> Self {
        Self { seed: self.seed, stream }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws a multinomial sample of size `n` by sequential conditional binomials.
pub fn multinomial_sample<R: Rng + ?Sized>(p: &CategoricalPmf, n: u64, rng: &mut R) -> EmpiricalCounts {
    assert!(n >= 1, "sample size must be at least 1");
    let probs = p.probs();
    let k = probs.len();
    let mut counts = vec![0u64; k];
    let mut remaining = n;
    let mut mass = 1.0f64;
    for i in 0..k - 1 {
        if remaining == 0 {
            break;
        }
        let q = if mass > 0.0 { (probs[i] / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q).expect("valid binomial parameters").sample(rng)
        };
        counts[i] = draw;
        remaining -= draw;
        mass -= probs[i];
    }
    counts[k - 1] += remaining;
    EmpiricalCounts { counts, n }
}

/// Samples `n` categories with probabilities `softmax(g)` by taking the argmax
/// of `g_i + Gumbel(0, 1)` noise; the normalizing constant is never formed.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(g: &[f64], n: u64, rng: &mut R) -> Result<EmpiricalCounts> {
    if g.len() < 2 {
        return Err(Error::Argument("need at least 2 logits".into()));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("logits must be finite".into()));
    }
    if n == 0 {
        return Err(Error::Argument("sample size must be at least 1".into()));
    }
    let mut counts = vec![0u64; g.len()];
    for _ in 0..n {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (i, gi) in g.iter().enumerate() {
            let u: f64 = rng.sample(Open01);
            let v = gi - (-u.ln()).ln();
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        counts[best] += 1;
    }
    Ok(EmpiricalCounts { counts, n })
}

/// Which central moment of a multinomial count vector `ξ ~ Mult(n, p)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentSpec {
    /// `E[(ξ_i − np_i)(ξ_j − np_j)]`; the variance when `i == j`.
    Cov(usize, usize),
    /// `E[(ξ_i − np_i)(ξ_j − np_j)²]`; the binomial third moment when `i == j`.
    Third(usize, usize),
    /// `E[(ξ_j − np_j)⁴]`.
    Fourth(usize),
    /// `E[(ξ_i − np_i)²(ξ_j − np_j)²]`, `i ≠ j`.
    Mixed4(usize, usize),
}

/// Closed-form multinomial central moments.
pub fn multinomial_central_moment(p: &CategoricalPmf, n: u64, spec: MomentSpec) -> Result<f64> {
    let k = p.k();
    let check = |i: usize| {
        if i < k {
            Ok(p.probs()[i])
        } else {
            Err(Error::Argument(format!("category index {i} out of range for k = {k}")))
        }
    };
    if n == 0 {
        return Err(Error::Argument("sample size must be at least 1".into()));
    }
    let nf = n as f64;
    let value = match spec {
        MomentSpec::Cov(i, j) => {
            let (pi, pj) = (check(i)?, check(j)?);
            if i == j {
                nf * pi * (1.0 - pi)
            } else {
                -nf * pi * pj
            }
        }
        MomentSpec::Third(i, j) => {
            let (pi, pj) = (check(i)?, check(j)?);
            if i == j {
                nf * pi * (1.0 - pi) * (1.0 - 2.0 * pi)
            } else {
                nf * pi * pj * (2.0 * pj - 1.0)
            }
        }
        MomentSpec::Fourth(j) => {
            let pj = check(j)?;
            let s2 = pj * (1.0 - pj);
            nf * s2 * (1.0 + 3.0 * s2 * (nf - 2.0))
        }
        MomentSpec::Mixed4(i, j) => {
            let (pi, pj) = (check(i)?, check(j)?);
            if i == j {
                return Err(Error::Argument("mixed fourth moment needs i != j; use Fourth".into()));
            }
            3.0 * nf * (nf - 2.0) * pi * pi * pj * pj
                + nf * (nf - 2.0) * pi * pj * (1.0 - (pi + pj))
                + nf * pi * pj
        }
    };
    Ok(value)
}
