//! Entropies and φ-divergences between categorical distributions, in nats.
//!
//! Zero-mass terms are skipped, which realizes the `0·ln 0 = 0` and
//! `0·φ(0/0) = 0` conventions.

use serde::{Deserialize, Serialize};

use crate::categorical::{CategoricalPmf, EmpiricalCounts};
use crate::{Error, Result};

/// Mixing weight π of the mixture `M = πP + (1−π)Q`, strictly inside (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MixingWeight(f64);

impl MixingWeight {
    pub const HALF: MixingWeight = MixingWeight(0.5);

    pub fn new(pi: f64) -> Result<Self> {
        if pi > 0.0 && pi < 1.0 {
            Ok(Self(pi))
        } else {
            Err(Error::Argument(format!("mixing weight must lie in (0, 1), got {pi}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `π(1−π)`.
    pub fn product(self) -> f64 {
        self.0 * (1.0 - self.0)
    }

    /// Upper bound `B(π)` of the divergence.
    pub fn jsd_bound(self) -> f64 {
        binary_entropy(self.0)
    }
}

impl Default for MixingWeight {
    fn default() -> Self {
        Self::HALF
    }
}

impl<'de> Deserialize<'de> for MixingWeight {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        MixingWeight::new(f64::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Binary entropy `B(θ) = −θ ln θ − (1−θ) ln(1−θ)`.
pub fn binary_entropy(theta: f64) -> f64 {
    -xlnx(theta) - xlnx(1.0 - theta)
}

/// Shannon entropy over a raw probability slice.
pub(crate) fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().map(|&x| xlnx(x)).sum::<f64>()
}

pub fn entropy(p: &CategoricalPmf) -> f64 {
    entropy_of(p.probs())
}

fn check_same_k(p: &CategoricalPmf, q: &CategoricalPmf) {
    assert_eq!(p.k(), q.k(), "distributions must share the category count");
}

/// Kullback–Leibler divergence; `+∞` when `supp(p) ⊄ supp(q)`.
pub fn kl(p: &CategoricalPmf, q: &CategoricalPmf) -> f64 {
    check_same_k(p, q);
    kl_of(p.probs(), q.probs())
}

pub(crate) fn kl_of(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            total += pi * (pi / qi).ln();
        }
    }
    total.max(0.0)
}

/// Jensen–Shannon divergence via `H(M) − πH(p) − (1−π)H(q)`.
pub fn jsd(p: &CategoricalPmf, q: &CategoricalPmf, w: MixingWeight) -> f64 {
    check_same_k(p, q);
    jsd_of(p.probs(), q.probs(), w)
}

/// [`jsd`] on raw proportion slices.
pub fn jsd_of(p: &[f64], q: &[f64], w: MixingWeight) -> f64 {
    let pi = w.value();
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = pi * a + (1.0 - pi) * b;
        total += -xlnx(m) + pi * xlnx(a) + (1.0 - pi) * xlnx(b);
    }
    // Rounding can leave tiny negatives when p == q.
    total.clamp(0.0, w.jsd_bound())
}

/// Symmetric JSD between two Bernoulli proportions.
pub fn jsd_bernoulli(p_hat: f64, q_hat: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p_hat) && (0.0..=1.0).contains(&q_hat));
    let v = binary_entropy(0.5 * p_hat + 0.5 * q_hat) - 0.5 * binary_entropy(p_hat) - 0.5 * binary_entropy(q_hat);
    v.max(0.0)
}

/// Total variation distance `Σ|p_i − q_i|` (range [0, 2]).
pub fn tv(p: &CategoricalPmf, q: &CategoricalPmf) -> f64 {
    check_same_k(p, q);
    tv_of(p.probs(), q.probs())
}

pub(crate) fn tv_of(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// χ² divergence `Σ (p_i − q_i)² / q_i`; `q` must be interior.
pub fn chi2_divergence(p: &CategoricalPmf, q: &CategoricalPmf) -> Result<f64> {
    check_same_k(p, q);
    q.require_interior("reference distribution of the χ² divergence")?;
    Ok(p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b) * (a - b) / b).sum())
}

/// Pearson goodness-of-fit statistic of observed counts against `p`.
pub fn pearson_statistic(obs: &EmpiricalCounts, p: &CategoricalPmf) -> Result<f64> {
    assert_eq!(obs.k(), p.k(), "counts and pmf must share the category count");
    p.require_interior("hypothesized distribution")?;
    let n = obs.n() as f64;
    Ok(obs
        .counts()
        .iter()
        .zip(p.probs())
        .map(|(&c, &pi)| {
            let e = n * pi;
            (c as f64 - e) * (c as f64 - e) / e
        })
        .sum())
}

/// Neyman modified χ² of simulated counts against observed proportions.
pub fn neyman_statistic(sim: &EmpiricalCounts, obs_pmf: &CategoricalPmf) -> Result<f64> {
    assert_eq!(sim.k(), obs_pmf.k(), "counts and pmf must share the category count");
    obs_pmf.require_interior("observed proportions")?;
    let n = sim.n() as f64;
    Ok(sim
        .counts()
        .iter()
        .zip(obs_pmf.probs())
        .map(|(&c, &p)| {
            let e = n * p;
            (c as f64 - e) * (c as f64 - e) / e
        })
        .sum())
}

/// Divergences between a pair together with the analytic bounds that
/// dominate them. Bounds that need `V < 1/2` are `None` when inapplicable.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundSuite {
    pub tv: f64,
    pub entropy_gap: f64,
    /// `−V ln(V/k)` bound on `|H(p) − H(q)|`.
    pub entropy_gap_bound: Option<f64>,
    pub jsd: f64,
    /// `−π(1−π) ln(π(1−π)) V − 2π(1−π) V ln(V/k)` bound on the JSD.
    pub jsd_tv_bound: Option<f64>,
    pub kl: f64,
    /// Reverse Pinsker `V² / min_j q_j`; `None` unless `q` is interior.
    pub reverse_pinsker: Option<f64>,
}

/// `−x ln(x/k)` with the `x → 0` limit.
fn neg_x_ln_x_over_k(x: f64, k: f64) -> f64 {
    if x > 0.0 {
        -x * (x / k).ln()
    } else {
        0.0
    }
}

pub fn bound_suite(p: &CategoricalPmf, q: &CategoricalPmf, w: MixingWeight) -> BoundSuite {
    check_same_k(p, q);
    let v = tv(p, q);
    let k = p.k() as f64;
    let small = v < 0.5;
    let pp = w.product();
    BoundSuite {
        tv: v,
        entropy_gap: (entropy(p) - entropy(q)).abs(),
        entropy_gap_bound: small.then(|| neg_x_ln_x_over_k(v, k)),
        jsd: jsd(p, q, w),
        jsd_tv_bound: small.then(|| -pp * pp.ln() * v + 2.0 * pp * neg_x_ln_x_over_k(v, k)),
        kl: kl(p, q),
        reverse_pinsker: q.is_interior().then(|| v * v / q.min_prob()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    fn pmf(v: &[f64]) -> CategoricalPmf {
        CategoricalPmf::new(v.to_vec()).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&pmf(&[1.0, 0.0])), 0.0);
        assert_abs_diff_eq!(entropy(&pmf(&[0.5, 0.5])), LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(entropy(&pmf(&[0.75, 0.25])), 0.562335, epsilon = 1e-6);
    }

    #[test]
    fn kl_examples() {
        let p = pmf(&[0.3, 0.7]);
        assert_eq!(kl(&p, &p), 0.0);
        assert_abs_diff_eq!(kl(&pmf(&[0.5, 0.5]), &pmf(&[0.25, 0.75])), 0.143841, epsilon = 1e-6);
        assert_eq!(kl(&pmf(&[1.0, 0.0]), &pmf(&[0.0, 1.0])), f64::INFINITY);
    }

    #[test]
    fn jsd_examples() {
        let p = pmf(&[0.2, 0.3, 0.5]);
        assert_eq!(jsd(&p, &p, MixingWeight::HALF), 0.0);
        assert_abs_diff_eq!(jsd(&pmf(&[1.0, 0.0]), &pmf(&[0.0, 1.0]), MixingWeight::HALF), LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(jsd(&pmf(&[1.0, 0.0]), &pmf(&[0.5, 0.5]), MixingWeight::HALF), 0.215762, epsilon = 1e-6);
    }

    #[test]
    fn disjoint_support_reaches_binary_entropy_bound() {
        let w = MixingWeight::new(0.3).unwrap();
        let v = jsd(&pmf(&[0.4, 0.6, 0.0]), &pmf(&[0.0, 0.0, 1.0]), w);
        assert_abs_diff_eq!(v, binary_entropy(0.3), epsilon = 1e-15);
    }

    #[test]
    fn bernoulli_form() {
        assert_eq!(jsd_bernoulli(0.3, 0.3), 0.0);
        assert_abs_diff_eq!(jsd_bernoulli(1.0, 0.0), LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(jsd_bernoulli(1.0, 0.5), 0.215762, epsilon = 1e-6);
        let general = jsd(&pmf(&[0.9, 0.1]), &pmf(&[0.35, 0.65]), MixingWeight::HALF);
        assert_abs_diff_eq!(jsd_bernoulli(0.1, 0.65), general, epsilon = 1e-15);
    }

    #[test]
    fn tv_and_chi2_examples() {
        let p = pmf(&[0.6, 0.4]);
        assert_eq!(tv(&p, &p), 0.0);
        assert_eq!(tv(&pmf(&[1.0, 0.0]), &pmf(&[0.0, 1.0])), 2.0);
        assert_abs_diff_eq!(tv(&p, &pmf(&[0.5, 0.5])), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(chi2_divergence(&pmf(&[0.3, 0.7]), &pmf(&[0.5, 0.5])).unwrap(), 0.16, epsilon = 1e-15);
        assert_abs_diff_eq!(chi2_divergence(&pmf(&[1.0, 0.0]), &pmf(&[0.5, 0.5])).unwrap(), 1.0, epsilon = 1e-15);
        assert!(chi2_divergence(&p, &pmf(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn pearson_and_neyman_examples() {
        let uniform4 = CategoricalPmf::uniform(4).unwrap();
        let even = EmpiricalCounts::new(vec![25, 25, 25, 25]).unwrap();
        assert_eq!(pearson_statistic(&even, &uniform4).unwrap(), 0.0);
        let skew = EmpiricalCounts::new(vec![30, 20, 25, 25]).unwrap();
        assert_abs_diff_eq!(pearson_statistic(&skew, &uniform4).unwrap(), 2.0, epsilon = 1e-12);
        let lopsided = EmpiricalCounts::new(vec![10, 0]).unwrap();
        let half = pmf(&[0.5, 0.5]);
        assert_abs_diff_eq!(pearson_statistic(&lopsided, &half).unwrap(), 10.0, epsilon = 1e-12);
        assert!(pearson_statistic(&lopsided, &pmf(&[1.0, 0.0])).is_err());

        assert_eq!(neyman_statistic(&even, &uniform4).unwrap(), 0.0);
        assert_abs_diff_eq!(neyman_statistic(&skew, &uniform4).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(neyman_statistic(&lopsided, &half).unwrap(), 10.0, epsilon = 1e-12);
        assert!(neyman_statistic(&even, &pmf(&[0.5, 0.5, 0.0, 0.0])).is_err());
    }

    #[test]
    fn bound_suite_identical_pair() {
        let p = pmf(&[0.1, 0.2, 0.7]);
        let b = bound_suite(&p, &p, MixingWeight::HALF);
        assert_eq!(b.tv, 0.0);
        assert_eq!(b.entropy_gap_bound, Some(0.0));
        assert_eq!(b.jsd_tv_bound, Some(0.0));
        assert_eq!(b.reverse_pinsker, Some(0.0));
        assert_eq!((b.jsd, b.kl, b.entropy_gap), (0.0, 0.0, 0.0));
    }

    #[test]
    fn bound_suite_far_pair_marks_inapplicable() {
        let b = bound_suite(&pmf(&[0.9, 0.1]), &pmf(&[0.1, 0.9]), MixingWeight::HALF);
        assert!(b.entropy_gap_bound.is_none());
        assert!(b.jsd_tv_bound.is_none());
        assert!(b.kl <= b.reverse_pinsker.unwrap());
    }

    #[test]
    fn half_weight_bound_has_closed_form() {
        let (p, q) = (pmf(&[0.3, 0.3, 0.4]), pmf(&[0.25, 0.35, 0.4]));
        let b = bound_suite(&p, &q, MixingWeight::HALF);
        let v = b.tv;
        let expected = 0.5 * v * (LN_2 - (v / 3.0).ln());
        assert_abs_diff_eq!(b.jsd_tv_bound.unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn mixing_weight_validation() {
        assert!(MixingWeight::new(0.0).is_err());
        assert!(MixingWeight::new(1.0).is_err());
        assert_abs_diff_eq!(MixingWeight::HALF.jsd_bound(), LN_2, epsilon = 1e-15);
    }
}
