//! Moments of the simulator-based JSD statistic `JSD(p̂, Q̂)` where
//! `nQ̂ ~ Mult(n, p_θ)` and `p̂` is held fixed.
//!
//! The exact expectation reduces to `k` one-dimensional Bernstein sums
//! because the divergence is a sum of per-category terms and each simulated
//! count is marginally binomial. The remaining quantities are second-order
//! Taylor expansions in `q` around `p_θ`.

use serde::Serialize;

use crate::categorical::CategoricalPmf;
use crate::divergence::{jsd, MixingWeight};
use crate::special::binomial_pmf;
use crate::{Error, Result};

/// Bernstein operator `Be_n(u, x) = Σ_r u(r/n) · C(n,r) x^r (1−x)^(n−r)`.
pub fn bernstein_operator<F: Fn(f64) -> f64>(u: F, n: u64, x: f64) -> f64 {
    assert!(n >= 1, "Bernstein degree must be at least 1");
    assert!((0.0..=1.0).contains(&x), "Bernstein argument must lie in [0, 1]");
    let nf = n as f64;
    (0..=n).map(|r| u(r as f64 / nf) * binomial_pmf(r, n, x)).sum()
}

fn check_pair(p_hat: &CategoricalPmf, p_theta: &CategoricalPmf) -> Result<()> {
    if p_hat.k() != p_theta.k() {
        return Err(Error::Argument(format!(
            "observed and model distributions differ in size ({} vs {})",
            p_hat.k(),
            p_theta.k()
        )));
    }
    Ok(())
}

/// Exact `E[JSD(p̂, Q̂)]` for simulated sample size `n`, as a sum of
/// Bernstein operators evaluated at each `p_i(θ)`. Cost is `O(k·n)`.
pub fn exact_expected_jsd(
    p_hat: &CategoricalPmf,
    p_theta: &CategoricalPmf,
    n: u64,
    w: MixingWeight,
) -> Result<f64> {
    check_pair(p_hat, p_theta)?;
    p_theta.require_interior("model distribution")?;
    if n == 0 {
        return Err(Error::Argument("simulated sample size must be at least 1".into()));
    }
    let pi = w.value();
    let nf = n as f64;
    let mut total = 0.0;
    for (&ph, &pt) in p_hat.probs().iter().zip(p_theta.probs()) {
        // u1(x) = ln(ph / (π ph + (1−π) x)), weighted by π ph
        // u2(x) = x ln(x / (π ph + (1−π) x)), weighted by (1−π)
        let mut first = 0.0;
        let mut second = 0.0;
        for r in 0..=n {
            let b = binomial_pmf(r, n, pt);
            if b == 0.0 {
                continue;
            }
            let x = r as f64 / nf;
            let mix = pi * ph + (1.0 - pi) * x;
            if ph > 0.0 {
                first += b * (ph / mix).ln();
            }
            if x > 0.0 {
                second += b * x * (x / mix).ln();
            }
        }
        total += pi * ph * first + (1.0 - pi) * second;
    }
    Ok(total.max(0.0))
}

/// Second-order bias coefficient
/// `V_F = (1−π)[(k−1) − (1−π) Σ p_i(θ)(1−p_i(θ)) / (π p̂_i + (1−π) p_i(θ))]`.
pub fn vf_remainder(p_theta: &CategoricalPmf, p_hat: &CategoricalPmf, w: MixingWeight) -> f64 {
    assert_eq!(p_theta.k(), p_hat.k(), "distributions must share the category count");
    let pi = w.value();
    let k = p_theta.k() as f64;
    let sum: f64 = p_theta
        .probs()
        .iter()
        .zip(p_hat.probs())
        .filter_map(|(&pt, &ph)| {
            let m = pi * ph + (1.0 - pi) * pt;
            (m > 0.0).then(|| pt * (1.0 - pt) / m)
        })
        .sum();
    (1.0 - pi) * ((k - 1.0) - (1.0 - pi) * sum)
}

/// `JSD(p̂, p_θ) + V_F / (2n)`; the `o(1/n)` remainder is dropped.
pub fn voronovskaya_expected_jsd(
    p_hat: &CategoricalPmf,
    p_theta: &CategoricalPmf,
    n: u64,
    w: MixingWeight,
) -> Result<f64> {
    check_pair(p_hat, p_theta)?;
    p_theta.require_interior("model distribution")?;
    if n == 0 {
        return Err(Error::Argument("simulated sample size must be at least 1".into()));
    }
    Ok(jsd(p_hat, p_theta, w) + vf_remainder(p_theta, p_hat, w) / (2.0 * n as f64))
}

/// First and (diagonal) second partial derivatives of `q ↦ JSD(p̂, q)`.
/// Mixed partials vanish identically.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JsdPartials {
    /// `(1−π) ln(q_j / m_j)`.
    pub gradient: Vec<f64>,
    /// `(p̂_j / q_j) π(1−π) / m_j`.
    pub curvature: Vec<f64>,
}

pub fn jsd_partials(p_hat: &CategoricalPmf, q: &CategoricalPmf, w: MixingWeight) -> Result<JsdPartials> {
    check_pair(p_hat, q)?;
    q.require_interior("differentiation point")?;
    let pi = w.value();
    let (gradient, curvature) = p_hat
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&ph, &qj)| {
            let m = pi * ph + (1.0 - pi) * qj;
            ((1.0 - pi) * (qj / m).ln(), ph / qj * w.product() / m)
        })
        .unzip();
    Ok(JsdPartials { gradient, curvature })
}

/// The seven terms of the second-order MSE expansion.
///
/// With `m_i = π p̂_i + (1−π) p_i`, `l_i = ln(p_i/m_i)`, `r_i = p̂_i/m_i`,
/// `s_i = p_i(1−p_i)`:
///
/// 1. `(1−π)²/n Σ l_j² s_j`
/// 2. `−2(1−π)²/n Σ_{i<j} l_i p_i l_j p_j`
/// 3. `(1−π)²π/n² Σ_{i,j} l_i r_j c_ij` with `c_ij = p_i(2p_j−1)` off the
///    diagonal and `(1−p_j)(1−2p_j)` on it
/// 4. `(π(1−π))²/(4n³) Σ (r_j/p_j)² s_j (1 + 3 s_j (n−2))`
/// 5. `3(n−2)(π(1−π))²/(2n³) Σ_{i<j} r_i p_i r_j p_j`
/// 6. `(n−2)(π(1−π))²/(2n³) Σ_{i<j} r_i r_j (1 − p_i − p_j)`
/// 7. `(π(1−π))²/(2n³) Σ_{i<j} r_i r_j`
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MseTerms {
    pub terms: [f64; 7],
}

impl MseTerms {
    pub fn total(&self) -> f64 {
        self.terms.iter().sum()
    }
}

fn require_taylor_inputs(p_hat: &CategoricalPmf, p_theta: &CategoricalPmf, n: u64) -> Result<()> {
    check_pair(p_hat, p_theta)?;
    p_theta.require_interior("model distribution")?;
    p_hat.require_interior("observed distribution (collapse empty categories first)")?;
    if n == 0 {
        return Err(Error::Argument("simulated sample size must be at least 1".into()));
    }
    Ok(())
}

pub fn mse_terms(p_hat: &CategoricalPmf, p_theta: &CategoricalPmf, n: u64, w: MixingWeight) -> Result<MseTerms> {
    require_taylor_inputs(p_hat, p_theta, n)?;
    let pi = w.value();
    let pp2 = w.product() * w.product();
    let a2 = (1.0 - pi) * (1.0 - pi);
    let nf = n as f64;
    let p = p_theta.probs();
    let k = p.len();
    let m: Vec<f64> = p_hat.probs().iter().zip(p).map(|(&ph, &pt)| pi * ph + (1.0 - pi) * pt).collect();
    let l: Vec<f64> = p.iter().zip(&m).map(|(&pt, &mj)| (pt / mj).ln()).collect();
    let r: Vec<f64> = p_hat.probs().iter().zip(&m).map(|(&ph, &mj)| ph / mj).collect();
    let s: Vec<f64> = p.iter().map(|&pt| pt * (1.0 - pt)).collect();

    let mut t = [0.0; 7];
    for j in 0..k {
        t[0] += l[j] * l[j] * s[j];
        let rp = r[j] / p[j];
        t[3] += rp * rp * s[j] * (1.0 + 3.0 * s[j] * (nf - 2.0));
    }
    for i in 0..k {
        for j in 0..k {
            let c = if i == j { (1.0 - p[j]) * (1.0 - 2.0 * p[j]) } else { p[i] * (2.0 * p[j] - 1.0) };
            t[2] += l[i] * r[j] * c;
        }
        for j in (i + 1)..k {
            t[1] += l[i] * p[i] * l[j] * p[j];
            t[4] += r[i] * p[i] * r[j] * p[j];
            t[5] += r[i] * r[j] * (1.0 - p[i] - p[j]);
            t[6] += r[i] * r[j];
        }
    }
    let n3 = nf * nf * nf;
    t[0] *= a2 / nf;
    t[1] *= -2.0 * a2 / nf;
    t[2] *= a2 * pi / (nf * nf);
    t[3] *= pp2 / (4.0 * n3);
    t[4] *= 3.0 * (nf - 2.0) * pp2 / (2.0 * n3);
    t[5] *= (nf - 2.0) * pp2 / (2.0 * n3);
    t[6] *= pp2 / (2.0 * n3);
    Ok(MseTerms { terms: t })
}

/// Second-order approximation of `E[(JSD(p̂, Q̂) − JSD(p̂, p_θ))²]`.
pub fn mse_taylor(p_hat: &CategoricalPmf, p_theta: &CategoricalPmf, n: u64, w: MixingWeight) -> Result<f64> {
    Ok(mse_terms(p_hat, p_theta, n, w)?.total())
}

/// `Var[JSD(p̂, Q̂)] ≈ MSE − (V_F / 2n)²`, dropping the `o(1/n)` term.
pub fn variance_taylor(p_hat: &CategoricalPmf, p_theta: &CategoricalPmf, n: u64, w: MixingWeight) -> Result<f64> {
    let mse = mse_taylor(p_hat, p_theta, n, w)?;
    let bias = vf_remainder(p_theta, p_hat, w) / (2.0 * n as f64);
    Ok(mse - bias * bias)
}

/// Tail bound `2k · exp(−2nε² / (K_u² k³))` on
/// `P(|JSD(p̂, Q̂) − JSD(p̂, p_θ)| ≥ ε)`.
pub fn concentration_bound(epsilon: f64, n: u64, k: usize, k_u: f64) -> f64 {
    assert!(epsilon > 0.0 && k_u > 0.0 && k >= 1, "concentration bound needs positive arguments");
    let k = k as f64;
    2.0 * k * (-2.0 * n as f64 * epsilon * epsilon / (k_u * k_u * k * k * k)).exp()
}

/// Grid-max estimate of the constant `K_u = (1−π)(K_1 + π K_2)` where
/// `K_1 = max |ln(p_j/m_j)|` and `K_2 = max p̂_j/(p_j m_j)` over the model
/// distributions in `grid` and all categories.
pub fn concentration_constant(p_hat: &CategoricalPmf, grid: &[CategoricalPmf], w: MixingWeight) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Argument("need at least one model distribution".into()));
    }
    let pi = w.value();
    let (mut k1, mut k2) = (0.0f64, 0.0f64);
    for p_theta in grid {
        check_pair(p_hat, p_theta)?;
        p_theta.require_interior("model distribution")?;
        for (&ph, &pt) in p_hat.probs().iter().zip(p_theta.probs()) {
            let m = pi * ph + (1.0 - pi) * pt;
            k1 = k1.max((pt / m).ln().abs());
            k2 = k2.max(ph / (pt * m));
        }
    }
    Ok((1.0 - pi) * (k1 + pi * k2))
}

/// Summary of the statistic's moments at one `(p̂, p_θ, n)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    pub n: u64,
    pub jsd: f64,
    pub exact_expectation: f64,
    pub voronovskaya_expectation: f64,
    pub vf_remainder: f64,
    pub mse: f64,
    pub variance: f64,
}

pub fn moment_report(p_hat: &CategoricalPmf, p_theta: &CategoricalPmf, n: u64, w: MixingWeight) -> Result<MomentReport> {
    let mse = mse_taylor(p_hat, p_theta, n, w)?;
    let vf = vf_remainder(p_theta, p_hat, w);
    let bias = vf / (2.0 * n as f64);
    Ok(MomentReport {
        n,
        jsd: jsd(p_hat, p_theta, w),
        exact_expectation: exact_expected_jsd(p_hat, p_theta, n, w)?,
        voronovskaya_expectation: voronovskaya_expected_jsd(p_hat, p_theta, n, w)?,
        vf_remainder: vf,
        mse,
        variance: mse - bias * bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::jsd_bernoulli;
    use approx::assert_abs_diff_eq;

    fn pmf(v: &[f64]) -> CategoricalPmf {
        CategoricalPmf::new(v.to_vec()).unwrap()
    }

    #[test]
    fn bernstein_examples() {
        assert_abs_diff_eq!(bernstein_operator(|t| t, 7, 0.3), 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(bernstein_operator(|t| t * t, 2, 0.5), 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(bernstein_operator(|_| 2.5, 11, 0.8), 2.5, epsilon = 1e-13);
    }

    #[test]
    fn exact_expectation_single_draw() {
        let half = pmf(&[0.5, 0.5]);
        let got = exact_expected_jsd(&half, &half, 1, MixingWeight::HALF).unwrap();
        // one draw lands on either vertex with probability 1/2
        let want = 0.5 * jsd_bernoulli(0.5, 0.0) + 0.5 * jsd_bernoulli(0.5, 1.0);
        assert_abs_diff_eq!(got, want, epsilon = 1e-15);
    }

    #[test]
    fn exact_expectation_vanishes_with_n() {
        let p = pmf(&[0.2, 0.3, 0.5]);
        let vals: Vec<f64> = [10, 100, 1000]
            .iter()
            .map(|&n| exact_expected_jsd(&p, &p, n, MixingWeight::HALF).unwrap())
            .collect();
        assert!(vals[0] > vals[1] && vals[1] > vals[2] && vals[2] < 1e-3, "{vals:?}");
    }

    #[test]
    fn exact_expectation_requires_interior_model() {
        let err = exact_expected_jsd(&pmf(&[0.5, 0.5]), &pmf(&[1.0, 0.0]), 3, MixingWeight::HALF);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn vf_examples() {
        let u5 = CategoricalPmf::uniform(5).unwrap();
        assert_abs_diff_eq!(vf_remainder(&u5, &u5, MixingWeight::HALF), 1.0, epsilon = 1e-14);
        let half = pmf(&[0.5, 0.5]);
        assert_abs_diff_eq!(vf_remainder(&half, &half, MixingWeight::HALF), 0.25, epsilon = 1e-15);
        let tiny = MixingWeight::new(1e-9).unwrap();
        assert!(vf_remainder(&pmf(&[0.2, 0.8]), &pmf(&[0.6, 0.4]), tiny).abs() < 1e-8);
        let p = pmf(&[0.1, 0.3, 0.6]);
        let w = MixingWeight::new(0.3).unwrap();
        assert_abs_diff_eq!(vf_remainder(&p, &p, w), 0.3 * 0.7 * 2.0, epsilon = 1e-14);
    }

    #[test]
    fn voronovskaya_examples() {
        let u5 = CategoricalPmf::uniform(5).unwrap();
        assert_abs_diff_eq!(voronovskaya_expected_jsd(&u5, &u5, 100, MixingWeight::HALF).unwrap(), 0.005, epsilon = 1e-15);
        let (a, b) = (pmf(&[0.2, 0.8]), pmf(&[0.4, 0.6]));
        let far = voronovskaya_expected_jsd(&a, &b, 1_000_000_000, MixingWeight::HALF).unwrap();
        assert_abs_diff_eq!(far, jsd(&a, &b, MixingWeight::HALF), epsilon = 1e-9);
    }

    #[test]
    fn partials_at_coincidence() {
        let p = pmf(&[0.2, 0.3, 0.5]);
        let d = jsd_partials(&p, &p, MixingWeight::HALF).unwrap();
        assert!(d.gradient.iter().all(|g| g.abs() < 1e-15));
        for (c, ph) in d.curvature.iter().zip(p.probs()) {
            assert_abs_diff_eq!(*c, 0.25 / ph, epsilon = 1e-13);
        }
        assert!(jsd_partials(&p, &pmf(&[0.5, 0.5, 0.0]), MixingWeight::HALF).is_err());
    }

    #[test]
    fn mse_and_variance_vanish_as_weight_goes_to_zero() {
        let w = MixingWeight::new(1e-9).unwrap();
        let (ph, pt) = (pmf(&[0.4, 0.35, 0.25]), pmf(&[0.3, 0.4, 0.3]));
        assert!(mse_taylor(&ph, &pt, 200, w).unwrap().abs() <= 1e-6);
        assert!(variance_taylor(&ph, &pt, 200, w).unwrap().abs() <= 1e-6);
    }

    #[test]
    fn variance_vanishes_for_large_n() {
        let p = pmf(&[0.25, 0.25, 0.5]);
        let v = variance_taylor(&p, &p, 1_000_000, MixingWeight::HALF).unwrap();
        assert!(v.abs() < 1e-10);
    }

    #[test]
    fn mse_requires_interior_observed() {
        let r = mse_taylor(&pmf(&[0.0, 1.0]), &pmf(&[0.5, 0.5]), 10, MixingWeight::HALF);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn concentration_examples() {
        assert_abs_diff_eq!(concentration_bound(0.1, 1000, 2, 1.0), 4.0 * (-2.5f64).exp(), epsilon = 1e-15);
        assert_eq!(concentration_bound(0.3, 0, 3, 2.0), 6.0);
        assert!(concentration_bound(1e6, 10, 3, 1.0) < 1e-300);
        assert!(concentration_bound(0.1, 200, 3, 1.0) < concentration_bound(0.1, 100, 3, 1.0));
    }

    #[test]
    fn report_is_consistent() {
        let (ph, pt) = (pmf(&[0.4, 0.35, 0.25]), pmf(&[0.3, 0.4, 0.3]));
        let r = moment_report(&ph, &pt, 200, MixingWeight::HALF).unwrap();
        let bias = r.vf_remainder / 400.0;
        assert_abs_diff_eq!(r.variance, r.mse - bias * bias, epsilon = 1e-18);
        assert!(r.exact_expectation > 0.0 && r.exact_expectation < std::f64::consts::LN_2);
    }
}
