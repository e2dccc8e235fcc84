//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// All count vectors of length `k` summing to `n`.
pub fn lattice(n: u64, k: usize) -> Vec<Vec<u64>> {
    if k == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 0..=n {
        for mut rest in lattice(n - first, k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn factorial(n: u64) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Multinomial probability by direct factorials (small n only).
pub fn multinomial_prob(x: &[u64], p: &[f64]) -> f64 {
    let n: u64 = x.iter().sum();
    let mut v = factorial(n);
    for (&xi, &pi) in x.iter().zip(p) {
        v *= pi.powi(xi as i32) / factorial(xi);
    }
    v
}

/// KL-form JSD, `π KL(p, M) + (1−π) KL(q, M)`, written from scratch.
pub fn naive_jsd(p: &[f64], q: &[f64], pi: f64) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = pi * a + (1.0 - pi) * b;
        if a > 0.0 {
            total += pi * a * (a / m).ln();
        }
        if b > 0.0 {
            total += (1.0 - pi) * b * (b / m).ln();
        }
    }
    total
}

/// Expected JSD over the full multinomial lattice.
pub fn enumerated_expected_jsd(p_hat: &[f64], p_theta: &[f64], n: u64, pi: f64) -> f64 {
    lattice(n, p_theta.len())
        .iter()
        .map(|x| {
            let q: Vec<f64> = x.iter().map(|&c| c as f64 / n as f64).collect();
            multinomial_prob(x, p_theta) * naive_jsd(p_hat, &q, pi)
        })
        .sum()
}

/// Expectation of `f(ξ − np)` over `ξ ~ Mult(n, p)` by enumeration.
pub fn enumerated_moment<F: Fn(&[f64]) -> f64>(p: &[f64], n: u64, f: F) -> f64 {
    lattice(n, p.len())
        .iter()
        .map(|x| {
            let d: Vec<f64> = x.iter().zip(p).map(|(&c, &pi)| c as f64 - n as f64 * pi).collect();
            multinomial_prob(x, p) * f(&d)
        })
        .sum()
}

/// Uniform draw from the simplex (normalized exponentials).
pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Uniform simplex draw conditioned on every entry being at least `floor`.
pub fn random_interior(rng: &mut ChaCha8Rng, k: usize, floor: f64) -> Vec<f64> {
    loop {
        let p = random_simplex(rng, k);
        if p.iter().all(|&v| v >= floor) {
            return p;
        }
    }
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}
