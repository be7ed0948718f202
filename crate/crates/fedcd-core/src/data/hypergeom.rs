//! Hypergeometric label distribution with exact binomial arithmetic.
//!
//! Probabilities are formed as ratios of big-integer binomial
//! coefficients and only converted to `f64` at the end, so the mass over
//! the support sums to exactly 1 in rational arithmetic.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use std::ops::RangeInclusive;

/// Exact binomial coefficient; 0 when `k > n`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut res = BigUint::one();
    for i in 0..k {
        res = res * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    res
}

/// Support of draws-successes count `k`: `max(0, n+K-N) ..= min(n, K)`.
pub fn support(population: u64, successes: u64, draws: u64) -> RangeInclusive<u64> {
    let lo = (draws + successes).saturating_sub(population);
    let hi = draws.min(successes);
    lo..=hi
}

/// Exact pmf `C(K,k) C(N-K,n-k) / C(N,n)`; zero outside the support.
pub fn pmf_exact(population: u64, successes: u64, draws: u64, k: u64) -> BigRational {
    debug_assert!(successes <= population && draws <= population);
    if k > draws {
        return BigRational::zero();
    }
    let num = binomial(successes, k) * binomial(population - successes, draws - k);
    if num.is_zero() {
        return BigRational::zero();
    }
    let den = binomial(population, draws);
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// The pmf converted to `f64`.
pub fn pmf(population: u64, successes: u64, draws: u64, k: u64) -> f64 {
    pmf_exact(population, successes, draws, k).to_f64().unwrap_or(0.0)
}

/// Draw one success count by inverse-CDF over the exact pmf.
pub fn sample<R: Rng>(population: u64, successes: u64, draws: u64, rng: &mut R) -> u64 {
    let range = support(population, successes, draws);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for k in range.clone() {
        acc += pmf(population, successes, draws, k);
        if u < acc {
            return k;
        }
    }
    *range.end()
}
