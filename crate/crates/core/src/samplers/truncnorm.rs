//! Normal draws restricted to an interval: inverse-CDF sampling in the body
//! of the distribution, exponential-proposal rejection in the far tails.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use libm::erfc;
use statrs::function::erf::erfc_inv;

const TAIL: f64 = 5.0;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn norm_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse survival function: a rough `erfc⁻¹` polished by Newton steps.
fn norm_isf(q: f64) -> f64 {
    let mut x = std::f64::consts::SQRT_2 * erfc_inv(2.0 * q);
    for _ in 0..3 {
        let d = norm_density(x);
        if !x.is_finite() || d == 0.0 {
            break;
        }
        x += (norm_sf(x) - q) / d;
    }
    x
}

fn norm_quantile(p: f64) -> f64 {
    -norm_isf(p)
}

/// Standard normal mass of `(lo, hi]`, accurate in either tail.
pub fn interval_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        norm_sf(lo) - norm_sf(hi)
    } else {
        norm_cdf(hi) - norm_cdf(lo)
    }
}

/// Standard normal truncated to `(lo, hi]`; requires `lo < hi`.
pub fn standard_truncated<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    debug_assert!(lo < hi);
    if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
        return rng.sample(StandardNormal);
    }
    if lo >= TAIL {
        return upper_tail(lo, hi, rng);
    }
    if hi <= -TAIL {
        return -upper_tail(-hi, -lo, rng);
    }
    let u: f64 = rng.random();
    let x = if lo >= 0.0 {
        let (qa, qb) = (norm_sf(lo), norm_sf(hi));
        norm_isf(qb + u * (qa - qb))
    } else {
        let (pa, pb) = (norm_cdf(lo), norm_cdf(hi));
        norm_quantile(pa + u * (pb - pa))
    };
    // Round-off at the ends of the interval.
    if x <= lo {
        lo + (hi - lo).min(1.0) * 1e-12
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// `x >= lo >= TAIL`, `x <= hi`.
fn upper_tail<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if hi.is_finite() && hi - lo < 1.0 / lo {
        // Narrow interval: uniform proposal, acceptance at least about e^-1.
        loop {
            let x = lo + (hi - lo) * rng.random::<f64>();
            if rng.random::<f64>() <= (-(x * x - lo * lo) / 2.0).exp() && x > lo {
                return x;
            }
        }
    }
    let alpha = (lo + (lo * lo + 4.0).sqrt()) / 2.0;
    let exp = Exp::new(alpha).expect("positive rate");
    loop {
        let x = lo + exp.sample(rng);
        if x > hi {
            continue;
        }
        let d = x - alpha;
        if rng.random::<f64>() <= (-d * d / 2.0).exp() {
            return x;
        }
    }
}

/// `N(mean, sd²)` truncated to `(lo, hi]`.
pub fn truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let x = mean + sd * standard_truncated(a, b, rng);
    if x <= lo {
        next_up(lo).min(hi)
    } else if x > hi {
        hi
    } else {
        x
    }
}

fn next_up(x: f64) -> f64 {
    if x.is_infinite() {
        x
    } else if x == 0.0 {
        f64::from_bits(1)
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}
