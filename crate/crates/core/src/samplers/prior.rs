use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

/// Rate of the zero-truncated Poisson prior on the number of factors that
/// puts mass ½ on one factor: `λ / (e^λ − 1) = ½`.
pub fn ztp_rate() -> f64 {
    let g = |x: f64| x / x.exp_m1() - 0.5;
    let (mut lo, mut hi) = (1e-12, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn ztp_logpmf(k: usize, rate: f64) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidArgument("number of factors must be at least 1".into()));
    }
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!("Poisson rate must be positive, got {rate}")));
    }
    Ok(k as f64 * rate.ln() - rate - ln_factorial(k as u64) - (-(-rate).exp_m1()).ln())
}

pub fn prior_k_logpmf(k: usize) -> Result<f64> {
    ztp_logpmf(k, ztp_rate())
}
