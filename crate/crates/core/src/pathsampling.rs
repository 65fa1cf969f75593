//! Marginal likelihoods by path sampling along the softened-threshold power
//! posterior, and model selection over the number of factors.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::identify::effective_sample_size;
use crate::rng::{SeedSequence, Stream};
use crate::samplers::truncnorm::interval_mass;
use crate::samplers::{prior_k_logpmf, ChainState, Hyperparameters, McmcSettings, Model, Sampler};
use crate::scalar::{lit, to_f64, Real};
use crate::traits::{CellRole, LatentState, TraitMatrix};
use crate::tree::TreeCovariance;

#[derive(Debug, Clone, PartialEq)]
pub struct PathSchedule {
    pub betas: Vec<f64>,
    /// Iterations run at each temperature.
    pub iterations: usize,
    /// Leading fraction of each temperature's iterations discarded.
    pub burnin_fraction: f64,
    pub thin: usize,
    pub warm_start: bool,
}

impl PathSchedule {
    pub fn validate(&self) -> Result<()> {
        let b = &self.betas;
        if b.len() < 2 || b[0] != 0.0 || b[b.len() - 1] != 1.0 {
            return Err(Error::InvalidArgument(
                "temperature ladder must run from 0 to 1 with at least two points".into(),
            ));
        }
        if b.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidArgument("temperature ladder must be increasing".into()));
        }
        if !(0.0..1.0).contains(&self.burnin_fraction) || self.thin == 0 || self.iterations == 0 {
            return Err(Error::InvalidArgument(format!(
                "per-temperature settings invalid: iterations {}, burn-in fraction {}, thin {}",
                self.iterations, self.burnin_fraction, self.thin
            )));
        }
        Ok(())
    }
}

/// `β_m = ((m−1)/(n−1))^{1/a}`, the Beta(a, 1) quantiles at evenly spaced
/// levels.
pub fn beta_schedule(n: usize, a: f64) -> Result<PathSchedule> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 temperatures, got {n}")));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("Beta shape must be positive, got {a}")));
    }
    let betas = (0..n)
        .map(|m| match m {
            0 => 0.0,
            _ if m == n - 1 => 1.0,
            _ => (m as f64 / (n - 1) as f64).powf(1.0 / a),
        })
        .collect();
    Ok(PathSchedule {
        betas,
        iterations: 20_000,
        burnin_fraction: 0.25,
        thin: 1,
        warm_start: true,
    })
}

/// `log h − log p̂` plus the softening term, at temperature `beta`.
///
/// `h` is the Gaussian density of every latent cell given `F`, `L`, `Λ`;
/// `p̂` is the standard normal working density of the random cells
/// (observed discrete and missing). Parameter priors appear in both and
/// cancel.
pub fn log_path_derivative<T: Real>(model: &Model<'_, T>, state: &ChainState<T>, beta: T) -> Result<f64> {
    let data = model.data;
    let satisfied = state.latent.violations(data) == 0;
    let b = to_f64(beta);
    if !satisfied && b >= 1.0 {
        return Err(Error::Numerical(
            "latent cells violate their intervals at temperature 1".into(),
        ));
    }
    let soft = softening_term(model, state, beta);
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let fitted = state.factors.fitted();
    let z = &state.latent.z;
    let mut log_h = 0.0;
    let mut log_p = 0.0;
    for j in 0..data.n_traits() {
        let lambda = to_f64(state.factors.lambda[j]);
        let half_log_lambda = 0.5 * lambda.ln();
        for i in 0..data.n_taxa() {
            let zij = to_f64(z[(i, j)]);
            let r = zij - to_f64(fitted[(i, j)]);
            log_h += half_log_lambda - half_log_2pi - 0.5 * lambda * r * r;
            if data.role(i, j) != CellRole::Fixed {
                log_p += -half_log_2pi - 0.5 * zij * zij;
            }
        }
    }
    Ok(soft + log_h - log_p)
}

/// The softening term of the path derivative: `−1/(1 − β)` while any
/// latent cell is outside its interval, else 0.
pub fn softening_term<T: Real>(model: &Model<'_, T>, state: &ChainState<T>, beta: T) -> f64 {
    let b = to_f64(beta);
    if b >= 1.0 || state.latent.violations(model.data) == 0 {
        0.0
    } else {
        -1.0 / (1.0 - b)
    }
}

/// Integral of the expected softening term over `[1 − width, 1]` given the
/// parameters of one `β = 1` state: `log P − log(P + width·(1 − P))`, where
/// `P` is the probability that every discrete cell falls in its interval
/// given `F`, `L`, `Λ`, `γ`.
///
/// The term vanishes on every `β = 1` sample but rises to `1 − 1/P` in the
/// limit, so the last quadrature interval integrates it in closed form.
pub fn softening_tail<T: Real>(model: &Model<'_, T>, state: &ChainState<T>, width: f64) -> f64 {
    let data = model.data;
    let fitted = state.factors.fitted();
    let mut log_p = 0.0;
    for j in 0..data.n_traits() {
        let sd = to_f64(state.factors.lambda[j]).sqrt().recip();
        for i in 0..data.n_taxa() {
            if let CellRole::Bounded(code) = data.role(i, j) {
                let (lo, hi) = state.latent.cutpoints.bounds(j, code);
                let m = to_f64(fitted[(i, j)]);
                log_p += interval_mass((to_f64(lo) - m) / sd, (to_f64(hi) - m) / sd).ln();
            }
        }
    }
    if width <= 0.0 || log_p == 0.0 {
        return 0.0;
    }
    // log(width + (1 − width)·P) without underflow for tiny P.
    let log_mix = width.ln() + ((1.0 - width) / width * log_p.exp()).ln_1p();
    log_p - log_mix
}

/// Trapezoid rule over `(betas, values)`.
pub fn trapezoid(betas: &[f64], values: &[f64]) -> f64 {
    betas
        .windows(2)
        .zip(values.windows(2))
        .map(|(b, v)| (b[1] - b[0]) * (v[0] + v[1]) / 2.0)
        .sum()
}

fn trapezoid_weights(betas: &[f64]) -> Vec<f64> {
    let n = betas.len();
    (0..n)
        .map(|m| {
            let left = if m > 0 { betas[m] - betas[m - 1] } else { 0.0 };
            let right = if m + 1 < n { betas[m + 1] - betas[m] } else { 0.0 };
            (left + right) / 2.0
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEstimate {
    pub betas: Vec<f64>,
    /// Mean path derivative at each temperature.
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub log_marginal: f64,
    pub mc_error: f64,
}

/// Path-sampling estimate of `log p(Y | K)` for the model's `K`.
pub fn estimate_log_marginal<T: Real>(
    model: Model<'_, T>,
    init: ChainState<T>,
    schedule: &PathSchedule,
    settings: &McmcSettings,
) -> Result<PathEstimate> {
    crate::samplers::with_pool(settings.workers, || {
        estimate_in_pool(model, init, schedule, settings, SeedSequence::new(settings.seed))
    })
}

fn estimate_in_pool<T: Real>(
    model: Model<'_, T>,
    init: ChainState<T>,
    schedule: &PathSchedule,
    settings: &McmcSettings,
    seeds: SeedSequence,
) -> Result<PathEstimate> {
    schedule.validate()?;
    let burnin = (schedule.iterations as f64 * schedule.burnin_fraction).round() as usize;
    let betas = &schedule.betas;
    let n = betas.len();
    let weights = trapezoid_weights(betas);
    let last_width = betas[n - 1] - betas[n - 2];
    let mut means = Vec::with_capacity(n);
    let mut std_errors = Vec::with_capacity(n);
    let (mut log_marginal, mut mc_var) = (0.0, 0.0);
    let mut state = init.clone();
    for (m, &b) in betas.iter().enumerate() {
        let beta: T = lit(b);
        let start = if schedule.warm_start { state } else { init.clone() };
        let mut sampler = Sampler::with_seeds(model, start, beta, settings, seeds.child(m as u64))?;
        // Each retained state yields its derivative and its contribution to
        // the quadrature; the softening term over the last interval is
        // integrated in closed form from the β = 1 states.
        let evaluate = |state: &ChainState<T>| -> Result<(f64, f64)> {
            let d = log_path_derivative(&model, state, beta)?;
            let mut c = weights[m] * d;
            if m + 2 == n {
                c -= 0.5 * last_width * softening_term(&model, state, beta);
            } else if m + 1 == n {
                c += softening_tail(&model, state, last_width);
            }
            Ok((d, c))
        };
        let mut derivs = Vec::new();
        let mut contribs = Vec::new();
        let mut keep = |s: &ChainState<T>| -> Result<()> {
            let (d, c) = evaluate(s)?;
            derivs.push(d);
            contribs.push(c);
            Ok(())
        };
        let mut kept = false;
        for it in 1..=schedule.iterations {
            sampler.step()?;
            if it > burnin && (it - burnin) % schedule.thin == 0 {
                keep(sampler.state())?;
                kept = true;
            }
        }
        if !kept {
            keep(sampler.state())?;
        }
        let (mean, se) = mean_and_se(&derivs);
        let (c_mean, c_se) = mean_and_se(&contribs);
        if !mean.is_finite() || !c_mean.is_finite() {
            return Err(Error::Numerical(format!("path derivative at temperature {b} is {mean}")));
        }
        means.push(mean);
        std_errors.push(se);
        log_marginal += c_mean;
        mc_var += c_se * c_se;
        log::debug!("K = {}: beta {b:.5} derivative {mean:.4}", model.k);
        state = sampler.into_state();
    }
    Ok(PathEstimate {
        log_marginal,
        betas: betas.clone(),
        means,
        std_errors,
        mc_error: mc_var.sqrt(),
    })
}

/// Sample mean and its standard error `sd/√ESS`.
fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    let ess = effective_sample_size(values).map(|e| e.ess).unwrap_or(count);
    (mean, (var / ess).sqrt())
}

/// Posterior over candidate models from log marginals and log priors,
/// normalized over the candidates given.
pub fn posterior_over_k(log_marginals: &[f64], log_priors: &[f64]) -> Vec<f64> {
    let joint: Vec<f64> = log_marginals.iter().zip(log_priors).map(|(a, b)| a + b).collect();
    let top = joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = joint.iter().map(|x| (x - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Entry `(a, b)` is `log m_a − log m_b`.
pub fn log_bayes_factors(log_marginals: &[f64]) -> DMatrix<f64> {
    let n = log_marginals.len();
    DMatrix::from_fn(n, n, |a, b| log_marginals[a] - log_marginals[b])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSelection {
    pub ks: Vec<usize>,
    pub estimates: Vec<PathEstimate>,
    pub log_priors: Vec<f64>,
    pub posterior: Vec<f64>,
    pub log_bayes_factors: DMatrix<f64>,
}

impl ModelSelection {
    pub fn log_marginals(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.log_marginal).collect()
    }

    pub fn best_k(&self) -> usize {
        let lm = self.log_marginals();
        let best = (0..lm.len()).fold(0, |a, b| if lm[b] > lm[a] { b } else { a });
        self.ks[best]
    }
}

/// Path sampling for every `K` in `1..=max_k`; candidates run concurrently
/// when `settings.workers > 1`.
pub fn select_num_factors<T: Real>(
    cov: &TreeCovariance<T>,
    data: &TraitMatrix<T>,
    latent: &LatentState<T>,
    hyper: Hyperparameters<T>,
    max_k: usize,
    schedule: &PathSchedule,
    settings: &McmcSettings,
) -> Result<ModelSelection> {
    if max_k == 0 {
        return Err(Error::InvalidArgument("max_k must be at least 1".into()));
    }
    let seeds = SeedSequence::new(settings.seed);
    let ks: Vec<usize> = (1..=max_k).collect();
    let run = |k: usize| -> Result<PathEstimate> {
        let model = Model::new(cov, data, hyper, k)?;
        let child = seeds.child(k as u64);
        let init = model.initial_state(latent.clone(), &mut child.rng(Stream::Init));
        let estimate = estimate_in_pool(model, init, schedule, settings, child)?;
        log::info!("K = {k}: log marginal {:.4} (MC error {:.4})", estimate.log_marginal, estimate.mc_error);
        Ok(estimate)
    };
    let estimates: Vec<PathEstimate> = crate::samplers::with_pool(settings.workers, || {
        if settings.workers > 1 {
            ks.par_iter().map(|&k| run(k)).collect::<Result<Vec<_>>>()
        } else {
            ks.iter().map(|&k| run(k)).collect::<Result<Vec<_>>>()
        }
    })?;
    let log_priors = ks
        .iter()
        .map(|&k| prior_k_logpmf(k))
        .collect::<Result<Vec<_>>>()?;
    let lm: Vec<f64> = estimates.iter().map(|e| e.log_marginal).collect();
    Ok(ModelSelection {
        posterior: posterior_over_k(&lm, &log_priors),
        log_bayes_factors: log_bayes_factors(&lm),
        ks,
        estimates,
        log_priors,
    })
}

pub fn write_path_table<W: Write>(estimate: &PathEstimate, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["beta", "mean_derivative", "std_error"])?;
    for ((b, m), s) in estimate.betas.iter().zip(&estimate.means).zip(&estimate.std_errors) {
        w.write_record([format!("{b}"), format!("{m}"), format!("{s}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_quantiles() {
        let s = beta_schedule(3, 0.3).unwrap();
        assert_eq!(s.betas[0], 0.0);
        assert_eq!(s.betas[2], 1.0);
        assert!((s.betas[1] - 0.5f64.powf(10.0 / 3.0)).abs() < 1e-15);
        assert!((s.betas[1] - 0.0992).abs() < 1e-4);
        let u = beta_schedule(5, 1.0).unwrap();
        assert_eq!(u.betas, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(beta_schedule(1, 0.3).is_err());
    }

    #[test]
    fn trapezoid_ignores_duplicate_points() {
        let f = |b: f64| b * b - 2.0 * b;
        let b1 = vec![0.0, 0.3, 0.7, 1.0];
        let b2 = vec![0.0, 0.3, 0.3, 0.7, 1.0, 1.0];
        let v1: Vec<f64> = b1.iter().map(|&b| f(b)).collect();
        let v2: Vec<f64> = b2.iter().map(|&b| f(b)).collect();
        assert!((trapezoid(&b1, &v1) - trapezoid(&b2, &v2)).abs() < 1e-15);
    }

    #[test]
    fn equal_models_split_evenly() {
        let post = posterior_over_k(&[-10.0, -10.0], &[-0.7, -0.7]);
        assert_eq!(post, vec![0.5, 0.5]);
        assert_eq!(log_bayes_factors(&[-10.0, -10.0])[(0, 1)], 0.0);
    }
}
