use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::truncnorm::{interval_mass, truncated_normal};
use super::{check_beta, fitted_cell, ChainState, Hyperparameters, Model};
use crate::diffusion::{TipConditional, TreeMessenger};
use crate::error::{Error, Result};
use crate::linalg::sample_canonical_gaussian;
use crate::scalar::{infinity, is_finite, lit, to_f64, Real};
use crate::traits::{CellRole, ColumnKind};

pub(crate) fn free_count(j: usize, k: usize) -> usize {
    (j + 1).min(k)
}

/// Free entries `L_{1:k', j}` given the factors.
pub fn gibbs_loadings_column<T: Real, R: Rng + ?Sized>(
    model: &Model<'_, T>,
    j: usize,
    z: &DMatrix<T>,
    f: &DMatrix<T>,
    lambda_j: T,
    beta: T,
    rng: &mut R,
) -> Result<DVector<T>> {
    check_beta(beta)?;
    if j >= z.ncols() || f.nrows() != z.nrows() {
        return Err(Error::Dimension(format!("column {j} of a {:?} latent matrix", z.shape())));
    }
    let kp = free_count(j, f.ncols());
    let fj = f.columns(0, kp);
    let gram = fj.transpose() * fj;
    let cross = fj.transpose() * z.column(j);
    loadings_from_moments(&model.hyper, gram, cross, lambda_j, beta, rng)
}

pub(crate) fn loadings_from_moments<T: Real, R: Rng + ?Sized>(
    hyper: &Hyperparameters<T>,
    gram: DMatrix<T>,
    cross: DVector<T>,
    lambda_j: T,
    beta: T,
    rng: &mut R,
) -> Result<DVector<T>> {
    let kp = cross.len();
    let w = beta * lambda_j;
    let precision = gram * w + DMatrix::identity(kp, kp) * hyper.loadings_precision;
    let shift = cross * w + DVector::from_element(kp, hyper.loadings_precision * hyper.loadings_mean);
    sample_canonical_gaussian(precision, &shift, rng)
}

/// Residual precision of continuous column `j`.
pub fn gibbs_residual_precision<T: Real, R: Rng + ?Sized>(
    model: &Model<'_, T>,
    j: usize,
    z: &DMatrix<T>,
    f: &DMatrix<T>,
    l: &DMatrix<T>,
    beta: T,
    rng: &mut R,
) -> Result<T> {
    check_beta(beta)?;
    if model.data.kind(j) != ColumnKind::Continuous {
        return Err(Error::InvalidArgument(format!(
            "column {} is discrete; its residual precision is fixed at 1",
            j + 1
        )));
    }
    let ss = (0..z.nrows()).fold(T::zero(), |acc, i| {
        let r = z[(i, j)] - fitted_cell(f, l, i, j);
        acc + r * r
    });
    precision_from_ss(&model.hyper, z.nrows(), ss, beta, rng)
}

pub(crate) fn precision_from_ss<T: Real, R: Rng + ?Sized>(
    hyper: &Hyperparameters<T>,
    n: usize,
    ss: T,
    beta: T,
    rng: &mut R,
) -> Result<T> {
    let b = to_f64(beta);
    let shape = to_f64(hyper.alpha_lambda) + b * n as f64 / 2.0;
    let rate = to_f64(hyper.beta_lambda) + b * to_f64(ss) / 2.0;
    let gamma = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numerical(format!("precision conditional Gamma({shape}, {rate}): {e}")))?;
    let x: f64 = gamma.sample(rng);
    Ok(lit(x.max(f64::MIN_POSITIVE)))
}

/// Factor row `i` given every other row through the tree.
#[allow(clippy::too_many_arguments)]
pub fn gibbs_factor_row<T: Real, R: Rng + ?Sized>(
    messenger: &mut TreeMessenger<'_, T>,
    i: usize,
    z: &DMatrix<T>,
    f: &DMatrix<T>,
    l: &DMatrix<T>,
    lambda: &DVector<T>,
    beta: T,
    rng: &mut R,
) -> Result<DVector<T>> {
    check_beta(beta)?;
    let prior = messenger.tip_conditional(f, i)?;
    let gl = weighted_gram(l, lambda);
    let lz = weighted_cross(l, lambda, z, i);
    factor_row_from_parts(&prior, &gl, &lz, beta, rng)
}

/// `L diag(Λ) Lᵀ`.
pub(crate) fn weighted_gram<T: Real>(l: &DMatrix<T>, lambda: &DVector<T>) -> DMatrix<T> {
    let mut scaled = l.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= lambda[j];
    }
    scaled * l.transpose()
}

/// `L diag(Λ) Zᵀ e_i`.
pub(crate) fn weighted_cross<T: Real>(
    l: &DMatrix<T>,
    lambda: &DVector<T>,
    z: &DMatrix<T>,
    i: usize,
) -> DVector<T> {
    let w = DVector::from_fn(z.ncols(), |j, _| lambda[j] * z[(i, j)]);
    l * w
}

/// Components of the prior conditional with infinite precision are held at
/// their conditional mean; the rest are drawn given them.
pub(crate) fn factor_row_from_parts<T: Real, R: Rng + ?Sized>(
    prior: &TipConditional<T>,
    gl: &DMatrix<T>,
    lz: &DVector<T>,
    beta: T,
    rng: &mut R,
) -> Result<DVector<T>> {
    let k = prior.mean.len();
    let free: Vec<usize> = (0..k).filter(|&c| is_finite(prior.precision[c])).collect();
    let pinned: Vec<usize> = (0..k).filter(|&c| !is_finite(prior.precision[c])).collect();
    let mut row = prior.mean.clone();
    if free.is_empty() {
        return Ok(row);
    }
    let nf = free.len();
    let mut precision = DMatrix::zeros(nf, nf);
    let mut shift = DVector::zeros(nf);
    for (a, &ca) in free.iter().enumerate() {
        let mut s = beta * lz[ca] + prior.precision[ca] * prior.mean[ca];
        for &cb in &pinned {
            s -= beta * gl[(ca, cb)] * prior.mean[cb];
        }
        shift[a] = s;
        for (b, &cb) in free.iter().enumerate() {
            precision[(a, b)] = beta * gl[(ca, cb)];
        }
        precision[(a, a)] += prior.precision[ca];
    }
    let draw = sample_canonical_gaussian(precision, &shift, rng)?;
    for (a, &ca) in free.iter().enumerate() {
        row[ca] = draw[a];
    }
    Ok(row)
}

/// Latent liability of a discrete or missing cell. `others_satisfied` is
/// whether every other observed discrete cell currently lies in its
/// interval; it only matters for `0 < β < 1`.
pub fn gibbs_latent_cell<T: Real, R: Rng + ?Sized>(
    model: &Model<'_, T>,
    state: &ChainState<T>,
    i: usize,
    j: usize,
    beta: T,
    others_satisfied: bool,
    rng: &mut R,
) -> Result<T> {
    check_beta(beta)?;
    let bounds = match model.data.role(i, j) {
        CellRole::Fixed => {
            return Err(Error::InvalidArgument(format!(
                "cell ({}, {}) is an observed continuous value",
                i + 1,
                j + 1
            )))
        }
        CellRole::Bounded(code) => Some(state.latent.cutpoints.bounds(j, code)),
        CellRole::Free => None,
    };
    let mean = fitted_cell(&state.factors.f, &state.factors.l, i, j);
    Ok(latent_draw(mean, state.factors.lambda[j], bounds, beta, others_satisfied, rng))
}

pub(crate) fn latent_draw<T: Real, R: Rng + ?Sized>(
    mean: T,
    lambda_j: T,
    bounds: Option<(T, T)>,
    beta: T,
    others_satisfied: bool,
    rng: &mut R,
) -> T {
    let b = to_f64(beta);
    let tau = b * to_f64(lambda_j) + (1.0 - b);
    let m = b * to_f64(lambda_j) * to_f64(mean) / tau;
    let sd = tau.sqrt().recip();
    let plain = |rng: &mut R| {
        let e: f64 = rng.sample(StandardNormal);
        m + sd * e
    };
    let x = match bounds {
        None => plain(rng),
        Some((lo, hi)) => {
            let (lo, hi) = (to_f64(lo), to_f64(hi));
            if b >= 1.0 {
                truncated_normal(m, sd, lo, hi, rng)
            } else if b <= 0.0 || !others_satisfied {
                plain(rng)
            } else {
                let (a, c) = ((lo - m) / sd, (hi - m) / sd);
                let inside = interval_mass(a, c);
                let below = interval_mass(f64::NEG_INFINITY, a);
                let above = interval_mass(c, f64::INFINITY);
                let out = 1.0 - b;
                let u = rng.random::<f64>() * (inside + out * (below + above));
                if u < inside {
                    truncated_normal(m, sd, lo, hi, rng)
                } else if u < inside + out * below {
                    truncated_normal(m, sd, f64::NEG_INFINITY, lo, rng)
                } else {
                    truncated_normal(m, sd, hi, f64::INFINITY, rng)
                }
            }
        }
    };
    lit(x)
}

/// Log density of the exponential spacing prior over a column's interior
/// cut-points, given the full cut vector `[0, γ_2, …]`.
pub fn cutpoint_log_prior<T: Real>(cuts: &[T], rate: T) -> T {
    cuts.windows(2).fold(T::zero(), |acc, w| {
        let d = w[1] - w[0];
        if d > T::zero() {
            acc + rate.ln() - rate * d
        } else {
            -infinity::<T>()
        }
    })
}

/// Random-walk update of interior cut-point `index` (0-based, so `γ_{index+2}`)
/// of ordinal column `j`. `other_violations` counts observed discrete cells
/// outside their interval in every other column.
#[allow(clippy::too_many_arguments)]
pub fn mh_cutpoint<T: Real, R: Rng + ?Sized>(
    model: &Model<'_, T>,
    state: &mut ChainState<T>,
    j: usize,
    index: usize,
    beta: T,
    step: f64,
    other_violations: usize,
    rng: &mut R,
) -> Result<bool> {
    check_beta(beta)?;
    let levels = match model.data.kind(j) {
        ColumnKind::Ordinal(m) => m,
        k => return Err(Error::InvalidArgument(format!("column {} is {k}, not ordinal", j + 1))),
    };
    if index + 2 >= levels {
        return Err(Error::IndexOutOfRange(format!(
            "interior cut-point {index} of a {levels}-level column"
        )));
    }
    let cuts = state.latent.cutpoints.column(j);
    let lo = cuts[index];
    let current = cuts[index + 1];
    let last = index + 2 >= cuts.len();
    let hi = if last { infinity() } else { cuts[index + 2] };
    let e: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    let proposal = current + lit::<T>(step * e);
    if !(proposal > lo && proposal < hi) {
        return Ok(false);
    }
    let log_prior = if last {
        to_f64(model.hyper.cutpoint_rate * (current - proposal))
    } else {
        0.0
    };
    let before = state.latent.column_violations(model.data, j);
    state.latent.cutpoints.set_interior(j, index, proposal);
    let after = state.latent.column_violations(model.data, j);
    let b = to_f64(beta);
    let log_ratio = if b >= 1.0 {
        if after > 0 {
            f64::NEG_INFINITY
        } else {
            log_prior
        }
    } else {
        let soft = |v: usize| if other_violations + v == 0 { 0.0 } else { (1.0 - b).ln() };
        log_prior + soft(after) - soft(before)
    };
    if u.ln() < log_ratio {
        Ok(true)
    } else {
        state.latent.cutpoints.set_interior(j, index, current);
        Ok(false)
    }
}
