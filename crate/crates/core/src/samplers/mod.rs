//! β-tempered Metropolis-within-Gibbs kernels and the random-scan driver.

mod driver;
mod kernels;
mod prior;
pub mod truncnorm;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub(crate) use driver::with_pool;
pub use driver::{mcmc_run, mcmc_run_with, KernelClass, KernelWeights, McmcSettings, Sampler};
pub use kernels::{
    cutpoint_log_prior, gibbs_factor_row, gibbs_latent_cell, gibbs_loadings_column,
    gibbs_residual_precision, mh_cutpoint,
};
pub use prior::{prior_k_logpmf, ztp_logpmf, ztp_rate};

use crate::error::{Error, Result};
use crate::linalg::std_normal;
use crate::scalar::{lit, Real};
use crate::traits::{LatentState, TraitMatrix};
use crate::tree::TreeCovariance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters<T> {
    /// Gamma shape and rate of each continuous column's residual precision.
    pub alpha_lambda: T,
    pub beta_lambda: T,
    pub loadings_mean: T,
    pub loadings_precision: T,
    pub kappa0: T,
    /// Rate of the exponential prior on cut-point spacings.
    pub cutpoint_rate: T,
    pub ztp_rate: T,
}

impl<T: Real> Default for Hyperparameters<T> {
    fn default() -> Self {
        Hyperparameters {
            alpha_lambda: lit(1.0 / 3.0),
            beta_lambda: lit(1.0 / 3.0),
            loadings_mean: T::zero(),
            loadings_precision: T::one(),
            kappa0: T::one(),
            cutpoint_rate: lit(2.0),
            ztp_rate: lit(ztp_rate()),
        }
    }
}

impl<T: Real> Hyperparameters<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha_lambda", self.alpha_lambda),
            ("beta_lambda", self.beta_lambda),
            ("loadings_precision", self.loadings_precision),
            ("kappa0", self.kappa0),
            ("cutpoint_rate", self.cutpoint_rate),
            ("ztp_rate", self.ztp_rate),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.loadings_mean.is_finite() {
            return Err(Error::InvalidArgument("loadings_mean must be finite".into()));
        }
        Ok(())
    }
}

/// Factors (N×K), loadings (K×P, zero below the diagonal) and residual
/// precisions (one per column, 1 for discrete columns).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState<T: Real> {
    pub f: DMatrix<T>,
    pub l: DMatrix<T>,
    pub lambda: DVector<T>,
}

impl<T: Real> FactorState<T> {
    pub fn k(&self) -> usize {
        self.l.nrows()
    }

    /// `L_kj` (0-based) is sampled iff `k <= j`.
    pub fn is_free(k: usize, j: usize) -> bool {
        k <= j
    }

    pub fn fitted(&self) -> DMatrix<T> {
        &self.f * &self.l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<T: Real> {
    pub factors: FactorState<T>,
    pub latent: LatentState<T>,
}

/// Everything a chain conditions on.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a, T: Real> {
    pub cov: &'a TreeCovariance<T>,
    pub data: &'a TraitMatrix<T>,
    pub hyper: Hyperparameters<T>,
    pub k: usize,
}

impl<'a, T: Real> Model<'a, T> {
    pub fn new(
        cov: &'a TreeCovariance<T>,
        data: &'a TraitMatrix<T>,
        hyper: Hyperparameters<T>,
        k: usize,
    ) -> Result<Self> {
        hyper.validate()?;
        let (n, p) = (data.n_taxa(), data.n_traits());
        if cov.n_tips() != n {
            return Err(Error::Dimension(format!(
                "tree has {} tips but the trait matrix has {n} rows",
                cov.n_tips()
            )));
        }
        if k == 0 || k > n.min(p) {
            return Err(Error::InvalidArgument(format!(
                "number of factors must be between 1 and min(N, P) = {}, got {k}",
                n.min(p)
            )));
        }
        Ok(Model { cov, data, hyper, k })
    }

    pub fn n_taxa(&self) -> usize {
        self.data.n_taxa()
    }

    pub fn n_traits(&self) -> usize {
        self.data.n_traits()
    }

    /// `F = 0`, free loadings from their prior, `Λ = 1`.
    pub fn initial_state<R: Rng + ?Sized>(&self, latent: LatentState<T>, rng: &mut R) -> ChainState<T> {
        let (n, p, k) = (self.n_taxa(), self.n_traits(), self.k);
        let sd = self.hyper.loadings_precision.sqrt().recip();
        let mut l = DMatrix::zeros(k, p);
        for r in 0..k {
            for j in r..p {
                l[(r, j)] = self.hyper.loadings_mean + sd * std_normal::<T, R>(rng);
            }
        }
        ChainState {
            factors: FactorState {
                f: DMatrix::zeros(n, k),
                l,
                lambda: DVector::from_element(p, T::one()),
            },
            latent,
        }
    }

    pub fn check_state(&self, state: &ChainState<T>) -> Result<()> {
        let (n, p, k) = (self.n_taxa(), self.n_traits(), self.k);
        let fs = &state.factors;
        if fs.f.shape() != (n, k) || fs.l.shape() != (k, p) || fs.lambda.len() != p {
            return Err(Error::Dimension(format!(
                "state has F {:?}, L {:?}, Lambda {} for N={n}, K={k}, P={p}",
                fs.f.shape(),
                fs.l.shape(),
                fs.lambda.len()
            )));
        }
        if state.latent.z.shape() != (n, p) {
            return Err(Error::Dimension(format!("latent matrix is {:?}", state.latent.z.shape())));
        }
        for r in 0..k {
            for j in 0..r.min(p) {
                if fs.l[(r, j)] != T::zero() {
                    return Err(Error::InvalidArgument(format!(
                        "structural zero L[{},{}] is {}",
                        r + 1,
                        j + 1,
                        fs.l[(r, j)]
                    )));
                }
            }
        }
        for j in 0..p {
            let v = fs.lambda[j];
            if self.data.kind(j).is_discrete() && v != T::one() {
                return Err(Error::InvalidArgument(format!("discrete column {} has Lambda {v}", j + 1)));
            }
            if !(v > T::zero()) {
                return Err(Error::InvalidArgument(format!("Lambda[{}] = {v} is not positive", j + 1)));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_beta<T: Real>(beta: T) -> Result<()> {
    if beta >= T::zero() && beta <= T::one() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must lie in [0, 1], got {beta}")))
    }
}

/// `(F L)_ij`.
pub(crate) fn fitted_cell<T: Real>(f: &DMatrix<T>, l: &DMatrix<T>, i: usize, j: usize) -> T {
    (0..l.nrows()).fold(T::zero(), |acc, c| acc + f[(i, c)] * l[(c, j)])
}
