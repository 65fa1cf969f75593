//! Small dense helpers on top of nalgebra's Cholesky.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

pub fn cholesky<T: Real>(m: &DMatrix<T>, what: &'static str) -> Result<Cholesky<T, Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite(what))
}

pub fn log_det<T: Real>(chol: &Cholesky<T, Dyn>) -> T {
    let l = chol.l_dirty();
    (0..l.nrows()).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * lit(2.0)
}

pub fn std_normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = rng.sample(StandardNormal);
    lit(z)
}

pub fn std_normal_vector<T: Real, R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<T> {
    DVector::from_fn(len, |_, _| std_normal(rng))
}

/// Draws from the Gaussian with precision `precision` and mean
/// `precision⁻¹ · shift`.
pub fn sample_canonical_gaussian<T: Real, R: Rng + ?Sized>(
    precision: DMatrix<T>,
    shift: &DVector<T>,
    rng: &mut R,
) -> Result<DVector<T>> {
    let chol = Cholesky::new(precision).ok_or(Error::NotPositiveDefinite("conditional precision"))?;
    let mean = chol.solve(shift);
    let noise = std_normal_vector::<T, R>(shift.len(), rng);
    // L Lᵀ = A, so L⁻ᵀ ε has covariance A⁻¹.
    let offset = chol
        .l_dirty()
        .lower_triangle()
        .transpose()
        .solve_upper_triangular(&noise)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    Ok(mean + offset)
}
