//! Dense-Gaussian oracles and random instances shared by the test targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use phylofactor::tree::{parse_newick, Phylogeny};
use rand::Rng;

/// Random rooted bifurcating tree on `n` tips with branch lengths in
/// `[0.05, 1)`, built by merging random pairs.
pub fn random_tree<R: Rng>(n: usize, rng: &mut R) -> Phylogeny<f64> {
    let mut parts: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
    while parts.len() > 1 {
        let a = parts.swap_remove(rng.random_range(0..parts.len()));
        let b = parts.swap_remove(rng.random_range(0..parts.len()));
        let la = rng.random_range(0.05..1.0);
        let lb = rng.random_range(0.05..1.0);
        parts.push(format!("({a}:{la},{b}:{lb})"));
    }
    parse_newick(&format!("{};", parts[0])).unwrap()
}

/// Shared root-path length of two nodes plus the root variance.
pub fn node_covariance(tree: &Phylogeny<f64>, kappa0: f64, u: usize, v: usize) -> f64 {
    let pu = tree.path_from_root(u);
    let pv = tree.path_from_root(v);
    let shared = pu.iter().zip(&pv).take_while(|(a, b)| a == b).count();
    let depth: f64 = pu[1..shared].iter().map(|&id| tree.branch_length(id)).sum();
    depth + 1.0 / kappa0
}

/// Mean and variance of `x_target` given `x_obs = values` under a zero-mean
/// Gaussian with covariance `cov(a, b)`.
pub fn dense_conditional(
    cov: impl Fn(usize, usize) -> f64,
    target: usize,
    observed: &[usize],
    values: &DMatrix<f64>,
) -> (DVector<f64>, f64) {
    let m = observed.len();
    let c_oo = DMatrix::from_fn(m, m, |a, b| cov(observed[a], observed[b]));
    let c_to = DVector::from_fn(m, |a, _| cov(target, observed[a]));
    let inv = c_oo.try_inverse().expect("invertible");
    let w = &inv * &c_to;
    let mean = values.transpose() * &w;
    let var = cov(target, target) - c_to.dot(&w);
    (mean, var)
}

pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let chol = cov.clone().cholesky().expect("positive definite");
    let r = x - mean;
    let sol = chol.solve(&r);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + r.dot(&sol))
}

pub fn random_spd<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

/// Least-squares slope of `log y` on `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Minimum wall time in seconds over `reps` calls of `f`.
pub fn min_time(reps: usize, mut f: impl FnMut()) -> f64 {
    (0..reps)
        .map(|_| {
            let t = std::time::Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}
