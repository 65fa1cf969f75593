use nalgebra::{DMatrix, DVector};
use phylofactor::diffusion::TreeMessenger;
use phylofactor::samplers::{
    cutpoint_log_prior, gibbs_factor_row, gibbs_latent_cell, gibbs_loadings_column, gibbs_residual_precision,
    mh_cutpoint, ChainState, FactorState, Hyperparameters, Model,
};
use phylofactor::traits::{ColumnKind, LatentState, TraitMatrix};
use phylofactor::tree::{parse_newick, tree_covariance, TreeCovariance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Exp, Normal};

fn two_tip() -> TreeCovariance<f64> {
    tree_covariance(&parse_newick::<f64>("(A:1,B:1);").unwrap(), 1.0).unwrap()
}

fn matrix(kinds: Vec<ColumnKind>, values: Vec<Option<f64>>) -> TraitMatrix<f64> {
    let p = kinds.len();
    let n = values.len() / p;
    let taxa = ["A", "B", "C", "D"][..n].iter().map(|s| s.to_string()).collect();
    let names = (1..=p).map(|j| format!("y{j}")).collect();
    TraitMatrix::new(taxa, names, kinds, values).unwrap()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

fn assert_mean(x: &[f64], expected: f64, what: &str) {
    let (m, v) = mean_var(x);
    let se = (v / x.len() as f64).sqrt();
    assert!((m - expected).abs() < 3.0 * se, "{what}: mean {m} vs {expected} (se {se})");
}

fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn loadings_plug_in_at_identity_factors() {
    let cov = two_tip();
    let z = DMatrix::from_row_slice(2, 2, &[0.3, 0.8, -1.1, -0.4]);
    let data = matrix(vec![ColumnKind::Continuous; 2], vec![Some(0.3), Some(0.8), Some(-1.1), Some(-0.4)]);
    let model = Model::new(&cov, &data, Hyperparameters::default(), 2).unwrap();
    let f = DMatrix::identity(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<DVector<f64>> =
        (0..40_000).map(|_| gibbs_loadings_column(&model, 1, &z, &f, 1.0, 1.0, &mut rng).unwrap()).collect();
    for k in 0..2 {
        let xs: Vec<f64> = draws.iter().map(|d| d[k]).collect();
        assert_mean(&xs, 0.5 * z[(k, 1)], "loading mean");
        let (_, v) = mean_var(&xs);
        assert!((v - 0.5).abs() < 0.02, "variance {v}");
    }
    let c: f64 = draws.iter().map(|d| (d[0] - 0.5 * z[(0, 1)]) * (d[1] - 0.5 * z[(1, 1)])).sum::<f64>() / 40_000.0;
    assert!(c.abs() < 0.02);
    // The first column has a single free entry.
    assert_eq!(gibbs_loadings_column(&model, 0, &z, &f, 1.0, 1.0, &mut rng).unwrap().len(), 1);
}

#[test]
fn loadings_at_zero_temperature_follow_the_prior() {
    let cov = two_tip();
    let data = matrix(vec![ColumnKind::Continuous; 2], vec![Some(0.3), Some(5.0), Some(-1.0), Some(4.0)]);
    let model = Model::new(&cov, &data, Hyperparameters::default(), 2).unwrap();
    let z = DMatrix::from_row_slice(2, 2, &[0.3, 5.0, -1.0, 4.0]);
    let f = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut xs: Vec<f64> =
        (0..10_000).map(|_| gibbs_loadings_column(&model, 1, &z, &f, 1.0, 0.0, &mut rng).unwrap()[1]).collect();
    let normal = Normal::new(0.0, 1.0).unwrap();
    assert!(ks_distance(&mut xs, |x| normal.cdf(x)) < 0.02);
}

#[test]
fn single_loading_matches_grid_quadrature() {
    let cov = two_tip();
    let zs = [0.9, -0.2];
    let data = matrix(vec![ColumnKind::Continuous], zs.iter().map(|&v| Some(v)).collect());
    let model = Model::new(&cov, &data, Hyperparameters::default(), 1).unwrap();
    let z = DMatrix::from_column_slice(2, 1, &zs);
    let f = DMatrix::from_column_slice(2, 1, &[1.3, -0.6]);
    let (lambda, beta) = (2.0, 0.6);
    let log_target = |l: f64| {
        let ll: f64 = (0..2).map(|i| -0.5 * lambda * (zs[i] - f[(i, 0)] * l).powi(2)).sum();
        beta * ll - 0.5 * l * l
    };
    let (lo, hi, steps) = (-6.0, 6.0, 24_000);
    let h = (hi - lo) / steps as f64;
    let grid: Vec<f64> = (0..=steps).map(|s| lo + s as f64 * h).collect();
    let dens: Vec<f64> = grid.iter().map(|&x| log_target(x).exp()).collect();
    let mut cum = vec![0.0; grid.len()];
    for s in 1..grid.len() {
        cum[s] = cum[s - 1] + 0.5 * h * (dens[s] + dens[s - 1]);
    }
    let total = cum[steps];
    let cdf = |x: f64| {
        let s = (((x - lo) / h).floor() as usize).min(steps - 1);
        let t = (x - grid[s]) / h;
        (cum[s] + t * (cum[s + 1] - cum[s])) / total
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut xs: Vec<f64> =
        (0..10_000).map(|_| gibbs_loadings_column(&model, 0, &z, &f, lambda, beta, &mut rng).unwrap()[0]).collect();
    assert!(ks_distance(&mut xs, cdf) < 0.02);
}

#[test]
fn residual_precision_posterior_mean() {
    let cov = two_tip();
    let zs = [0.5, -1.5];
    let data = matrix(vec![ColumnKind::Continuous], zs.iter().map(|&v| Some(v)).collect());
    let model = Model::new(&cov, &data, Hyperparameters::default(), 1).unwrap();
    let z = DMatrix::from_column_slice(2, 1, &zs);
    let f = DMatrix::from_column_slice(2, 1, &[0.2, -0.7]);
    let l = DMatrix::from_element(1, 1, 1.5);
    let s: f64 = (0..2).map(|i| (zs[i] - 1.5 * f[(i, 0)]).powi(2)).sum();
    let third = 1.0 / 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<f64> =
        (0..100_000).map(|_| gibbs_residual_precision(&model, 0, &z, &f, &l, 1.0, &mut rng).unwrap()).collect();
    assert_mean(&xs, (third + 1.0) / (third + s / 2.0), "posterior precision");
    let xs: Vec<f64> =
        (0..100_000).map(|_| gibbs_residual_precision(&model, 0, &z, &f, &l, 0.0, &mut rng).unwrap()).collect();
    assert_mean(&xs, 1.0, "prior precision");
}

#[test]
fn factor_row_conjugate_normal() {
    let cov = two_tip();
    let zr = [0.7, -1.2, 0.4, 0.1];
    let data = matrix(vec![ColumnKind::Continuous; 2], zr.iter().map(|&v| Some(v)).collect());
    let z = DMatrix::from_row_slice(2, 2, &zr);
    let l = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let lambda = DVector::from_element(2, 1.0);
    let other = 0.8;
    let f = DMatrix::from_column_slice(2, 1, &[0.0, other]);
    // Tip A given tip B under [[2, 1], [1, 2]]: mean z/2, variance 3/2.
    let (m0, v0) = (other / 2.0, 1.5);
    let post_var = 1.0 / (1.0 / v0 + 1.0);
    let post_mean = post_var * (m0 / v0 + zr[0]);
    let mut messenger = TreeMessenger::new(&cov);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draw = |beta: f64, messenger: &mut TreeMessenger<'_, f64>, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..50_000).map(|_| gibbs_factor_row(messenger, 0, &z, &f, &l, &lambda, beta, rng).unwrap()[0]).collect()
    };
    let xs = draw(1.0, &mut messenger, &mut rng);
    assert_mean(&xs, post_mean, "posterior factor");
    assert!((mean_var(&xs).1 - post_var).abs() < 0.02);
    let xs = draw(0.0, &mut messenger, &mut rng);
    assert_mean(&xs, m0, "prior factor");
    assert!((mean_var(&xs).1 - v0).abs() < 0.05);
    assert_eq!(data.n_taxa(), 2);
}

fn state_for(data: &TraitMatrix<f64>, l: DMatrix<f64>) -> ChainState<f64> {
    let n = data.n_taxa();
    let k = l.nrows();
    ChainState {
        factors: FactorState { f: DMatrix::zeros(n, k), l, lambda: DVector::from_element(data.n_traits(), 1.0) },
        latent: LatentState::on_latent_scale(data),
    }
}

#[test]
fn binary_cell_with_zero_mean_is_half_normal() {
    let cov = two_tip();
    let data = matrix(vec![ColumnKind::Binary], vec![Some(2.0), None]);
    let model = Model::new(&cov, &data, Hyperparameters::default(), 1).unwrap();
    let state = state_for(&data, DMatrix::from_element(1, 1, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let xs: Vec<f64> =
        (0..100_000).map(|_| gibbs_latent_cell(&model, &state, 0, 0, 1.0, true, &mut rng).unwrap()).collect();
    assert!(xs.iter().all(|&x| x > 0.0));
    assert_mean(&xs, (2.0 / std::f64::consts::PI).sqrt(), "half-normal");
    // The missing cell is an unconstrained normal around the fitted value.
    let xs: Vec<f64> =
        (0..100_000).map(|_| gibbs_latent_cell(&model, &state, 1, 0, 1.0, true, &mut rng).unwrap()).collect();
    assert_mean(&xs, 0.0, "missing cell");
    assert!((mean_var(&xs).1 - 1.0).abs() < 0.02);
}

#[test]
fn far_interval_draws_stay_inside() {
    let cov = two_tip();
    let data = matrix(vec![ColumnKind::Ordinal(3)], vec![Some(2.0), Some(1.0)]);
    let model = Model::new(&cov, &data, Hyperparameters::default(), 1).unwrap();
    let mut state = state_for(&data, DMatrix::from_element(1, 1, 1.0));
    state.latent.cutpoints.set_interior(0, 0, 0.5);
    state.factors.f[(0, 0)] = 10.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let x = gibbs_latent_cell(&model, &state, 0, 0, 1.0, true, &mut rng).unwrap();
        assert!(x > 0.0 && x <= 0.5, "{x}");
    }
}

#[test]
fn cutpoint_prior_and_support() {
    assert!((cutpoint_log_prior(&[0.0, 0.5], 2.0) - (2f64.ln() - 1.0)).abs() < 1e-15);
    assert_eq!(cutpoint_log_prior(&[0.0, -0.1], 2.0), f64::NEG_INFINITY);

    // Observed codes pin the cut-point between 0.4 and 0.6.
    let cov = two_tip();
    let data = matrix(vec![ColumnKind::Ordinal(3)], vec![Some(2.0), Some(3.0)]);
    let model = Model::new(&cov, &data, Hyperparameters::default(), 1).unwrap();
    let mut state = state_for(&data, DMatrix::from_element(1, 1, 1.0));
    state.latent.cutpoints.set_interior(0, 0, 0.5);
    state.latent.z[(0, 0)] = 0.4;
    state.latent.z[(1, 0)] = 0.6;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5_000 {
        mh_cutpoint(&model, &mut state, 0, 0, 1.0, 0.25, 0, &mut rng).unwrap();
        let g = state.latent.cutpoints.interior(0)[0];
        assert!((0.4..0.6).contains(&g), "{g}");
    }
}

#[test]
fn unconstrained_cutpoint_spacing_is_exponential() {
    let cov = two_tip();
    let data = matrix(vec![ColumnKind::Ordinal(3)], vec![None, None]);
    let model = Model::new(&cov, &data, Hyperparameters::default(), 1).unwrap();
    let mut state = state_for(&data, DMatrix::from_element(1, 1, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut xs = Vec::new();
    for it in 0..400_000 {
        mh_cutpoint(&model, &mut state, 0, 0, 1.0, 0.25, 0, &mut rng).unwrap();
        if it >= 1_000 && it % 4 == 0 {
            xs.push(state.latent.cutpoints.interior(0)[0]);
        }
    }
    let exp = Exp::new(2.0).unwrap();
    let d = ks_distance(&mut xs, |x| exp.cdf(x));
    assert!(d < 0.02, "KS distance {d}");
}
