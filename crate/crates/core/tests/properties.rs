use nalgebra::{DMatrix, DVector};
use phylofactor::identify::{relabel, Chain, Sample, TraceLayout};
use phylofactor::pathsampling::trapezoid;
use phylofactor::samplers::truncnorm::truncated_normal;
use phylofactor::traits::{standardize, ColumnKind};
use phylofactor::tree::{traversal_orders, tree_covariance};
use phylofactor::TraitMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

use common::{node_covariance, random_tree};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_covariance_matches_path_oracle(n in 1usize..14, seed in any::<u64>(), kappa0 in 0.1f64..10.0) {
        let tree = random_tree(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let full = tree_covariance(&tree, kappa0).unwrap().full();
        let tips: Vec<usize> = (0..tree.n_nodes()).filter(|&id| tree.is_tip(id)).collect();
        for a in 0..n {
            for b in 0..n {
                let ia = tree.tip_index(tree.node(tips[a]).label.as_deref().unwrap()).unwrap();
                let ib = tree.tip_index(tree.node(tips[b]).label.as_deref().unwrap()).unwrap();
                let oracle = node_covariance(&tree, kappa0, tips[a], tips[b]);
                prop_assert!((full[(ia, ib)] - oracle).abs() < 1e-12);
            }
        }
        prop_assert!(full.clone().cholesky().is_some());
    }

    #[test]
    fn reversed_preorder_is_a_postorder(n in 1usize..30, seed in any::<u64>()) {
        let tree = random_tree(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let (post, pre) = traversal_orders(&tree);
        prop_assert_eq!(post.len(), 2 * n - 1);
        prop_assert_eq!(pre.len(), 2 * n - 1);
        let mut seen = vec![false; tree.n_nodes()];
        for &id in pre.iter().rev() {
            if !tree.is_tip(id) {
                prop_assert!(tree.node(id).children.iter().all(|&c| seen[c]));
            }
            seen[id] = true;
        }
    }

    #[test]
    fn relabel_is_idempotent_and_keeps_products(
        seed in any::<u64>(),
        flips in prop::collection::vec(prop::collection::vec(any::<bool>(), 3), 2..40),
        p in 3usize..6,
    ) {
        use rand::Rng;
        let k = 3;
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = TraceLayout::new(n, p, k, &vec![ColumnKind::Continuous; p], true);
        let samples: Vec<Sample<f64>> = flips
            .iter()
            .enumerate()
            .map(|(m, row_flips)| {
                let mut l = DMatrix::from_fn(k, p, |r, j| if r <= j { rng.random_range(-2.0..2.0) } else { 0.0 });
                let mut f = DMatrix::from_fn(n, k, |_, _| rng.random_range(-2.0..2.0));
                for (r, &flip) in row_flips.iter().enumerate() {
                    if flip {
                        l.row_mut(r).neg_mut();
                        f.column_mut(r).neg_mut();
                    }
                }
                Sample { iteration: m as u64, loadings: l, precision: DVector::from_element(p, 1.0), cutpoints: vec![], factors: Some(f) }
            })
            .collect();
        let chain = Chain { layout, beta: 1.0, samples };
        let once = relabel(&chain);
        prop_assert_eq!(&relabel(&once), &once);
        for (a, b) in chain.samples.iter().zip(&once.samples) {
            prop_assert_eq!(a.factors.as_ref().unwrap() * &a.loadings, b.factors.as_ref().unwrap() * &b.loadings);
            prop_assert_eq!(a.loadings.abs(), b.loadings.abs());
        }
    }

    #[test]
    fn trapezoid_ignores_duplicated_points(
        raw in prop::collection::vec((0.0f64..1.0, -50.0f64..50.0), 1..20),
        dup in any::<prop::sample::Index>(),
    ) {
        let mut pts = raw.clone();
        pts.push((0.0, 1.0));
        pts.push((1.0, -1.0));
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let (b, v): (Vec<f64>, Vec<f64>) = pts.iter().cloned().unzip();
        let i = dup.index(b.len());
        let mut b2 = b.clone();
        let mut v2 = v.clone();
        b2.insert(i, b[i]);
        v2.insert(i, v[i]);
        prop_assert!((trapezoid(&b, &v) - trapezoid(&b2, &v2)).abs() < 1e-9);
    }

    #[test]
    fn standardize_is_affine_invariant(
        column in prop::collection::vec(-100.0f64..100.0, 3..12),
        shift in -50.0f64..50.0,
        scale in 0.01f64..100.0,
    ) {
        let n = column.len();
        let mean = column.iter().sum::<f64>() / n as f64;
        prop_assume!(column.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max) > 1e-3);
        let build = |values: Vec<Option<f64>>| {
            TraitMatrix::new((0..n).map(|i| format!("t{i}")).collect(), vec!["y".into()], vec![ColumnKind::Continuous], values).unwrap()
        };
        let a = standardize(&build(column.iter().map(|&x| Some(x)).collect())).unwrap();
        let b = standardize(&build(column.iter().map(|&x| Some(shift + scale * x)).collect())).unwrap();
        for i in 0..n {
            prop_assert!((a.z[(i, 0)] - b.z[(i, 0)]).abs() < 1e-8);
        }
    }

    #[test]
    fn truncated_draws_respect_their_interval(
        mean in -20.0f64..20.0,
        sd in 0.01f64..5.0,
        lo in -10.0f64..10.0,
        width in 1e-6f64..5.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let x = truncated_normal(mean, sd, lo, lo + width, &mut rng);
            prop_assert!(x > lo && x <= lo + width, "{} outside ({}, {}]", x, lo, lo + width);
        }
    }
}
