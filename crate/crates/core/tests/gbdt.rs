mod common;

use common::OracleParams;
use proptest::prelude::*;
use rand::Rng;
use seacast::gbdt::{self, GbdtParams, Matrix, TreeNode};

fn single_tree(depth: usize, lambda: f64) -> GbdtParams {
    GbdtParams {
        n_estimators: 1,
        learning_rate: 1.0,
        max_depth: depth,
        n_bins: 256,
        lambda,
        gamma: 0.0,
        min_child_weight: 1.0,
    }
}

fn leaf_values(t: &seacast::gbdt::Tree) -> Vec<f64> {
    t.nodes
        .iter()
        .filter_map(|n| match n {
            TreeNode::Leaf { value } => Some(*value),
            _ => None,
        })
        .collect()
}

#[test]
fn first_tree_matches_brute_force_on_more_seeds() {
    for seed in 100..130 {
        let mut rng = common::rng(seed);
        let (x, y) = common::random_dataset(&mut rng);
        let m = Matrix::from_rows(&x).unwrap();
        let lambda = (seed % 2) as f64;
        let (ens, _) = gbdt::fit_ensemble(&m, &y, &single_tree(3, lambda)).unwrap();
        let base = y.iter().sum::<f64>() / y.len() as f64;
        let g: Vec<f64> = y.iter().map(|t| base - t).collect();
        let h = vec![1.0; y.len()];
        let oracle = common::exact_greedy(
            &x,
            &g,
            &h,
            &OracleParams { max_depth: 3, lambda, gamma: 0.0, min_child_weight: 1.0 },
        );
        let mut oracle_leaves = Vec::new();
        let mut stack = vec![&oracle];
        while let Some(n) = stack.pop() {
            match n {
                common::OracleNode::Leaf(v) => oracle_leaves.push(*v),
                common::OracleNode::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        let mut engine_leaves = leaf_values(&ens.trees[0]);
        engine_leaves.sort_by(f64::total_cmp);
        oracle_leaves.sort_by(f64::total_cmp);
        assert_eq!(engine_leaves.len(), oracle_leaves.len(), "seed {seed}");
        for (a, b) in engine_leaves.iter().zip(&oracle_leaves) {
            assert!(common::close(*a, *b, 1e-9), "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn leaf_is_newton_step_of_squared_loss() {
    // central difference of sum ½(pred - y)² at pred = base gives the gradient
    let y = [1.0, 4.0, 2.5, -3.0, 0.5];
    let x: Vec<Vec<f64>> = (0..y.len()).map(|_| vec![0.0]).collect();
    let (ens, _) = gbdt::fit_ensemble(&Matrix::from_rows(&x).unwrap(), &y, &single_tree(2, 1.0)).unwrap();
    let base = ens.base_score;
    let loss = |p: f64| y.iter().map(|t| 0.5 * (p - t) * (p - t)).sum::<f64>();
    let eps = 1e-4;
    let grad = (loss(base + eps) - loss(base - eps)) / (2.0 * eps);
    let hess = (loss(base + eps) - 2.0 * loss(base) + loss(base - eps)) / (eps * eps);
    let leaf = leaf_values(&ens.trees[0])[0];
    assert!((leaf - (-grad / (hess + 1.0))).abs() < 1e-6, "{leaf} vs {}", -grad / (hess + 1.0));
}

#[test]
fn scaling_targets_by_power_of_two_scales_predictions_exactly() {
    let mut rng = common::rng(21);
    let (x, y) = common::random_dataset(&mut rng);
    let m = Matrix::from_rows(&x).unwrap();
    let params = GbdtParams { n_estimators: 20, learning_rate: 0.25, max_depth: 3, lambda: 0.0, ..Default::default() };
    let (a, _) = gbdt::fit_ensemble(&m, &y, &params).unwrap();
    for c in [2.0, 0.5, 8.0] {
        let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
        let (b, _) = gbdt::fit_ensemble(&m, &ys, &params).unwrap();
        for row in &x {
            assert_eq!(b.predict(row), c * a.predict(row));
        }
    }
}

#[test]
fn scaling_targets_by_three_scales_predictions_closely() {
    let mut rng = common::rng(22);
    let (x, y) = common::random_dataset(&mut rng);
    let m = Matrix::from_rows(&x).unwrap();
    let params = GbdtParams { n_estimators: 20, learning_rate: 0.25, max_depth: 3, lambda: 0.0, ..Default::default() };
    let (a, _) = gbdt::fit_ensemble(&m, &y, &params).unwrap();
    let ys: Vec<f64> = y.iter().map(|v| v * 3.0).collect();
    let (b, _) = gbdt::fit_ensemble(&m, &ys, &params).unwrap();
    for row in &x {
        assert!(common::close(b.predict(row), 3.0 * a.predict(row), 1e-9));
    }
}

#[test]
fn training_is_identical_across_thread_counts() {
    let mut rng = common::rng(5);
    let n = 3000;
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..5).map(|j| if j == 4 && rng.gen_bool(0.1) { f64::NAN } else { rng.gen_range(-1.0..1.0) }).collect())
        .collect();
    let y: Vec<f64> = x.iter().map(|r| r[0] * 2.0 - r[1] + r[2] * r[3]).collect();
    let m = Matrix::from_rows(&x).unwrap();
    let params = GbdtParams { n_estimators: 15, learning_rate: 0.3, max_depth: 6, ..Default::default() };
    let fit = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| gbdt::fit_ensemble(&m, &y, &params).unwrap())
    };
    let (one, trace_one) = fit(1);
    for threads in [2, 4] {
        let (many, trace_many) = fit(threads);
        assert_eq!(one, many, "{threads} threads");
        assert_eq!(trace_one, trace_many);
    }
}

#[test]
fn small_problem_loss_never_rises() {
    let mut rng = common::rng(8);
    let (x, y) = common::random_dataset(&mut rng);
    let params = GbdtParams { n_estimators: 200, learning_rate: 0.1, max_depth: 4, ..Default::default() };
    let (_, trace) = gbdt::fit_ensemble(&Matrix::from_rows(&x).unwrap(), &y, &params).unwrap();
    assert!(trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
    assert!(trace[200] < trace[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn text_format_round_trips(seed in 0u64..10_000, rounds in 0usize..6, depth in 1usize..5) {
        let mut rng = common::rng(seed);
        let (x, y) = common::random_dataset(&mut rng);
        let m = Matrix::from_rows(x.iter().map(|r| {
            let mut v = [f64::NAN; seacast::features::N_FEATURES];
            v[..r.len()].copy_from_slice(r);
            v
        })).unwrap();
        let params = GbdtParams { n_estimators: rounds, learning_rate: 0.3, max_depth: depth, ..Default::default() };
        let (lon, _) = gbdt::fit_ensemble(&m, &y, &params).unwrap();
        let ylat: Vec<f64> = y.iter().map(|v| -v / 7.0).collect();
        let (lat, _) = gbdt::fit_ensemble(&m, &ylat, &params).unwrap();
        let model = gbdt::GbdtModel {
            params,
            lon,
            lat,
            feature_names: seacast::features::FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            encoding: Default::default(),
            prep: Default::default(),
        };
        let mut buf = Vec::new();
        gbdt::save_model(&model, &mut buf).unwrap();
        let back = gbdt::load_model(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &model);
        let mut again = Vec::new();
        gbdt::save_model(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }
}
