//! Property tests over generated inputs: bounds and identities that must
//! hold for every finite parameterization, not just the seeded fixtures.

use bankgcn::bank::{diversity_penalty, BankLayerParams};
use bankgcn::data::stratified_split;
use bankgcn::graph::{Batch, Graph};
use bankgcn::model::{ModelParams, Prediction};
use bankgcn::spectral::{frequency_response_grid, FilterCoeffs};
use ndarray::Array2;
use proptest::collection::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seeded_graph(n: usize, d: usize, seed: u64) -> Graph<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((i, rng.random_range(0..i), 1.0));
    }
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    Graph::build(n, &edges, x, rng.random_range(0..2)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn omega_stays_in_unit_interval(
        sets in vec(vec(-100.0f64..100.0, 2..=5), 2..=6),
    ) {
        let order = sets[0].len();
        let filters: Vec<FilterCoeffs<f64>> = sets
            .into_iter()
            .map(|mut a| {
                a.resize(order, 0.0);
                FilterCoeffs::new(a).unwrap()
            })
            .collect();
        let omega = diversity_penalty(&filters);
        prop_assert!((0.0..=1.0).contains(&omega), "omega = {omega}");
    }

    #[test]
    fn bank_output_rows_are_unit_or_zero(seed in 0u64..1000, n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = seeded_graph(n, 3, seed);
        let layer = BankLayerParams::new(3, 8, 2, 2, &mut rng).unwrap();
        let out = layer.forward(&g, g.features()).unwrap();
        for row in out.rows() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(
                norm == 0.0 || (norm - 1.0).abs() <= 1e-9,
                "row norm = {norm}"
            );
        }
    }

    #[test]
    fn probabilities_form_a_distribution(
        logits in vec(-50.0f64..50.0, 2..=6),
    ) {
        let pred = Prediction::from_logits(&logits);
        let sum: f64 = pred.probabilities.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12, "sum = {sum}");
        for &p in &pred.probabilities {
            prop_assert!((0.0..=1.0).contains(&p));
        }
        let best = pred.probabilities[pred.predicted_class];
        for &p in &pred.probabilities {
            prop_assert!(best >= p);
        }
    }

    #[test]
    fn objective_decomposes_exactly(seed in 0u64..1000, gamma in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ModelParams::new(3, &[6], 2, 2, 2, gamma, &mut rng).unwrap();
        let graphs: Vec<Graph<f64>> =
            (0..3).map(|i| seeded_graph(4 + i, 3, seed.wrapping_add(i as u64))).collect();
        let batch = Batch::from_graphs(&graphs).unwrap();
        let obj = model.objective(&batch).unwrap();
        prop_assert_eq!(obj.total, obj.loss + gamma * obj.omega);
        prop_assert!((obj.omega - model.omega()).abs() == 0.0);
    }

    #[test]
    fn response_grid_agrees_with_pointwise_eval(
        alpha in vec(-2.0f64..2.0, 2..=5),
        points in 2usize..64,
    ) {
        let coeffs = FilterCoeffs::new(alpha).unwrap();
        let grid = frequency_response_grid(&coeffs, points).unwrap();
        prop_assert_eq!(grid.len(), points);
        for &(lambda, response) in &grid {
            prop_assert!((0.0..=2.0).contains(&lambda));
            let direct = coeffs.eval(lambda).unwrap();
            prop_assert!((response - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn split_is_a_partition_with_tight_proportions(
        class_sizes in vec(3usize..40, 2..=5),
        seed in 0u64..1000,
    ) {
        let mut labels = Vec::new();
        for (c, &size) in class_sizes.iter().enumerate() {
            labels.extend(std::iter::repeat_n(c, size));
        }
        let split = stratified_split(&labels, (0.8, 0.1, 0.1), seed).unwrap();

        let n = labels.len() as f64;
        prop_assert_eq!(split.train.len(), (0.8 * n + 0.5).floor() as usize);
        prop_assert_eq!(split.val.len(), (0.1 * n + 0.5).floor() as usize);

        let mut seen = vec![false; labels.len()];
        for &i in split.train.iter().chain(&split.val).chain(&split.test) {
            prop_assert!(!seen[i], "index {i} assigned twice");
            seen[i] = true;
        }
        prop_assert!(seen.iter().all(|&s| s), "some index unassigned");

        for (c, &size) in class_sizes.iter().enumerate() {
            for (part, ratio) in
                [(&split.train, 0.8), (&split.val, 0.1), (&split.test, 0.1)]
            {
                let got = part.iter().filter(|&&i| labels[i] == c).count() as f64;
                prop_assert!(
                    (got - ratio * size as f64).abs() <= 1.0 + 1e-12,
                    "class {c}: {got} in split with ratio {ratio} of {size}"
                );
            }
        }
    }
}
