use lobsim::svm::{
    grid_search, train_ovo, ClassificationReport, Kernel, SolverOptions, SvmHyperParams, GRID_C, GRID_DEGREE, GRID_GAMMA,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(seed: u64, classes: &[u8], per: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (k, &c) in classes.iter().enumerate() {
        let angle = k as f64 * std::f64::consts::TAU / classes.len() as f64;
        for _ in 0..per {
            x.push(vec![3.0 * angle.cos() + rng.random_range(-spread..spread), 3.0 * angle.sin() + rng.random_range(-spread..spread)]);
            y.push(c);
        }
    }
    (x, y)
}

#[test]
fn linear_weights_reproduce_the_kernel_expansion() {
    let (x, y) = blobs(1, &[1, 2, 3, 4], 25, 2.0);
    let model = train_ovo(&x, &y, &SvmHyperParams::linear(1.0), &SolverOptions::default()).unwrap();
    for pair in &model.pairs {
        let w = pair.weights.as_ref().expect("linear pairs carry weights");
        for row in &x {
            let primal: f64 = w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + pair.bias;
            let dual: f64 = pair
                .support
                .iter()
                .zip(&pair.coef)
                .map(|(&s, c)| c * Kernel::Linear.eval(&model.support_vectors[s], row))
                .sum::<f64>()
                + pair.bias;
            assert!((primal - dual).abs() < 1e-6, "{primal} vs {dual}");
        }
    }
}

#[test]
fn relabeling_permutes_predictions() {
    let (x, y) = blobs(2, &[1, 2, 3], 30, 1.0);
    let perm = |c: u8| [0u8, 7, 3, 5][c as usize];
    let y2: Vec<u8> = y.iter().map(|&c| perm(c)).collect();
    for hp in [SvmHyperParams::linear(1.0), SvmHyperParams { kernel: Kernel::Rbf { gamma: 0.5 }, c: 10.0 }] {
        let a = train_ovo(&x, &y, &hp, &SolverOptions::default()).unwrap();
        let b = train_ovo(&x, &y2, &hp, &SolverOptions::default()).unwrap();
        let (probe, _) = blobs(3, &[1, 2, 3], 20, 1.0);
        let pa: Vec<u8> = a.predict_all(&probe).into_iter().map(perm).collect();
        assert_eq!(pa, b.predict_all(&probe));
    }
}

#[test]
fn grid_search_is_reproducible() {
    let (x, y) = blobs(4, &[1, 2, 3], 15, 2.5);
    let (vx, vy) = blobs(5, &[1, 2, 3], 10, 2.5);
    let grid: Vec<SvmHyperParams> = GRID_C
        .iter()
        .flat_map(|&c| {
            [SvmHyperParams::linear(c)]
                .into_iter()
                .chain(GRID_GAMMA.iter().map(move |&g| SvmHyperParams { kernel: Kernel::Rbf { gamma: g }, c }))
                .chain(GRID_DEGREE.iter().map(move |&d| SvmHyperParams { kernel: Kernel::Poly { gamma: 0.1, degree: d }, c }))
        })
        .collect();
    let first = grid_search((&x, &y), (&vx, &vy), &grid, &SolverOptions::default()).unwrap();
    let second = grid_search((&x, &y), (&vx, &vy), &grid, &SolverOptions::default()).unwrap();
    assert_eq!(first.0, second.0);
    assert_eq!(first.1, second.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positive_scaling_keeps_votes(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let (x, y) = blobs(seed, &[1, 2, 3, 4], 8, 3.0);
        let model = train_ovo(&x, &y, &SvmHyperParams::linear(1.0), &SolverOptions::default()).unwrap();
        for row in &x {
            let d = model.decisions(row);
            let scaled: Vec<f64> = d.iter().map(|v| v * scale).collect();
            prop_assert_eq!(model.vote(&d), model.vote(&scaled));
        }
    }

    #[test]
    fn metric_identities(pairs in prop::collection::vec((0u8..5, 0u8..5), 1..300)) {
        let truth: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let r = ClassificationReport::from_predictions(&truth, &pred).unwrap();
        let support: usize = r.per_class.iter().map(|m| m.support).sum();
        prop_assert_eq!(support, truth.len());
        let micro_recall = r.per_class.iter().map(|m| m.recall * m.support as f64).sum::<f64>() / support as f64;
        prop_assert!((micro_recall - r.accuracy).abs() < 1e-12);
    }
}
