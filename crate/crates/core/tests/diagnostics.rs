use lobsim::diagnostics::{acf, moments, return_histogram, HIST_BINS};
use proptest::prelude::*;

fn series() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 100..400)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn acf_is_normalized_and_sign_blind(x in series()) {
        let a = acf(&x, 30).unwrap();
        prop_assert_eq!(a[0], 1.0);
        prop_assert!(a.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let b = acf(&neg, 30).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_accounts_for_every_return(x in series()) {
        let h = return_histogram(&x, HIST_BINS).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<usize>(), x.len());
        prop_assert_eq!(h.edges.len(), HIST_BINS + 1);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assert!((h.moments.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        prop_assert!((h.moments.std - std).abs() <= 1e-12 * std);
    }
}

#[test]
fn heavy_tails_show_positive_excess_kurtosis() {
    // mostly small moves with rare jumps
    let x: Vec<f64> = (0..10_000).map(|i| if i % 97 == 0 { 25.0 } else { ((i * 7919) % 13) as f64 - 6.0 }).collect();
    assert!(moments(&x).unwrap().excess_kurtosis > 3.0);
}
