use dpchart_core::dp::{
    exponential_probabilities, exponential_select, laplace_mechanism, laplace_noise, split_budget, NoiseSource,
};
use proptest::prelude::*;

/// Analytic Laplace CDF.
fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

#[test]
fn exponential_frequencies_match_softmax() {
    let scores = [0.1f64, 0.4, 0.25];
    let (sens, eps) = (0.2f64, 1.0f64);
    // Softmax computed directly, without the max shift.
    let raw: Vec<f64> = scores.iter().map(|q| (eps * q / (2.0 * sens)).exp()).collect();
    let z: f64 = raw.iter().sum();
    let expected: Vec<f64> = raw.iter().map(|r| r / z).collect();
    let p = exponential_probabilities(&scores, sens, eps).unwrap();
    for (a, b) in p.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    let mut src = NoiseSource::new(2024);
    let draws = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        counts[exponential_select(&scores, sens, eps, &mut src).unwrap()] += 1;
    }
    for (c, e) in counts.iter().zip(&expected) {
        assert!((*c as f64 / draws as f64 - e).abs() < 0.01, "{counts:?} vs {expected:?}");
    }
}

#[test]
fn laplace_matches_analytic_cdf() {
    let b = 1.5;
    let mut src = NoiseSource::new(77);
    let mut xs: Vec<f64> = (0..100_000).map(|_| laplace_noise(b, &mut src).unwrap()).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = laplace_cdf(x, b);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS distance {ks}");
}

#[test]
fn mechanism_scale_and_empty_input() {
    let mut a = NoiseSource::new(5);
    let mut b = NoiseSource::new(5);
    let out = laplace_mechanism(&[0.5], 2.0 / 1000.0, 1.0, &mut a).unwrap();
    let direct = 0.5 + laplace_noise(0.002, &mut b).unwrap();
    assert_eq!(out[0], direct);
    assert!(laplace_mechanism(&[], 0.01, 0.5, &mut a).unwrap().is_empty());
}

#[test]
fn extreme_scores_do_not_overflow() {
    let p = exponential_probabilities(&[1e6, 0.0, 1e6 - 1.0], 1e-3, 10.0).unwrap();
    assert!(p.iter().all(|x| x.is_finite()));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p[0] > 0.99);
}

proptest! {
    #[test]
    fn identical_seeds_give_identical_draws(seed in any::<u64>()) {
        let mut a = NoiseSource::new(seed);
        let mut b = NoiseSource::new(seed);
        for _ in 0..20 {
            prop_assert_eq!(laplace_noise(1.0, &mut a).unwrap(), laplace_noise(1.0, &mut b).unwrap());
            prop_assert_eq!(
                exponential_select(&[0.0, 1.0, 2.0], 1.0, 1.0, &mut a).unwrap(),
                exponential_select(&[0.0, 1.0, 2.0], 1.0, 1.0, &mut b).unwrap()
            );
        }
        let mut s1 = a.substream("marginals");
        let mut s2 = b.substream("marginals");
        prop_assert_eq!(s1.uniform(), s2.uniform());
    }

    #[test]
    fn budget_split_sums_exactly(eps in 1e-6f64..1e3, frac in 0.001f64..0.999) {
        let b = split_budget(eps, frac).unwrap();
        prop_assert_eq!(b.epsilon_structure + b.epsilon_marginals, eps);
        prop_assert!(b.epsilon_structure > 0.0 && b.epsilon_marginals > 0.0);
    }

    #[test]
    fn probabilities_form_a_distribution(scores in prop::collection::vec(-50.0f64..50.0, 1..20), eps in 0.01f64..10.0) {
        let p = exponential_probabilities(&scores, 0.5, eps).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Higher score never gets lower probability.
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] > scores[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }
}
