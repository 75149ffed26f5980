use fedstas_core::privacy::{
    alpha_for_epsilon, estimate_total, ldp_ratio, privatize_size, PrivacyConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Output distribution of the size report for a clipped size `nc`, built by walking both
/// branches of the mechanism.
fn enumerate(nc: u64, alpha: f64, m: u64) -> Vec<f64> {
    let mut p = vec![0.0; m as usize];
    p[nc as usize] += alpha;
    for fake in 1..m {
        p[fake as usize] += (1.0 - alpha) / (m - 1) as f64;
    }
    p
}

fn max_ratio(alpha: f64, m: u64) -> f64 {
    let tables: Vec<Vec<f64>> = (1..m).map(|nc| enumerate(nc, alpha, m)).collect();
    let mut worst: f64 = 0.0;
    for a in &tables {
        for b in &tables {
            for y in 1..m as usize {
                worst = worst.max(a[y] / b[y]);
            }
        }
    }
    worst
}

#[test]
fn enumeration_ratio_is_exactly_e_to_epsilon() {
    for (eps, m) in [(3.0f64, 100u64), (1.0, 10), (0.5, 5), (0.1, 3), (5.0, 37)] {
        let alpha = alpha_for_epsilon(eps, m).unwrap();
        let brute = max_ratio(alpha, m);
        assert!(
            (brute - eps.exp()).abs() <= 1e-9 * eps.exp(),
            "eps {eps} M {m}: {brute}"
        );
        let closed = ldp_ratio(&PrivacyConfig::from_epsilon(eps, m).unwrap());
        assert!((brute - closed).abs() <= 1e-9 * closed);
    }
}

#[test]
fn enumeration_matches_closed_form_for_arbitrary_alpha() {
    for alpha in [0.01, 0.05, 0.3, 0.9] {
        let cfg = PrivacyConfig::new(5, alpha).unwrap();
        assert!((max_ratio(alpha, 5) - ldp_ratio(&cfg)).abs() <= 1e-12 * ldp_ratio(&cfg));
    }
}

#[test]
fn total_estimate_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let sizes: Vec<u64> = (0..50).map(|_| rng.random_range(20..=80)).collect();
    let truth: u64 = sizes.iter().sum();
    let cfg = PrivacyConfig::from_epsilon(3.0, 100).unwrap();
    let trials = 20_000;
    let mut reports = vec![0u64; sizes.len()];
    let mut sum = 0.0;
    for _ in 0..trials {
        for (r, &n) in reports.iter_mut().zip(&sizes) {
            *r = privatize_size(n, &cfg, &mut rng);
        }
        sum += estimate_total(&reports, &cfg);
    }
    let rel = (sum / trials as f64 - truth as f64).abs() / truth as f64;
    assert!(rel < 0.01, "relative error {rel}");
}
