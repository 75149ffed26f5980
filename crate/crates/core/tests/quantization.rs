use fedstas_core::compress::{
    compressed_norm, is_compress, quantization_sse, restore, SketchConfig,
};
use proptest::collection::vec;
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn cfg(levels: usize, dim: usize) -> SketchConfig {
    SketchConfig {
        sketch_dim: dim,
        levels,
    }
}

/// Plain Lloyd from `k` distinct random points; returns the final SSE.
fn lloyd_sse(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut centers: Vec<f64> = sample(rng, values.len(), k)
        .into_iter()
        .map(|i| values[i])
        .collect();
    let mut assign = vec![0usize; values.len()];
    for _ in 0..1000 {
        let mut changed = false;
        for (a, v) in assign.iter_mut().zip(values) {
            let best = (0..k)
                .min_by(|&i, &j| (v - centers[i]).abs().total_cmp(&(v - centers[j]).abs()))
                .unwrap();
            changed |= *a != best;
            *a = best;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<f64> = values
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(v, _)| *v)
                .collect();
            if !members.is_empty() {
                *center = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    values
        .iter()
        .zip(&assign)
        .map(|(v, &a)| (v - centers[a]).powi(2))
        .sum()
}

#[test]
fn matches_best_of_200_restart_lloyd_on_most_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut wins = 0;
    for _ in 0..50 {
        let values: Vec<f64> = (0..256).map(|_| rng.sample(StandardNormal)).collect();
        let cg = is_compress(&values, &cfg(9, values.len())).unwrap();
        let ours = quantization_sse(&values, &cg);
        let oracle = (0..200)
            .map(|_| lloyd_sse(&values, 9, &mut rng))
            .fold(f64::INFINITY, f64::min);
        if ours <= oracle + 1e-9 {
            wins += 1;
        }
    }
    assert!(
        wins >= 45,
        "{wins}/50 trials at or below the restart oracle"
    );
}

/// Minimum error over every split of the sorted values into `k` contiguous groups.
fn best_segmentation(sorted: &[f64], k: usize) -> f64 {
    fn sse(group: &[f64]) -> f64 {
        let mean = group.iter().sum::<f64>() / group.len() as f64;
        group.iter().map(|v| (v - mean).powi(2)).sum()
    }
    if k == 1 {
        return sse(sorted);
    }
    (1..=sorted.len() - (k - 1))
        .map(|i| sse(&sorted[..i]) + best_segmentation(&sorted[i..], k - 1))
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn small_inputs_reach_the_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..200 {
        let n = 3 + trial % 10;
        let k = 1 + trial % 4;
        let values: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let cg = is_compress(&values, &cfg(k, n)).unwrap();
        let oracle = if k >= n {
            0.0
        } else {
            best_segmentation(&sorted, k)
        };
        assert!(
            (quantization_sse(&values, &cg) - oracle).abs() <= 1e-12,
            "trial {trial}"
        );
    }
}

#[test]
fn norm_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
    let cg = is_compress(&values, &cfg(9, values.len())).unwrap();
    let mut sq = 0.0;
    for &i in cg.indices() {
        sq += cg.centroids()[i as usize] * cg.centroids()[i as usize];
    }
    assert!((compressed_norm(&cg) - sq.sqrt()).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn error_non_increasing_in_levels(values in vec(-10.0f64..10.0, 2..120), levels in 1usize..12) {
        let a = is_compress(&values, &cfg(levels, values.len())).unwrap();
        let b = is_compress(&values, &cfg(levels + 1, values.len())).unwrap();
        prop_assert!(quantization_sse(&values, &b) <= quantization_sse(&values, &a) + 1e-9);
    }

    #[test]
    fn compression_is_idempotent(values in vec(-10.0f64..10.0, 1..120), levels in 1usize..12) {
        let c = cfg(levels, values.len());
        let first = is_compress(&values, &c).unwrap();
        let again = is_compress(&restore(&first), &c).unwrap();
        prop_assert_eq!(first, again);
    }

    #[test]
    fn canonical_form(values in vec(-10.0f64..10.0, 1..120), levels in 1usize..12) {
        let cg = is_compress(&values, &cfg(levels, values.len())).unwrap();
        prop_assert!(cg.centroids().len() <= levels);
        prop_assert!(cg.centroids().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(cg.indices().iter().all(|&i| (i as usize) < cg.centroids().len()));
        prop_assert_eq!(cg.indices().len(), values.len());
    }
}
