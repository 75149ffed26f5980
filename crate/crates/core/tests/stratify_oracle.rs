use fedstas_core::stratify::{stratify, within_sse, DEFAULT_MAX_ITER};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Minimum SSE over every split of the points into two non-empty groups.
fn best_bipartition(points: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = points.len();
    let dim = points[0].len();
    let mut best = (f64::INFINITY, Vec::new());
    // Client 0 is pinned to group 0 so each split is visited once.
    for mask in 1u32..(1 << (n - 1)) {
        let labels: Vec<usize> = (0..n)
            .map(|i| {
                if i > 0 && mask >> (i - 1) & 1 == 1 {
                    1
                } else {
                    0
                }
            })
            .collect();
        let mut centers = vec![vec![0.0; dim]; 2];
        let mut counts = [0usize; 2];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (c, v) in centers[l].iter_mut().zip(p) {
                *c += v;
            }
        }
        for (c, &k) in centers.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= k as f64);
        }
        let sse = within_sse(points, &labels, &centers);
        if sse < best.0 {
            best = (sse, labels);
        }
    }
    best
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let flip = a[0] != b[0];
    a.iter().zip(b).all(|(&x, &y)| (x != y) == flip)
}

#[test]
fn planted_blobs_match_exhaustive_bipartition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let n = 6 + trial % 7;
        let split = 1 + trial % (n - 1);
        let dim = 4;
        let points: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let offset = if i < split { -3.0 } else { 3.0 };
                (0..dim)
                    .map(|_| offset + 0.3 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let (oracle_sse, oracle) = best_bipartition(&points);
        let s = stratify(
            &points,
            2,
            &mut ChaCha8Rng::seed_from_u64(trial as u64),
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        assert!(same_partition(&s.assignments, &oracle), "trial {trial}");
        let sse = within_sse(&points, &s.assignments, &s.centers);
        assert!(
            (sse - oracle_sse).abs() <= 1e-9 * (1.0 + oracle_sse),
            "trial {trial}"
        );
    }
}
