//! Client stratification: Lloyd's algorithm over restored compressed updates, started
//! from `H` distinct randomly chosen clients.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Stratification {
    /// Stratum of each client.
    pub assignments: Vec<usize>,
    /// Stratum centers. An empty stratum keeps its last center.
    pub centers: Vec<Vec<f64>>,
    /// `N_h` per stratum; may contain zeros.
    pub stratum_sizes: Vec<usize>,
    /// Center updates performed before the assignment reached a fixed point (or the bound).
    pub iterations_run: usize,
    /// Within-stratum SSE after each center update.
    pub sse_history: Vec<f64>,
}

impl Stratification {
    pub fn num_strata(&self) -> usize {
        self.centers.len()
    }

    /// Client ids of each stratum, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.centers.len()];
        for (client, &h) in self.assignments.iter().enumerate() {
            out[h].push(client);
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_center(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = sq_dist(point, &centers[0]);
    for (i, c) in centers.iter().enumerate().skip(1) {
        let d = sq_dist(point, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Sum of squared distances of each point to its assigned center.
pub fn within_sse(points: &[Vec<f64>], assignments: &[usize], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &h)| sq_dist(p, &centers[h]))
        .sum()
}

/// Partitions `points` into `strata` groups.
///
/// Initial centers are `strata` distinct points drawn from `rng`. Each iteration moves
/// each non-empty stratum's center to the mean of its members and then reassigns every
/// point to its nearest center (ties to the lower stratum index); the loop ends when a
/// reassignment changes nothing or after `max_iter` center updates.
pub fn stratify<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    strata: usize,
    rng: &mut R,
    max_iter: usize,
) -> Result<Stratification> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Empty("clients to stratify"));
    }
    if strata == 0 || strata > n {
        return Err(Error::contract(alloc::format!(
            "cannot form {strata} strata from {n} clients"
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::contract("stratification inputs differ in length"));
    }

    let mut chosen = rand::seq::index::sample(rng, n, strata).into_vec();
    chosen.sort_unstable();
    let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&k| points[k].clone()).collect();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest_center(p, &centers)).collect();
    let mut iterations_run = 0;
    let mut sse_history = Vec::new();

    while iterations_run < max_iter {
        let mut sums = vec![vec![0.0; dim]; strata];
        let mut counts = vec![0usize; strata];
        for (p, &h) in points.iter().zip(&assignments) {
            counts[h] += 1;
            for (s, v) in sums[h].iter_mut().zip(p) {
                *s += v;
            }
        }
        for h in 0..strata {
            if counts[h] > 0 {
                let inv = counts[h] as f64;
                for (c, s) in centers[h].iter_mut().zip(&sums[h]) {
                    *c = s / inv;
                }
            }
        }
        iterations_run += 1;
        sse_history.push(within_sse(points, &assignments, &centers));

        let next: Vec<usize> = points.iter().map(|p| nearest_center(p, &centers)).collect();
        let changed = next != assignments;
        assignments = next;
        if !changed {
            break;
        }
    }

    let mut stratum_sizes = vec![0usize; strata];
    for &h in &assignments {
        stratum_sizes[h] += 1;
    }
    Ok(Stratification {
        assignments,
        centers,
        stratum_sizes,
        iterations_run,
        sse_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_stream, Domain};

    fn blobs(seed: u64, per: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = rng_stream(seed, Domain::Dataset, 0, 0);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..2 * per {
            let side = i % 2;
            let offset = if side == 0 { -5.0 } else { 5.0 };
            pts.push(
                (0..dim)
                    .map(|_| offset + rng.random_range(-0.3..0.3))
                    .collect(),
            );
            truth.push(side);
        }
        (pts, truth)
    }

    #[test]
    fn one_stratum_per_client_when_h_equals_n() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let s = stratify(&pts, 6, &mut rng_stream(1, Domain::Stratify, 0, 0), 100).unwrap();
        assert!(s.stratum_sizes.iter().all(|&c| c == 1));
        assert_eq!(s.iterations_run, 1);
        for (k, &h) in s.assignments.iter().enumerate() {
            assert_eq!(s.centers[h], pts[k]);
        }
    }

    #[test]
    fn single_stratum_center_is_global_mean() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0]).collect();
        let s = stratify(&pts, 1, &mut rng_stream(1, Domain::Stratify, 0, 0), 100).unwrap();
        assert_eq!(s.stratum_sizes, vec![5]);
        assert_eq!(s.centers[0], vec![2.0, 1.0]);
    }

    #[test]
    fn planted_blobs_recovered() {
        let (pts, truth) = blobs(3, 5, 4);
        let s = stratify(&pts, 2, &mut rng_stream(2, Domain::Stratify, 0, 0), 100).unwrap();
        let flip = s.assignments[0] != truth[0];
        for (a, t) in s.assignments.iter().zip(&truth) {
            assert_eq!(*a, if flip { 1 - t } else { *t });
        }
    }

    #[test]
    fn sse_non_increasing_and_partition_complete() {
        let mut rng = rng_stream(4, Domain::Dataset, 0, 0);
        for trial in 0..20 {
            let pts: Vec<Vec<f64>> = (0..40)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let s = stratify(&pts, 5, &mut rng_stream(trial, Domain::Stratify, 0, 0), 100).unwrap();
            for w in s.sse_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            assert_eq!(s.stratum_sizes.iter().sum::<usize>(), 40);
            assert!(s.iterations_run <= 100);
            let members = s.members();
            for (h, m) in members.iter().enumerate() {
                if m.is_empty() {
                    continue;
                }
                for (j, c) in s.centers[h].iter().enumerate() {
                    let mean = m.iter().map(|&k| pts[k][j]).sum::<f64>() / m.len() as f64;
                    assert!((mean - c).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn max_iter_bounds_iterations() {
        let mut rng = rng_stream(5, Domain::Dataset, 0, 0);
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let s = stratify(&pts, 6, &mut rng_stream(0, Domain::Stratify, 0, 0), 1).unwrap();
        assert_eq!(s.iterations_run, 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let (pts, _) = blobs(6, 8, 3);
        let a = stratify(&pts, 3, &mut rng_stream(9, Domain::Stratify, 4, 0), 100).unwrap();
        let b = stratify(&pts, 3, &mut rng_stream(9, Domain::Stratify, 4, 0), 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        let pts = vec![vec![0.0], vec![1.0]];
        let mut rng = rng_stream(0, Domain::Stratify, 0, 0);
        assert!(stratify(&pts, 3, &mut rng, 10).is_err());
        assert!(stratify(&[vec![0.0], vec![1.0, 2.0]], 1, &mut rng, 10).is_err());
        assert!(stratify(&[], 1, &mut rng, 10).is_err());
    }
}
