use fedstas_core::data_sampling::{mse_p_tilde_with_error, sample_local, DataSamplePlan};
use fedstas_core::model::{Example, LocalDataset, ParamVector};
use fedstas_core::privacy::PrivacyConfig;
use fedstas_core::sampling::{
    aggregate, full_aggregate, importance_probs, neyman_allocate, sample_clients, stratum_std,
    uniform_plan, AggregationMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// 20 clients in three strata with stratum-specific update scales.
fn instance() -> (Vec<Vec<usize>>, Vec<ParamVector>) {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let strata = vec![
        (0..8).collect::<Vec<_>>(),
        (8..15).collect(),
        (15..20).collect(),
    ];
    let mut updates = Vec::new();
    for (h, scale) in [(0usize, 0.5), (1, 2.0), (2, 5.0)] {
        for _ in &strata[h] {
            updates.push(ParamVector(
                (0..6)
                    .map(|j| {
                        scale * (1.0 + j as f64 * 0.1)
                            + scale * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect(),
            ));
        }
    }
    (strata, updates)
}

struct Moments {
    n: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            n: 0,
            sum: vec![0.0; dim],
            sq: vec![0.0; dim],
        }
    }
    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for ((s, q), v) in self.sum.iter_mut().zip(&mut self.sq).zip(x) {
            *s += v;
            *q += v * v;
        }
    }
    fn mean(&self, j: usize) -> f64 {
        self.sum[j] / self.n as f64
    }
    fn var(&self, j: usize) -> f64 {
        self.sq[j] / self.n as f64 - self.mean(j).powi(2)
    }
}

fn stratified_moments(
    mode: AggregationMode,
    norm_probs: bool,
    trials: usize,
    m: usize,
) -> (Moments, ParamVector) {
    let (strata, updates) = instance();
    let norms: Vec<Vec<f64>> = strata
        .iter()
        .map(|s| s.iter().map(|&k| updates[k].norm()).collect())
        .collect();
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let alloc = neyman_allocate(&sizes, &stratum_std(&norms), m).unwrap();
    let probs: Vec<Vec<f64>> = norms
        .iter()
        .map(|n| {
            if norm_probs {
                importance_probs(n).unwrap()
            } else {
                vec![1.0 / n.len() as f64; n.len()]
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mom = Moments::new(6);
    for _ in 0..trials {
        let plan = sample_clients(&strata, &alloc, &probs, mode, &mut rng).unwrap();
        let picked: Vec<&ParamVector> = plan
            .selected
            .iter()
            .map(|s| &updates[s.client_id])
            .collect();
        mom.push(aggregate(&picked, &plan, mode).unwrap().as_slice());
    }
    (mom, full_aggregate(&updates).unwrap())
}

fn assert_unbiased(mom: &Moments, full: &ParamVector) {
    for j in 0..full.len() {
        let se = (mom.var(j) / mom.n as f64).sqrt();
        let gap = (mom.mean(j) - full.0[j]).abs();
        assert!(gap <= 4.0 * se, "coordinate {j}: gap {gap}, se {se}");
    }
}

#[test]
fn ht_corrected_aggregation_is_unbiased_under_norm_sampling() {
    let (mom, full) = stratified_moments(AggregationMode::HtCorrected, true, 20_000, 6);
    assert_unbiased(&mom, &full);
}

#[test]
fn plain_aggregation_is_unbiased_under_uniform_within_stratum_sampling() {
    let (mom, full) = stratified_moments(AggregationMode::Plain, false, 20_000, 6);
    assert_unbiased(&mom, &full);
}

#[test]
fn stratification_reduces_variance_versus_uniform_sampling() {
    let trials = 10_000;
    let m = 6;
    let (strat, _) = stratified_moments(AggregationMode::HtCorrected, true, trials, m);
    let (_, updates) = instance();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut uni = Moments::new(6);
    for _ in 0..trials {
        let plan = uniform_plan(updates.len(), m, &mut rng).unwrap();
        let picked: Vec<&ParamVector> = plan
            .selected
            .iter()
            .map(|s| &updates[s.client_id])
            .collect();
        uni.push(
            aggregate(&picked, &plan, AggregationMode::Plain)
                .unwrap()
                .as_slice(),
        );
    }
    let total = |m: &Moments| (0..6).map(|j| m.var(j)).sum::<f64>();
    assert!(
        total(&strat) <= total(&uni),
        "stratified {} vs uniform {}",
        total(&strat),
        total(&uni)
    );
}

#[test]
fn expected_sample_size_matches_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let sizes: Vec<usize> = (0..10).map(|_| rng.random_range(20..=80)).collect();
    let n: usize = sizes.iter().sum();
    let examples: Vec<Example> = (0..n)
        .map(|i| Example {
            index: i,
            features: vec![0.0],
            label: 0,
        })
        .collect();
    let mut offset = 0;
    let clients: Vec<LocalDataset> = sizes
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let c = LocalDataset {
                client_id: k,
                examples: examples[offset..offset + s].iter().collect(),
            };
            offset += s;
            c
        })
        .collect();
    let budget = 50;
    let plan = DataSamplePlan::new(budget, n as f64, clients.len()).unwrap();
    let trials = 10_000;
    let mut total = 0usize;
    for _ in 0..trials {
        total += clients
            .iter()
            .map(|c| sample_local(c, &plan, &mut rng).len())
            .sum::<usize>();
    }
    let mean = total as f64 / trials as f64;
    let rel = (mean - budget as f64).abs() / budget as f64;
    assert!(rel < 0.02, "mean {mean}");
}

#[test]
fn p_tilde_error_shrinks_with_more_clients() {
    let cfg = PrivacyConfig::from_epsilon(3.0, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut last = f64::INFINITY;
    for m in [10usize, 100, 1000] {
        let sizes: Vec<u64> = (0..m).map(|_| rng.random_range(20..=80)).collect();
        let total: u64 = sizes.iter().sum();
        let budget = (0.1 * total as f64).ceil() as usize;
        let est = mse_p_tilde_with_error(&sizes, &cfg, budget, 10_000, &mut rng);
        assert!(est.mse < last, "m = {m}: {} not below {last}", est.mse);
        last = est.mse;
    }
}
