//! Synthetic datasets and client partitions.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::model::{Example, LocalDataset};
use crate::rng::{rng_stream, Domain};
use crate::{Error, Result};

/// Gaussian class blobs with unit covariance. Class means are seeded random directions
/// scaled to norm `class_separation`; the test split shares the means with the training
/// split but uses its own draws. Examples are interleaved by class and indexed from 0
/// within each split.
pub fn synthesize_split(
    num_classes: usize,
    input_dim: usize,
    train_per_class: usize,
    test_per_class: usize,
    class_separation: f64,
    seed: u64,
) -> (Vec<Example>, Vec<Example>) {
    let mut rng = rng_stream(seed, Domain::Dataset, 0, 0);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let mut dir: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = libm::sqrt(dir.iter().map(|v| v * v).sum::<f64>()).max(f64::MIN_POSITIVE);
            for v in &mut dir {
                *v *= class_separation / norm;
            }
            dir
        })
        .collect();
    let draw = |per_class: usize, round: usize| {
        let mut rng = rng_stream(seed, Domain::Dataset, round, 0);
        let mut out = Vec::with_capacity(per_class * num_classes);
        for _ in 0..per_class {
            for (label, mean) in means.iter().enumerate() {
                let features = mean
                    .iter()
                    .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                    .collect();
                out.push(Example {
                    index: out.len(),
                    features,
                    label,
                });
            }
        }
        out
    };
    (draw(train_per_class, 1), draw(test_per_class, 2))
}

/// `num_classes * per_class` examples; see [`synthesize_split`].
pub fn synthesize(
    num_classes: usize,
    input_dim: usize,
    per_class: usize,
    class_separation: f64,
    seed: u64,
) -> Vec<Example> {
    synthesize_split(num_classes, input_dim, per_class, 0, class_separation, seed).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Scheme {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PartitionRecipe {
    pub scheme: Scheme,
    pub num_clients: usize,
    /// Dirichlet concentration; unused by the IID scheme.
    pub alpha_dir: f64,
    pub seed: u64,
}

/// Assignment of source examples to clients.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub recipe: PartitionRecipe,
    /// Source positions held by each client, ascending.
    pub clients: Vec<Vec<usize>>,
    /// `label_histogram[k][c]`: examples of class `c` held by client `k`.
    pub label_histogram: Vec<Vec<usize>>,
}

impl Partition {
    /// Validates that `clients` is a partition of `0..examples.len()` into non-empty sets and
    /// computes the label histogram.
    pub fn from_clients(
        recipe: PartitionRecipe,
        mut clients: Vec<Vec<usize>>,
        examples: &[Example],
        num_classes: usize,
    ) -> Result<Self> {
        if clients.len() != recipe.num_clients {
            return Err(Error::contract(alloc::format!(
                "{} client lists for {} clients",
                clients.len(),
                recipe.num_clients
            )));
        }
        let mut seen = vec![false; examples.len()];
        let mut histogram = vec![vec![0usize; num_classes]; clients.len()];
        for (k, list) in clients.iter_mut().enumerate() {
            if list.is_empty() {
                return Err(Error::contract(alloc::format!(
                    "client {k} holds no examples"
                )));
            }
            list.sort_unstable();
            for &i in list.iter() {
                let Some(slot) = seen.get_mut(i) else {
                    return Err(Error::contract(alloc::format!("example {i} out of range")));
                };
                if *slot {
                    return Err(Error::contract(alloc::format!(
                        "example {i} assigned twice"
                    )));
                }
                *slot = true;
                let label = examples[i].label;
                if label >= num_classes {
                    return Err(Error::contract(alloc::format!(
                        "label {label} out of range"
                    )));
                }
                histogram[k][label] += 1;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::contract(alloc::format!("example {i} not assigned")));
        }
        Ok(Partition {
            recipe,
            clients,
            label_histogram: histogram,
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(Vec::len).collect()
    }

    /// Borrowed per-client views of `examples`.
    pub fn client_datasets<'a>(&self, examples: &'a [Example]) -> Vec<LocalDataset<'a>> {
        self.clients
            .iter()
            .enumerate()
            .map(|(client_id, idx)| LocalDataset {
                client_id,
                examples: idx.iter().map(|&i| &examples[i]).collect(),
            })
            .collect()
    }
}

fn num_classes_of(examples: &[Example]) -> usize {
    examples.iter().map(|e| e.label + 1).max().unwrap_or(0)
}

fn check_counts(examples: &[Example], num_clients: usize) -> Result<()> {
    if num_clients == 0 {
        return Err(Error::config("num_clients must be positive"));
    }
    if examples.len() < num_clients {
        return Err(Error::contract(alloc::format!(
            "{} examples cannot cover {num_clients} clients",
            examples.len()
        )));
    }
    Ok(())
}

/// Uniform split: a seeded shuffle dealt round-robin, so client sizes differ by at most one.
pub fn partition_iid(examples: &[Example], num_clients: usize, seed: u64) -> Result<Partition> {
    check_counts(examples, num_clients)?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    rand::seq::SliceRandom::shuffle(
        order.as_mut_slice(),
        &mut rng_stream(seed, Domain::Partition, 0, 0),
    );
    let mut clients = vec![Vec::new(); num_clients];
    for (slot, i) in order.into_iter().enumerate() {
        clients[slot % num_clients].push(i);
    }
    let recipe = PartitionRecipe {
        scheme: Scheme::Iid,
        num_clients,
        alpha_dir: 0.0,
        seed,
    };
    Partition::from_clients(recipe, clients, examples, num_classes_of(examples))
}

/// One draw from a symmetric Dirichlet, computed in log space so that very small
/// concentrations do not underflow: `ln G_i = ln G'_i + ln(U_i) / α` with
/// `G'_i ~ Gamma(α + 1)`.
pub fn dirichlet_draw<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) || n == 0 {
        return Err(Error::config(
            "Dirichlet concentration must be positive and finite",
        ));
    }
    let gamma = Gamma::new(alpha + 1.0, 1.0).map_err(|e| Error::config(alloc::format!("{e}")))?;
    let logs: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u = 1.0 - rng.random::<f64>();
            libm::log(g) + libm::log(u) / alpha
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| libm::exp(l - max)).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Label-skewed split: for each class (ascending) a Dirichlet(`alpha_dir`) draw over clients
/// gives the probability that each of that class's examples goes to each client. Clients
/// left empty then take the highest-indexed example of the currently largest client.
pub fn partition_dirichlet(
    examples: &[Example],
    num_clients: usize,
    alpha_dir: f64,
    seed: u64,
) -> Result<Partition> {
    check_counts(examples, num_clients)?;
    let num_classes = num_classes_of(examples);
    let mut rng = rng_stream(seed, Domain::Partition, 0, 0);
    let mut clients = vec![Vec::new(); num_clients];
    for class in 0..num_classes {
        let props = dirichlet_draw(alpha_dir, num_clients, &mut rng)?;
        let mut acc = 0.0;
        let cumulative: Vec<f64> = props
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        for (i, _) in examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == class)
        {
            let target = rng.random::<f64>() * acc;
            let k = cumulative
                .partition_point(|&c| c <= target)
                .min(num_clients - 1);
            clients[k].push(i);
        }
    }
    for k in 0..num_clients {
        if clients[k].is_empty() {
            let donor = (0..num_clients)
                .max_by(|&a, &b| clients[a].len().cmp(&clients[b].len()).then(b.cmp(&a)))
                .expect("at least one client");
            let moved = clients[donor]
                .pop()
                .expect("donor holds at least two examples");
            clients[k].push(moved);
        }
    }
    let recipe = PartitionRecipe {
        scheme: Scheme::Dirichlet,
        num_clients,
        alpha_dir,
        seed,
    };
    Partition::from_clients(recipe, clients, examples, num_classes)
}

/// Partition by recipe.
pub fn partition(examples: &[Example], recipe: &PartitionRecipe) -> Result<Partition> {
    match recipe.scheme {
        Scheme::Iid => partition_iid(examples, recipe.num_clients, recipe.seed),
        Scheme::Dirichlet => {
            partition_dirichlet(examples, recipe.num_clients, recipe.alpha_dir, recipe.seed)
        }
    }
}

/// Shannon entropy (nats) of a label histogram.
pub fn label_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * libm::log(p)
        })
        .sum()
}
