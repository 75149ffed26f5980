//! Data-level sampling on participating clients and the per-client update step.
//!
//! Every example of every participating client is kept independently with probability
//! `p̃ = data_budget / ñ`, where `ñ` is the (possibly privatized) total number of examples
//! held by the participants. The sample is drawn once per round and reused across the
//! local epochs.

use alloc::vec::Vec;

use rand::Rng;

use crate::compress::{compress_update, CompressedGradient, SketchConfig};
use crate::model::{local_train, Example, LocalDataset, ModelSpec, ParamVector, TrainConfig};
use crate::privacy::{estimate_total, privatize_size, PrivacyConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataSamplePlan {
    /// Per-example inclusion probability, in `(0, 1]`.
    pub inclusion_prob: f64,
    /// Requested number of examples across all participants.
    pub data_budget: usize,
}

/// Lower clamp for the total estimate: `max(ñ, participants, data_budget)`.
pub fn clamp_total(total_estimate: f64, participants: usize, data_budget: usize) -> f64 {
    let floor = participants.max(data_budget) as f64;
    if total_estimate.is_nan() {
        return floor;
    }
    total_estimate.max(floor)
}

impl DataSamplePlan {
    /// Plan for `data_budget` examples out of an estimated `total_estimate` held by
    /// `participants` clients.
    pub fn new(data_budget: usize, total_estimate: f64, participants: usize) -> Result<Self> {
        if data_budget == 0 {
            return Err(Error::config("data budget must be positive"));
        }
        let clamped = clamp_total(total_estimate, participants, data_budget);
        Ok(DataSamplePlan {
            inclusion_prob: (data_budget as f64 / clamped).min(1.0),
            data_budget,
        })
    }

    /// Keeps every example.
    pub fn everything(total: usize) -> Self {
        DataSamplePlan {
            inclusion_prob: 1.0,
            data_budget: total.max(1),
        }
    }
}

/// Independent Bernoulli(`p̃`) draw over the client's examples, in dataset order. An empty
/// draw is replaced by one uniformly chosen example.
pub fn sample_local<'a, R: Rng + ?Sized>(
    data: &LocalDataset<'a>,
    plan: &DataSamplePlan,
    rng: &mut R,
) -> Vec<&'a Example> {
    if data.examples.is_empty() {
        return Vec::new();
    }
    if plan.inclusion_prob >= 1.0 {
        return data.examples.clone();
    }
    let mut out: Vec<&Example> = data
        .examples
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < plan.inclusion_prob)
        .collect();
    if out.is_empty() {
        out.push(data.examples[rng.random_range(0..data.examples.len())]);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ParamVector,
    /// `params - params_before`
    pub delta: ParamVector,
    pub compressed: CompressedGradient,
    pub examples_used: usize,
}

/// Samples the client's data once, trains on the sample, and compresses the resulting
/// parameter delta.
#[allow(clippy::too_many_arguments)]
pub fn client_update<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    spec: &ModelSpec,
    client: &LocalDataset<'_>,
    params: &ParamVector,
    plan: &DataSamplePlan,
    train: &TrainConfig,
    sketch: &SketchConfig,
    sample_rng: &mut R1,
    train_rng: &mut R2,
) -> Result<ClientUpdate> {
    if client.is_empty() {
        return Err(Error::Empty("client dataset"));
    }
    if params.len() != spec.param_count() {
        return Err(Error::contract("parameters do not match the model"));
    }
    let sample = sample_local(client, plan, sample_rng);
    let trained = local_train(spec, params, &sample, train, train_rng)?;
    let delta = trained.sub(params);
    let compressed = compress_update(delta.as_slice(), sketch)?;
    Ok(ClientUpdate {
        client_id: client.client_id,
        params: trained,
        delta,
        compressed,
        examples_used: sample.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseEstimate {
    pub mse: f64,
    /// Standard error of `mse` across trials.
    pub std_error: f64,
}

/// Monte Carlo estimate of `E[(p̃ - p)^2]` with `p = data_budget / n` for the true total `n`
/// of `true_sizes` and `p̃` formed from privatized reports.
pub fn mse_p_tilde_with_error<R: Rng + ?Sized>(
    true_sizes: &[u64],
    cfg: &PrivacyConfig,
    data_budget: usize,
    trials: usize,
    rng: &mut R,
) -> MseEstimate {
    let m = true_sizes.len();
    let n: u64 = true_sizes.iter().sum();
    let p_true = data_budget as f64 / clamp_total(n as f64, m, data_budget);
    let mut reports = alloc::vec![0u64; m];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..trials.max(1) {
        for (r, &size) in reports.iter_mut().zip(true_sizes) {
            *r = privatize_size(size, cfg, rng);
        }
        let p_tilde =
            data_budget as f64 / clamp_total(estimate_total(&reports, cfg), m, data_budget);
        let err = (p_tilde - p_true) * (p_tilde - p_true);
        sum += err;
        sum_sq += err * err;
    }
    let t = trials.max(1) as f64;
    let mse = sum / t;
    let var = (sum_sq / t - mse * mse).max(0.0);
    MseEstimate {
        mse,
        std_error: libm::sqrt(var / t),
    }
}

/// Monte Carlo estimate of `E[(p̃ - p)^2]`; see [`mse_p_tilde_with_error`].
pub fn mse_p_tilde<R: Rng + ?Sized>(
    true_sizes: &[u64],
    cfg: &PrivacyConfig,
    data_budget: usize,
    trials: usize,
    rng: &mut R,
) -> f64 {
    mse_p_tilde_with_error(true_sizes, cfg, data_budget, trials, rng).mse
}
