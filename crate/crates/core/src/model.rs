//! Models, cross-entropy losses, analytic gradients and local mini-batch SGD.
//!
//! Parameter layout (row-major, concatenated in this order):
//!
//! * logistic: `W[num_classes][input_dim]`, `b[num_classes]`
//! * mlp: `W1[hidden][input_dim]`, `b1[hidden]`, `W2[num_classes][hidden]`, `b2[num_classes]`
//!
//! Batch reductions are accumulated in ascending [`Example::index`] order, so loss and
//! gradient are bit-identical under any permutation of the batch.

use alloc::vec;
use alloc::vec::Vec;
use core::borrow::Borrow;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ModelKind {
    /// Multinomial logistic regression (softmax over an affine map).
    #[cfg_attr(feature = "serde", serde(alias = "multinomial-logistic"))]
    Logistic,
    /// One tanh hidden layer followed by a softmax output layer.
    #[cfg_attr(feature = "serde", serde(alias = "mlp-1hidden"))]
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Width of the hidden layer; ignored by the logistic model.
    #[cfg_attr(feature = "serde", serde(default))]
    pub hidden_dim: usize,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Logistic,
            input_dim,
            num_classes,
            hidden_dim: 0,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_dim,
            num_classes,
            hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::config(
                "model input_dim and num_classes must be positive",
            ));
        }
        if self.kind == ModelKind::Mlp && self.hidden_dim == 0 {
            return Err(Error::config("mlp hidden_dim must be positive"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_dim);
        match self.kind {
            ModelKind::Logistic => c * d + c,
            ModelKind::Mlp => h * d + h + c * h + c,
        }
    }

    /// Initial parameters: zeros for the logistic model, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// weights and zero biases for the MLP.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = vec![0.0; self.param_count()];
        if self.kind == ModelKind::Mlp {
            let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_dim);
            let s1 = 1.0 / libm::sqrt(d as f64);
            let s2 = 1.0 / libm::sqrt(h as f64);
            for v in &mut values[..h * d] {
                *v = rng.random_range(-s1..s1);
            }
            let w2 = h * d + h;
            for v in &mut values[w2..w2 + c * h] {
                *v = rng.random_range(-s2..s2);
            }
        }
        ParamVector(values)
    }
}

/// Flat model parameters, or a gradient/update with the same layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    /// `self - other`
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum::<f64>())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// One labeled example. `index` is its position in the source dataset and fixes the
/// accumulation order inside batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub index: usize,
    pub features: Vec<f64>,
    pub label: usize,
}

/// A client's local data: borrowed views into the source dataset.
#[derive(Debug, Clone)]
pub struct LocalDataset<'a> {
    pub client_id: usize,
    pub examples: Vec<&'a Example>,
}

impl LocalDataset<'_> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning_rate must be finite and non-negative",
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        Ok(())
    }
}

fn check_inputs<B: Borrow<Example>>(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[B],
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if params.len() != spec.param_count() {
        return Err(Error::contract(alloc::format!(
            "parameter length {} does not match model ({})",
            params.len(),
            spec.param_count()
        )));
    }
    for ex in batch {
        let ex = ex.borrow();
        if ex.features.len() != spec.input_dim {
            return Err(Error::contract(alloc::format!(
                "example {} has {} features, model expects {}",
                ex.index,
                ex.features.len(),
                spec.input_dim
            )));
        }
        if ex.label >= spec.num_classes {
            return Err(Error::contract(alloc::format!(
                "example {} label {} out of range",
                ex.index,
                ex.label
            )));
        }
    }
    Ok(())
}

fn sorted_refs<B: Borrow<Example>>(batch: &[B]) -> Vec<&Example> {
    let mut refs: Vec<&Example> = batch.iter().map(|b| b.borrow()).collect();
    refs.sort_by_key(|e| e.index);
    refs
}

/// Scratch buffers for one forward/backward pass.
struct Scratch {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    dhidden: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        Scratch {
            hidden: vec![0.0; spec.hidden_dim],
            logits: vec![0.0; spec.num_classes],
            dhidden: vec![0.0; spec.hidden_dim],
        }
    }
}

fn affine(weights: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &weights[r * cols..(r + 1) * cols];
        let mut acc = bias[r];
        for (w, xi) in row.iter().zip(x) {
            acc += w * xi;
        }
        *o = acc;
    }
}

/// Computes logits into `scratch.logits` (and hidden activations for the MLP).
fn forward(spec: &ModelSpec, params: &[f64], x: &[f64], scratch: &mut Scratch) {
    let (d, c, h) = (spec.input_dim, spec.num_classes, spec.hidden_dim);
    match spec.kind {
        ModelKind::Logistic => {
            affine(
                &params[..c * d],
                &params[c * d..c * d + c],
                x,
                &mut scratch.logits,
            );
        }
        ModelKind::Mlp => {
            affine(
                &params[..h * d],
                &params[h * d..h * d + h],
                x,
                &mut scratch.hidden,
            );
            for v in &mut scratch.hidden {
                *v = libm::tanh(*v);
            }
            let w2 = h * d + h;
            affine(
                &params[w2..w2 + c * h],
                &params[w2 + c * h..w2 + c * h + c],
                &scratch.hidden,
                &mut scratch.logits,
            );
        }
    }
}

/// Turns logits into softmax probabilities in place; returns the cross-entropy for `label`.
fn softmax_xent(logits: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted_label_logit = logits[label] - max;
    let mut total = 0.0;
    for v in logits.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in logits.iter_mut() {
        *v /= total;
    }
    // logsumexp - logit_y, both relative to max
    (libm::log(total) - shifted_label_logit).max(0.0)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy over the batch.
pub fn forward_loss<B: Borrow<Example>>(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[B],
) -> Result<f64> {
    check_inputs(spec, params, batch)?;
    let mut scratch = Scratch::new(spec);
    let mut sum = 0.0;
    for ex in sorted_refs(batch) {
        forward(spec, &params.0, &ex.features, &mut scratch);
        sum += softmax_xent(&mut scratch.logits, ex.label);
    }
    let loss = sum / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(alloc::format!("loss is {loss}")));
    }
    Ok(loss)
}

/// Mean loss and its gradient with respect to the parameters.
pub fn loss_and_gradient<B: Borrow<Example>>(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[B],
) -> Result<(f64, ParamVector)> {
    check_inputs(spec, params, batch)?;
    let (d, c, h) = (spec.input_dim, spec.num_classes, spec.hidden_dim);
    let p = &params.0;
    let mut grad = vec![0.0; p.len()];
    let mut scratch = Scratch::new(spec);
    let mut sum = 0.0;
    for ex in sorted_refs(batch) {
        let x = &ex.features;
        forward(spec, p, x, &mut scratch);
        sum += softmax_xent(&mut scratch.logits, ex.label);
        // scratch.logits now holds softmax - onehot after this line
        scratch.logits[ex.label] -= 1.0;
        match spec.kind {
            ModelKind::Logistic => {
                let (gw, gb) = grad.split_at_mut(c * d);
                for (k, dl) in scratch.logits.iter().enumerate() {
                    for (g, xi) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *g += dl * xi;
                    }
                    gb[k] += dl;
                }
            }
            ModelKind::Mlp => {
                let w2 = h * d + h;
                let b2 = w2 + c * h;
                scratch.dhidden.iter_mut().for_each(|v| *v = 0.0);
                for (k, dl) in scratch.logits.iter().enumerate() {
                    let row = &p[w2 + k * h..w2 + (k + 1) * h];
                    for j in 0..h {
                        grad[w2 + k * h + j] += dl * scratch.hidden[j];
                        scratch.dhidden[j] += dl * row[j];
                    }
                    grad[b2 + k] += dl;
                }
                for j in 0..h {
                    let a = scratch.hidden[j];
                    let dpre = scratch.dhidden[j] * (1.0 - a * a);
                    for (g, xi) in grad[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += dpre * xi;
                    }
                    grad[h * d + j] += dpre;
                }
            }
        }
    }
    let n = batch.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    let loss = sum / n;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(alloc::string::String::from(
            "non-finite loss or gradient",
        )));
    }
    Ok((loss, ParamVector(grad)))
}

/// Gradient of [`forward_loss`].
pub fn gradient<B: Borrow<Example>>(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[B],
) -> Result<ParamVector> {
    loss_and_gradient(spec, params, batch).map(|(_, g)| g)
}

/// Runs `cfg.epochs` epochs of mini-batch SGD. Each epoch visits the data in a fresh
/// shuffle drawn from `rng`; the last batch of an epoch may be short.
pub fn local_train<B: Borrow<Example>, R: Rng + ?Sized>(
    spec: &ModelSpec,
    params_init: &ParamVector,
    data: &[B],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    if data.is_empty() {
        return Err(Error::Empty("local training data"));
    }
    let mut params = params_init.clone();
    let mut order: Vec<&Example> = data.iter().map(|e| e.borrow()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let grad = match gradient(spec, &params, batch) {
                Ok(g) => g,
                Err(Error::Numerical(_)) => return Err(Error::Diverged { epoch, step }),
                Err(e) => return Err(e),
            };
            params.axpy(-cfg.learning_rate, &grad);
            if !params.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
        }
    }
    Ok(params)
}

/// Index of the largest logit, ties to the lowest class.
pub fn predict(spec: &ModelSpec, params: &ParamVector, example: &Example) -> usize {
    let mut scratch = Scratch::new(spec);
    forward(spec, &params.0, &example.features, &mut scratch);
    argmax(&scratch.logits)
}

/// Mean loss and argmax accuracy on `test`.
pub fn evaluate<B: Borrow<Example>>(
    spec: &ModelSpec,
    params: &ParamVector,
    test: &[B],
) -> Result<(f64, f64)> {
    check_inputs(spec, params, test)?;
    let mut scratch = Scratch::new(spec);
    let mut sum = 0.0;
    let mut correct = 0usize;
    for ex in sorted_refs(test) {
        forward(spec, &params.0, &ex.features, &mut scratch);
        if argmax(&scratch.logits) == ex.label {
            correct += 1;
        }
        sum += softmax_xent(&mut scratch.logits, ex.label);
    }
    let n = test.len() as f64;
    Ok((sum / n, correct as f64 / n))
}
