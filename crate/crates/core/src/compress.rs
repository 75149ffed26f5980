//! Update compression: a chunk-mean sketch to a fixed dimension followed by scalar
//! quantization of the sketch with optimal 1-D k-means. The quantized form is a short centroid
//! table plus one centroid index per sketch coordinate.

use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SketchConfig {
    /// Sketch length every update is reduced to.
    pub sketch_dim: usize,
    /// Number of quantization centroids.
    pub levels: usize,
}

impl Default for SketchConfig {
    fn default() -> Self {
        SketchConfig {
            sketch_dim: 2048,
            levels: 9,
        }
    }
}

impl SketchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sketch_dim == 0 || self.levels == 0 {
            return Err(Error::config("sketch_dim and levels must be positive"));
        }
        Ok(())
    }
}

/// A quantized sketch: strictly increasing centroids and a centroid index per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedGradient {
    centroids: Vec<f64>,
    indices: Vec<u32>,
}

impl CompressedGradient {
    pub fn new(centroids: Vec<f64>, indices: Vec<u32>) -> Result<Self> {
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::contract("non-finite centroid"));
        }
        if centroids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("centroids must be strictly increasing"));
        }
        if let Some(bad) = indices.iter().find(|&&i| i as usize >= centroids.len()) {
            return Err(Error::contract(alloc::format!(
                "centroid index {bad} out of range for {} centroids",
                centroids.len()
            )));
        }
        Ok(CompressedGradient { centroids, indices })
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }
}

/// Reduces `grad` to `cfg.sketch_dim` coordinates by averaging contiguous chunks whose
/// sizes differ by at most one. Inputs shorter than the sketch are zero-padded.
pub fn sketch(grad: &[f64], cfg: &SketchConfig) -> Result<Vec<f64>> {
    if grad.is_empty() {
        return Err(Error::Empty("gradient"));
    }
    let k = cfg.sketch_dim;
    let len = grad.len().max(k);
    let value = |i: usize| grad.get(i).copied().unwrap_or(0.0);
    Ok((0..k)
        .map(|j| {
            let (start, end) = (j * len / k, (j + 1) * len / k);
            let sum: f64 = (start..end).map(value).sum();
            sum / (end - start) as f64
        })
        .collect())
}

/// Prefix sums over sorted distinct values with multiplicities, shifted by their mean to
/// keep the cost differences well conditioned.
struct Prefix {
    w: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Prefix {
    fn new(values: &[f64], weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let shift = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
        let n = values.len();
        let (mut w, mut s1, mut s2) = (
            Vec::with_capacity(n + 1),
            Vec::with_capacity(n + 1),
            Vec::with_capacity(n + 1),
        );
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        w.push(a);
        s1.push(b);
        s2.push(c);
        for (v, wt) in values.iter().zip(weights) {
            let x = v - shift;
            a += wt;
            b += wt * x;
            c += wt * x * x;
            w.push(a);
            s1.push(b);
            s2.push(c);
        }
        Prefix { w, s1, s2 }
    }

    /// Squared error of one cluster holding values `i..j`.
    fn cost(&self, i: usize, j: usize) -> f64 {
        let w = self.w[j] - self.w[i];
        let s = self.s1[j] - self.s1[i];
        (self.s2[j] - self.s2[i] - s * s / w).max(0.0)
    }
}

/// Fills `cur[j]`, `arg[j]` for `j` in `lo..hi` given split candidates `from..=to`, using
/// that the optimal split point is non-decreasing in `j`.
#[allow(clippy::too_many_arguments)]
fn fill_layer(
    prefix: &Prefix,
    prev: &[f64],
    cur: &mut [f64],
    arg: &mut [usize],
    lo: usize,
    hi: usize,
    from: usize,
    to: usize,
) {
    if lo >= hi {
        return;
    }
    let mid = lo + (hi - lo) / 2;
    let mut best = (f64::INFINITY, from);
    for (i, &p) in prev.iter().enumerate().take(to.min(mid - 1) + 1).skip(from) {
        let c = p + prefix.cost(i, mid);
        if c < best.0 {
            best = (c, i);
        }
    }
    cur[mid] = best.0;
    arg[mid] = best.1;
    fill_layer(prefix, prev, cur, arg, lo, mid, from, best.1);
    fill_layer(prefix, prev, cur, arg, mid + 1, hi, best.1, to);
}

/// Start index of each of the `k` clusters in the minimum-error segmentation of `values`.
fn optimal_starts(values: &[f64], weights: &[f64], k: usize) -> Vec<usize> {
    let n = values.len();
    let prefix = Prefix::new(values, weights);
    // layer c: best error of the first j values in c + 1 clusters
    let mut prev: Vec<f64> = (0..=n)
        .map(|j| {
            if j == 0 {
                f64::INFINITY
            } else {
                prefix.cost(0, j)
            }
        })
        .collect();
    let mut args: Vec<Vec<usize>> = Vec::with_capacity(k - 1);
    for c in 1..k {
        let mut cur = alloc::vec![f64::INFINITY; n + 1];
        let mut arg = alloc::vec![0usize; n + 1];
        fill_layer(&prefix, &prev, &mut cur, &mut arg, c + 1, n + 1, c, n - 1);
        prev = cur;
        args.push(arg);
    }
    let mut starts = alloc::vec![0usize; k];
    let mut end = n;
    for c in (1..k).rev() {
        end = args[c - 1][end];
        starts[c] = end;
    }
    starts
}

/// Quantizes `values` to at most `cfg.levels` centroids with exact 1-D k-means.
///
/// With at most `levels` distinct values the quantization is exact. Otherwise the sorted
/// distinct values are split into `levels` contiguous groups minimizing the total squared
/// error (dynamic programming over split points); each value maps to its group's mean.
pub fn is_compress(values: &[f64], cfg: &SketchConfig) -> Result<CompressedGradient> {
    if values.is_empty() {
        return Err(Error::Empty("sketch"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(alloc::string::String::from(
            "non-finite sketch value",
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for v in sorted {
        if distinct.last() == Some(&v) {
            *counts.last_mut().expect("non-empty") += 1.0;
        } else {
            distinct.push(v);
            counts.push(1.0);
        }
    }
    let position = |v: &f64| {
        distinct
            .binary_search_by(|c| c.total_cmp(v))
            .expect("value present")
    };
    let k = cfg.levels;
    if distinct.len() <= k {
        let indices = values.iter().map(|v| position(v) as u32).collect();
        return CompressedGradient::new(distinct, indices);
    }

    let starts = optimal_starts(&distinct, &counts, k);
    let mut group = alloc::vec![0u32; distinct.len()];
    let mut centroids = Vec::with_capacity(k);
    for (c, &s) in starts.iter().enumerate() {
        let e = starts.get(c + 1).copied().unwrap_or(distinct.len());
        let (mut sum, mut weight) = (0.0, 0.0);
        for j in s..e {
            sum += distinct[j] * counts[j];
            weight += counts[j];
            group[j] = c as u32;
        }
        centroids.push((sum / weight).clamp(distinct[s], distinct[e - 1]));
    }
    let indices = values.iter().map(|v| group[position(v)]).collect();
    CompressedGradient::new(centroids, indices)
}

/// Expands a compressed gradient back to a dense vector.
pub fn restore(cg: &CompressedGradient) -> Vec<f64> {
    cg.indices
        .iter()
        .map(|&i| cg.centroids[i as usize])
        .collect()
}

/// L2 norm of [`restore`]`(cg)`, accumulated in coordinate order.
pub fn compressed_norm(cg: &CompressedGradient) -> f64 {
    let mut sum = 0.0;
    for &i in &cg.indices {
        let c = cg.centroids[i as usize];
        sum += c * c;
    }
    libm::sqrt(sum)
}

/// Within-cluster sum of squared errors of `cg` against the original `values`.
pub fn quantization_sse(values: &[f64], cg: &CompressedGradient) -> f64 {
    values
        .iter()
        .zip(&cg.indices)
        .map(|(v, &i)| {
            let d = v - cg.centroids[i as usize];
            d * d
        })
        .sum()
}

/// Sketch then quantize.
pub fn compress_update(update: &[f64], cfg: &SketchConfig) -> Result<CompressedGradient> {
    is_compress(&sketch(update, cfg)?, cfg)
}
