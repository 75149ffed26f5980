//! Randomized-response reports of client data sizes and the estimator of the
//! participating total built from them.
//!
//! A client holding `n` examples clips it to `n_c = min(n, M - 1)`, then reports `n_c` with
//! probability `α` and otherwise a fake size drawn uniformly from `{1, ..., M - 1}`. The
//! fake size has mean `M / 2`, which is what the total estimator subtracts.

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrivacyConfig {
    /// Size threshold `M`; reports live in `1..=M-1`.
    pub size_threshold: u64,
    /// Probability of reporting the true clipped size.
    pub alpha: f64,
    /// Privacy budget `alpha` was derived from, when it was.
    pub epsilon: Option<f64>,
}

impl PrivacyConfig {
    pub fn new(size_threshold: u64, alpha: f64) -> Result<Self> {
        let cfg = PrivacyConfig {
            size_threshold,
            alpha,
            epsilon: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config whose mechanism is exactly `epsilon`-LDP.
    pub fn from_epsilon(epsilon: f64, size_threshold: u64) -> Result<Self> {
        Ok(PrivacyConfig {
            size_threshold,
            alpha: alpha_for_epsilon(epsilon, size_threshold)?,
            epsilon: Some(epsilon),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.size_threshold < 2 {
            return Err(Error::config("size_threshold must be at least 2"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("alpha must lie in (0, 1]"));
        }
        if let Some(eps) = self.epsilon {
            let expected = alpha_for_epsilon(eps, self.size_threshold)?;
            if (expected - self.alpha).abs() > 1e-12 {
                return Err(Error::config(alloc::format!(
                    "alpha {} does not match epsilon {eps} (expected {expected})",
                    self.alpha
                )));
            }
        }
        Ok(())
    }

    /// `min(n, M - 1)`
    pub fn clip(&self, n: u64) -> u64 {
        n.min(self.size_threshold - 1)
    }
}

/// Truth probability that makes the size report exactly `epsilon`-LDP:
/// `(e^ε - 1) / (e^ε + M - 2)`.
pub fn alpha_for_epsilon(epsilon: f64, size_threshold: u64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::config("epsilon must be positive and finite"));
    }
    if size_threshold < 2 {
        return Err(Error::config("size_threshold must be at least 2"));
    }
    let e = libm::exp(epsilon);
    Ok(libm::expm1(epsilon) / (e + (size_threshold - 2) as f64))
}

/// One randomized size report in `1..=M-1`.
pub fn privatize_size<R: Rng + ?Sized>(n: u64, cfg: &PrivacyConfig, rng: &mut R) -> u64 {
    let clipped = cfg.clip(n.max(1));
    let truthful = rng.random::<f64>() < cfg.alpha;
    let fake = rng.random_range(1..cfg.size_threshold);
    if truthful {
        clipped
    } else {
        fake
    }
}

/// `(R - (1 - α) M m / 2) / α` with `R` the sum of the `m` reports. Not clamped.
pub fn estimate_total(reports: &[u64], cfg: &PrivacyConfig) -> f64 {
    let sum: u64 = reports.iter().sum();
    let m = reports.len() as f64;
    (sum as f64 - (1.0 - cfg.alpha) * cfg.size_threshold as f64 * m / 2.0) / cfg.alpha
}

/// `P(report = y)` for a client whose clipped size is `clipped`.
pub fn report_probability(clipped: u64, y: u64, cfg: &PrivacyConfig) -> f64 {
    if y == 0 || y >= cfg.size_threshold {
        return 0.0;
    }
    let noise = (1.0 - cfg.alpha) / (cfg.size_threshold - 1) as f64;
    if y == clipped {
        cfg.alpha + noise
    } else {
        noise
    }
}

/// Largest likelihood ratio `P(y | n) / P(y | n')` of the report mechanism; infinite when
/// `α = 1`.
pub fn ldp_ratio(cfg: &PrivacyConfig) -> f64 {
    if cfg.alpha >= 1.0 {
        return f64::INFINITY;
    }
    let noise = (1.0 - cfg.alpha) / (cfg.size_threshold - 1) as f64;
    (cfg.alpha + noise) / noise
}
