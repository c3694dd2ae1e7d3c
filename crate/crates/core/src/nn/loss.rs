use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLIP, 1 - PROB_CLIP]` before `ln`.
pub const PROB_CLIP: f64 = 1e-7;

/// Per-class loss weights for a binary task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub neg: f64,
    pub pos: f64,
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights { neg: 1.0, pos: 1.0 };

    #[inline]
    pub fn for_label(&self, y: u8) -> f64 {
        if y == 1 {
            self.pos
        } else {
            self.neg
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            neg: self.neg * factor,
            pos: self.pos * factor,
        }
    }
}

/// Effective-number class balancing input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightConfig {
    pub beta_cb: f64,
    /// `[negatives, positives]`
    pub class_counts: [u64; 2],
}

impl ClassWeightConfig {
    pub fn from_labels(beta_cb: f64, labels: &[u8]) -> Self {
        let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
        Self {
            beta_cb,
            class_counts: [labels.len() as u64 - pos, pos],
        }
    }
}

/// Class weights from the effective number of samples
/// `E_c = (1 - beta^n_c) / (1 - beta)`, with raw weight `1 / E_c`
/// normalized so the two weights sum to 2.
pub fn class_balanced_weights(cfg: &ClassWeightConfig) -> Result<ClassWeights> {
    let beta = cfg.beta_cb;
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Config(format!(
            "beta_cb must lie in [0, 1), got {beta}"
        )));
    }
    if cfg.class_counts.contains(&0) {
        return Err(Error::Config(format!(
            "class-balanced weights need both classes present, counts {:?}",
            cfg.class_counts
        )));
    }
    let one_minus = 1.0 - beta;
    // 1 - beta^n computed as -expm1(n ln beta) to survive beta -> 1
    let effective = |n: u64| -(n as f64 * (-one_minus).ln_1p()).exp_m1() / one_minus;
    let raw0 = 1.0 / effective(cfg.class_counts[0]);
    let raw1 = 1.0 / effective(cfg.class_counts[1]);
    let total = raw0 + raw1;
    Ok(ClassWeights {
        neg: 2.0 * raw0 / total,
        pos: 2.0 * raw1 / total,
    })
}

#[inline]
pub(crate) fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

#[inline]
pub(crate) fn sample_loss(p: f64, y: u8, w: &ClassWeights) -> f64 {
    let p = clip(p);
    let nll = if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    w.for_label(y) * nll
}

/// Mean class-weighted binary cross-entropy.
pub fn weighted_bce_loss(probs: &[f64], labels: &[u8], weights: &ClassWeights) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Shape("loss over an empty batch".into()));
    }
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| sample_loss(p, y, weights))
        .sum();
    Ok(sum / probs.len() as f64)
}
