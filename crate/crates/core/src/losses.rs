//! Training objectives and evaluation metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{sigmoid, Parameters, TensorKind};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;
/// Scoring-function denominator for early predictions (`c < 0`).
pub const SCORE_A1: f64 = 13.0;
/// Scoring-function denominator for late predictions (`c >= 0`).
pub const SCORE_A2: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {left} predictions vs {right} targets")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty batch")]
    Empty,
    #[error("regression exponent must be 1 or 2, got {0}")]
    Exponent(u8),
    #[error("{0} must be non-negative")]
    Negative(&'static str),
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), LossError> {
    if a.len() != b.len() {
        return Err(LossError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(())
}

/// Regression exponent: 1 for mean absolute error, 2 for mean squared error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum RegressionNorm {
    Absolute,
    Squared,
}

impl TryFrom<u8> for RegressionNorm {
    type Error = LossError;

    fn try_from(p: u8) -> Result<Self, LossError> {
        match p {
            1 => Ok(RegressionNorm::Absolute),
            2 => Ok(RegressionNorm::Squared),
            other => Err(LossError::Exponent(other)),
        }
    }
}

impl From<RegressionNorm> for u8 {
    fn from(n: RegressionNorm) -> u8 {
        match n {
            RegressionNorm::Absolute => 1,
            RegressionNorm::Squared => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub p: RegressionNorm,
    pub alpha: f64,
    pub l2: f64,
}

impl LossConfig {
    pub fn new(p: u8, alpha: f64, l2: f64) -> Result<Self, LossError> {
        if !(alpha >= 0.0) {
            return Err(LossError::Negative("alpha"));
        }
        if !(l2 >= 0.0) {
            return Err(LossError::Negative("l2"));
        }
        Ok(Self {
            p: RegressionNorm::try_from(p)?,
            alpha,
            l2,
        })
    }
}

/// Mean of `|ŷ - y|^p` over the batch.
pub fn regression_loss(pred: &[f64], target: &[f64], p: RegressionNorm) -> Result<f64, LossError> {
    check_pair(pred, target)?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(a, b)| match p {
            RegressionNorm::Absolute => (a - b).abs(),
            RegressionNorm::Squared => (a - b) * (a - b),
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `∂/∂ŷ` of [`regression_loss`]. The absolute-error subgradient at 0 is 0.
pub fn regression_grad(pred: &[f64], target: &[f64], p: RegressionNorm) -> Result<Vec<f64>, LossError> {
    check_pair(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(a, b)| match p {
            RegressionNorm::Absolute => {
                let d = a - b;
                if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            }
            RegressionNorm::Squared => 2.0 * (a - b) / n,
        })
        .collect())
}

/// Mean binary cross-entropy between domain probabilities and labels.
pub fn domain_bce(pred_d: &[f64], d: &[f64]) -> Result<f64, LossError> {
    check_pair(pred_d, d)?;
    let sum: f64 = pred_d
        .iter()
        .zip(d)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred_d.len() as f64)
}

/// Gradient of [`domain_bce`] with respect to the logits feeding the output
/// sigmoid: `(σ(z) - d) / B`. The clamp is ignored here; it only guards the
/// logarithm.
pub fn domain_bce_logit_grad(logits: &[f64], d: &[f64]) -> Result<Vec<f64>, LossError> {
    check_pair(logits, d)?;
    let n = logits.len() as f64;
    Ok(logits.iter().zip(d).map(|(&z, &y)| (sigmoid(z) - y) / n).collect())
}

/// Fraction of probabilities on the correct side of 0.5.
pub fn domain_accuracy(pred_d: &[f64], d: &[f64]) -> Result<f64, LossError> {
    check_pair(pred_d, d)?;
    let hits = pred_d.iter().zip(d).filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5)).count();
    Ok(hits as f64 / pred_d.len() as f64)
}

/// Monitoring value of the adversarial objective: `src_reg - α (src_dom + tgt_dom)`.
pub fn combined_loss(src_reg: f64, src_dom: f64, tgt_dom: f64, cfg: &LossConfig) -> f64 {
    src_reg - cfg.alpha * (src_dom + tgt_dom)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    Ok(regression_loss(pred, target, RegressionNorm::Squared)?.sqrt())
}

/// Penalty for a single error `c = ŷ - y`.
pub fn score_term(c: f64) -> f64 {
    if c < 0.0 {
        (-c / SCORE_A1).exp() - 1.0
    } else {
        (c / SCORE_A2).exp() - 1.0
    }
}

/// Asymmetric exponential scoring function, summed over units.
pub fn nasa_score(pred: &[f64], target: &[f64]) -> Result<f64, LossError> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(a, b)| score_term(a - b)).sum())
}

/// `coeff · Σ w²` over weight matrices (biases are not penalized).
pub fn l2_penalty<P: Parameters + ?Sized>(params: &P, coeff: f64) -> f64 {
    if coeff == 0.0 {
        return 0.0;
    }
    coeff
        * params
            .tensors("")
            .iter()
            .filter(|t| t.kind == TensorKind::Weight)
            .flat_map(|t| t.data.iter())
            .map(|w| w * w)
            .sum::<f64>()
}

/// Adds `2 · coeff · w` to the weight-matrix entries of `grads`.
pub fn add_l2_grad<P: Parameters + ?Sized>(grads: &mut P, params: &P, coeff: f64) {
    if coeff == 0.0 {
        return;
    }
    let kinds: Vec<(TensorKind, Vec<f64>)> = params
        .tensors("")
        .into_iter()
        .map(|t| (t.kind, t.data.to_vec()))
        .collect();
    for (g, (kind, w)) in grads.tensors_mut().into_iter().zip(kinds) {
        if kind == TensorKind::Weight {
            for (gv, wv) in g.iter_mut().zip(w) {
                *gv += 2.0 * coeff * wv;
            }
        }
    }
}
