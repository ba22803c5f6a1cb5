//! Prediction in cycles and test metrics for any window-based RUL model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Domain, DomainDataset, SeqBatch, WindowSet};
use crate::losses::{nasa_score, rmse, LossError};
use crate::nn::NnError;

/// Windows per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("dataset '{0}' has no RUL labels to evaluate against")]
    Unlabeled(String),
}

/// A trained regressor over `T_w × q` windows whose output is RUL divided by
/// [`RulModel::label_scale`].
pub trait RulModel {
    fn window_len(&self) -> usize;
    fn label_scale(&self) -> f64;
    fn predict_normalized(&self, batch: &SeqBatch) -> Result<Vec<f64>, NnError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictAt {
    AllWindows,
    /// Only the window ending at each unit's final observed cycle.
    LastWindow,
}

impl std::str::FromStr for PredictAt {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all-windows" | "all" => Ok(PredictAt::AllWindows),
            "last-window" | "last" => Ok(PredictAt::LastWindow),
            other => Err(format!("unknown prediction mode '{other}' (expected all-windows or last-window)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub score: f64,
}

/// Maps a normalized output back to cycles, clipped below at 0.
pub fn denormalize(v: f64, scale: f64) -> f64 {
    (v * scale).max(0.0)
}

pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics, LossError> {
    Ok(Metrics {
        rmse: rmse(pred, truth)?,
        score: nasa_score(pred, truth)?,
    })
}

pub fn window_set(ds: &DomainDataset, t_w: usize, at: PredictAt) -> Result<WindowSet, DataError> {
    let set = WindowSet::new(ds, t_w, Domain::Target)?;
    Ok(match at {
        PredictAt::AllWindows => set,
        PredictAt::LastWindow => set.last_per_run(),
    })
}

/// Predictions in cycles for every window of `set`, in order.
pub fn predict_windows<M: RulModel + ?Sized>(m: &M, set: &WindowSet) -> Result<Vec<f64>, NnError> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let y = m.predict_normalized(&set.inputs(chunk))?;
        out.extend(y.into_iter().map(|v| denormalize(v, m.label_scale())));
    }
    Ok(out)
}

pub fn predict_rul<M: RulModel + ?Sized>(m: &M, ds: &DomainDataset, at: PredictAt) -> Result<Vec<f64>, EvalError> {
    let set = window_set(ds, m.window_len(), at)?;
    Ok(predict_windows(m, &set)?)
}

/// RMSE and score in cycles against the dataset's own labels.
pub fn evaluate<M: RulModel + ?Sized>(m: &M, ds: &DomainDataset, at: PredictAt) -> Result<Metrics, EvalError> {
    let set = window_set(ds, m.window_len(), at)?;
    let idx: Vec<usize> = (0..set.len()).collect();
    let truth = set.labels(&idx).ok_or_else(|| EvalError::Unlabeled(ds.name.to_string()))?;
    let pred = predict_windows(m, &set)?;
    Ok(metrics(&pred, &truth)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{label_rul, EngineRun};
    use crate::linalg::Matrix;

    /// Reads the normalized label straight from the last input column.
    struct Oracle;

    impl RulModel for Oracle {
        fn window_len(&self) -> usize {
            3
        }
        fn label_scale(&self) -> f64 {
            125.0
        }
        fn predict_normalized(&self, batch: &SeqBatch) -> Result<Vec<f64>, NnError> {
            let last = batch.steps.last().unwrap();
            Ok((0..last.rows()).map(|r| last.row(r)[1]).collect())
        }
    }

    struct Constant(f64);

    impl RulModel for Constant {
        fn window_len(&self) -> usize {
            3
        }
        fn label_scale(&self) -> f64 {
            125.0
        }
        fn predict_normalized(&self, batch: &SeqBatch) -> Result<Vec<f64>, NnError> {
            Ok(vec![self.0; batch.batch_size()])
        }
    }

    fn dataset() -> DomainDataset {
        // Column 1 at step t holds the normalized label of step t + 1.
        let runs = [20usize, 9]
            .iter()
            .enumerate()
            .map(|(u, &len)| {
                let x = Matrix::from_fn(len, 2, |t, j| if j == 1 { (len as f64 - t as f64 - 2.0) / 125.0 } else { 0.0 });
                label_rul(&EngineRun::new(u as u32 + 1, x), 125.0).unwrap()
            })
            .collect();
        DomainDataset::new("toy", runs)
    }

    #[test]
    fn perfect_model_scores_zero() {
        let m = evaluate(&Oracle, &dataset(), PredictAt::AllWindows).unwrap();
        assert!(m.rmse < 1e-12 && m.score.abs() < 1e-12, "{m:?}");
    }

    #[test]
    fn constant_predictor_matches_hand_value() {
        let ds = dataset();
        let m = evaluate(&Constant(1.0), &ds, PredictAt::AllWindows).unwrap();
        let truth: Vec<f64> = ds.runs.iter().flat_map(|r| r.rul.clone().unwrap()[3..].to_vec()).collect();
        let mse = truth.iter().map(|y| (125.0 - y) * (125.0 - y)).sum::<f64>() / truth.len() as f64;
        assert!((m.rmse - mse.sqrt()).abs() < 1e-12);
        assert_eq!(evaluate(&Constant(1.0), &ds, PredictAt::AllWindows).unwrap(), m);
    }

    #[test]
    fn denormalization_and_clipping() {
        assert_eq!(denormalize(1.0, 125.0), 125.0);
        assert_eq!(denormalize(-0.1, 125.0), 0.0);
        let pred = predict_rul(&Constant(-0.1), &dataset(), PredictAt::LastWindow).unwrap();
        assert_eq!(pred, vec![0.0, 0.0]);
    }

    #[test]
    fn unlabeled_evaluation_fails() {
        let ds = dataset().without_labels();
        assert!(matches!(
            evaluate(&Oracle, &ds, PredictAt::LastWindow),
            Err(EvalError::Unlabeled(_))
        ));
    }
}
