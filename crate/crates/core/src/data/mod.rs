//! Run-to-failure datasets: C-MAPSS ingestion, RUL labelling, scaling,
//! time windows and cross-domain batching.

mod batch;
mod cmapss;
mod normalize;
pub mod synthetic;
mod window;

use std::sync::Arc;

use thiserror::Error;

use crate::linalg::Matrix;

pub use batch::{make_epoch_batches, BatchPair};
pub use cmapss::{parse_cmapss, parse_rul_truth, read_cmapss, read_rul_truth, write_cmapss, CMAPSS_FEATURES};
pub use normalize::{fit_transform_minmax, fit_transform_zscore, FeatureStats, NormKind, Scaler};
pub use synthetic::{gen_synthetic, ShiftConfig, SyntheticConfig};
pub use window::{window, window_count, SeqBatch, WindowRef, WindowSample, WindowSet};

/// Default piecewise-linear RUL ceiling, in cycles.
pub const DEFAULT_R_E: f64 = 125.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("dataset {0} carries no RUL labels")]
    Unlabeled(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Domain of origin of a training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Binary domain label: 0 for source, 1 for target.
    pub fn label(self) -> f64 {
        match self {
            Domain::Source => 0.0,
            Domain::Target => 1.0,
        }
    }
}

/// One unit's multivariate time series. Cycle `t` (1-based) lives in row `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineRun {
    pub unit_id: u32,
    pub features: Matrix,
    /// Per-cycle RUL target in cycles, once labelled.
    pub rul: Option<Vec<f64>>,
}

impl EngineRun {
    pub fn new(unit_id: u32, features: Matrix) -> Self {
        Self {
            unit_id,
            features,
            rul: None,
        }
    }

    /// Number of observed cycles `T_i`.
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }
}

/// Piecewise-linear labels for a run-to-failure series: `y_t = min(R_e, T_i - t)`.
pub fn label_rul(run: &EngineRun, r_e: f64) -> Result<EngineRun, DataError> {
    label_rul_with_final(run, r_e, 0.0)
}

/// Labels a truncated series whose true RUL at its last cycle is `final_rul`:
/// `y_t = min(R_e, final_rul + T_i - t)`.
pub fn label_rul_with_final(run: &EngineRun, r_e: f64, final_rul: f64) -> Result<EngineRun, DataError> {
    if !(r_e > 0.0) {
        return Err(DataError::Invalid(format!("R_e must be positive, got {r_e}")));
    }
    if !(final_rul >= 0.0) {
        return Err(DataError::Invalid(format!("final RUL must be non-negative, got {final_rul}")));
    }
    let len = run.len();
    let rul = (1..=len)
        .map(|t| (final_rul + (len - t) as f64).min(r_e))
        .collect();
    Ok(EngineRun {
        rul: Some(rul),
        ..run.clone()
    })
}

/// A named collection of runs from one domain.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub name: Arc<str>,
    pub runs: Vec<EngineRun>,
    pub scaler: Option<Scaler>,
}

impl DomainDataset {
    pub fn new(name: impl Into<Arc<str>>, runs: Vec<EngineRun>) -> Self {
        Self {
            name: name.into(),
            runs,
            scaler: None,
        }
    }

    pub fn num_features(&self) -> usize {
        self.runs.first().map_or(0, EngineRun::num_features)
    }

    pub fn is_labeled(&self) -> bool {
        !self.runs.is_empty() && self.runs.iter().all(|r| r.rul.is_some())
    }

    /// Window-sample count `Ñ = Σ max(T_i, T_w + 1) - T_w`.
    pub fn window_count(&self, t_w: usize) -> usize {
        self.runs.iter().map(|r| window_count(r.len(), t_w)).sum()
    }

    /// Copy of this dataset with every RUL label removed.
    pub fn without_labels(&self) -> Self {
        Self {
            name: self.name.clone(),
            runs: self
                .runs
                .iter()
                .map(|r| EngineRun {
                    rul: None,
                    ..r.clone()
                })
                .collect(),
            scaler: self.scaler.clone(),
        }
    }

    /// Labels every run as run-to-failure.
    pub fn label_run_to_failure(&mut self, r_e: f64) -> Result<(), DataError> {
        for run in &mut self.runs {
            *run = label_rul(run, r_e)?;
        }
        Ok(())
    }

    /// Labels truncated test runs from their ground-truth final RULs.
    pub fn label_from_truth(&mut self, truth: &[u32], r_e: f64) -> Result<(), DataError> {
        if truth.len() != self.runs.len() {
            return Err(DataError::Invalid(format!(
                "{} truth values for {} engines",
                truth.len(),
                self.runs.len()
            )));
        }
        for (run, &t) in self.runs.iter_mut().zip(truth) {
            *run = label_rul_with_final(run, r_e, t as f64)?;
        }
        Ok(())
    }

    /// Fits a scaler of the given kind on this dataset's own statistics and applies it.
    pub fn normalize(&mut self, kind: NormKind) {
        let (runs, scaler) = match kind {
            NormKind::MinMax => fit_transform_minmax(&self.runs, false),
            NormKind::ZScore => fit_transform_zscore(&self.runs),
        };
        self.runs = runs;
        self.scaler = Some(scaler);
    }

    /// Applies an already fitted scaler (e.g. the training split's) to this dataset.
    pub fn apply_scaler(&mut self, scaler: &Scaler) {
        self.runs = scaler.transform(&self.runs);
        self.scaler = Some(scaler.clone());
    }
}

/// Splits runs at engine granularity into `(train, validation)` with a seeded shuffle.
pub fn split_train_val(
    runs: &[EngineRun],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<EngineRun>, Vec<EngineRun>), DataError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "validation fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let n = runs.len();
    if n < 2 {
        return Err(DataError::Invalid(format!("need at least 2 engines to split, got {n}")));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let mut val_idx = order[..n_val].to_vec();
    let mut train_idx = order[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((
        train_idx.into_iter().map(|i| runs[i].clone()).collect(),
        val_idx.into_iter().map(|i| runs[i].clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(len: usize) -> EngineRun {
        EngineRun::new(1, Matrix::zeros(len, 2))
    }

    #[test]
    fn piecewise_labels_long_run() {
        let y = label_rul(&run(200), 125.0).unwrap().rul.unwrap();
        assert_eq!(y[0], 125.0);
        assert_eq!(y[74], 125.0);
        assert_eq!(y[99], 100.0);
        assert_eq!(y[199], 0.0);
    }

    #[test]
    fn piecewise_labels_short_run_never_clipped() {
        let y = label_rul(&run(50), 125.0).unwrap().rul.unwrap();
        assert_eq!(y[0], 49.0);
        assert_eq!(*y.last().unwrap(), 0.0);
    }

    #[test]
    fn labels_reject_non_positive_ceiling() {
        assert!(label_rul(&run(5), 0.0).is_err());
        assert!(label_rul(&run(5), -3.0).is_err());
    }

    #[test]
    fn truth_labels_offset_and_clip() {
        let y = label_rul_with_final(&run(10), 125.0, 112.0).unwrap().rul.unwrap();
        assert_eq!(y[9], 112.0);
        assert_eq!(y[0], 121.0);
        let y = label_rul_with_final(&run(30), 125.0, 112.0).unwrap().rul.unwrap();
        assert_eq!(y[0], 125.0);
    }

    #[test]
    fn split_is_engine_level_and_deterministic() {
        let runs: Vec<_> = (1..=100)
            .map(|u| EngineRun::new(u, Matrix::zeros(3, 1)))
            .collect();
        let (train, val) = split_train_val(&runs, 0.10, 42).unwrap();
        assert_eq!((train.len(), val.len()), (90, 10));
        let (train2, val2) = split_train_val(&runs, 0.10, 42).unwrap();
        assert_eq!(train, train2);
        assert_eq!(val, val2);
        let (_, val3) = split_train_val(&runs, 0.10, 43).unwrap();
        let ids = |v: &[EngineRun]| v.iter().map(|r| r.unit_id).collect::<Vec<_>>();
        assert_ne!(ids(&val), ids(&val3));
    }

    #[test]
    fn split_errors() {
        let one = vec![run(3)];
        assert!(split_train_val(&one, 0.1, 0).is_err());
        let two = vec![run(3), run(4)];
        assert!(split_train_val(&two, 0.0, 0).is_err());
        assert!(split_train_val(&two, 1.0, 0).is_err());
        let (a, b) = split_train_val(&two, 0.1, 0).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
    }

    proptest::proptest! {
        #[test]
        fn labels_non_increasing_and_end_at_zero(len in 1usize..400, r_e in 1.0f64..300.0) {
            let y = label_rul(&run(len), r_e).unwrap().rul.unwrap();
            proptest::prop_assert!(y.windows(2).all(|w| w[0] >= w[1]));
            proptest::prop_assert_eq!(*y.last().unwrap(), 0.0);
            proptest::prop_assert!(y[..len - 1].iter().all(|&v| v > 0.0));
        }
    }
}
