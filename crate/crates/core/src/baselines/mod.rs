//! Reference models without adversarial adaptation: a plain LSTM regressor
//! trained on one domain (source-only or target-only), and a feed-forward
//! regressor on CORAL-aligned per-step features.

mod coral;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dann::{derive_seed, EpochRow, TrainReport};
use crate::data::{DataError, Domain, DomainDataset, Scaler, SeqBatch, WindowSet, DEFAULT_R_E};
use crate::eval::RulModel;
use crate::linalg::LinalgError;
use crate::losses::{regression_grad, regression_loss, LossError, RegressionNorm};
use crate::nn::{Activation, DropoutMode, FeatureExtractor, Head, NnError, Parameters, TensorView};
use crate::optim::{OptimError, Optimizer, OptimizerConfig, OptimizerKind};

pub use crate::optim::{adam_step, AdamState};
pub use coral::{
    adaptive_eps, coral_fit, covariance_gap, stack_features, train_coral_nn, train_coral_nn_with_progress,
    CoralConfig, CoralDepth, CoralDiagnostics, CoralModel, CoralNnConfig, CoralTransform, CORAL_EPS_FACTOR,
};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid baseline settings: {0}")]
    Spec(String),
    #[error("dataset '{0}' has no RUL labels")]
    Unlabeled(String),
    #[error("dataset '{0}' has no engines")]
    Empty(String),
    #[error("feature count mismatch: expected {expected}, got {got}")]
    Features { expected: usize, got: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

const STREAM_INIT: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_SHUFFLE: u64 = 4;

/// Which reference model to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    /// Trained on the labelled source, evaluated on the target.
    SourceOnly,
    /// Trained on the labelled target itself.
    TargetOnly,
    CoralNn,
    CoralDnn,
}

impl std::str::FromStr for BaselineMode {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "source-only" => Ok(BaselineMode::SourceOnly),
            "target-only" => Ok(BaselineMode::TargetOnly),
            "coral-nn" => Ok(BaselineMode::CoralNn),
            "coral-dnn" => Ok(BaselineMode::CoralDnn),
            other => Err(BaselineError::Spec(format!(
                "unknown baseline mode '{other}' (expected source-only, target-only, coral-nn or coral-dnn)"
            ))),
        }
    }
}

/// Window length used for each C-MAPSS subset.
pub fn window_for(dataset: &str) -> Option<usize> {
    match dataset.to_ascii_uppercase().as_str() {
        "FD001" | "FD003" => Some(30),
        "FD002" => Some(20),
        "FD004" => Some(15),
        _ => None,
    }
}

/// `LSTM + ReLU → dropout → Dense + ReLU → dropout → Dense + ReLU → Dense(1)`
/// trained with Adam on a squared loss. Every field can be overridden for
/// quick runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    pub lstm_layers: Vec<usize>,
    pub lstm_dropout: f64,
    pub f_units: usize,
    pub dense_layers: Vec<usize>,
    pub dense_dropout: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub t_w: usize,
    pub r_e: f64,
    pub p: RegressionNorm,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            lstm_layers: vec![100],
            lstm_dropout: 0.5,
            f_units: 30,
            dense_layers: vec![20],
            dense_dropout: 0.1,
            epochs: 100,
            lr: 0.001,
            batch_size: 256,
            t_w: 30,
            r_e: DEFAULT_R_E,
            p: RegressionNorm::Squared,
        }
    }
}

impl BaselineSpec {
    /// The default spec with the window length of a C-MAPSS subset.
    pub fn for_dataset(name: &str) -> Option<Self> {
        window_for(name).map(|t_w| Self {
            t_w,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |msg: String| Err(BaselineError::Spec(msg));
        if self.lstm_layers.is_empty() {
            return bad("at least one LSTM layer is required".into());
        }
        let units = self.lstm_layers.iter().chain(&self.dense_layers);
        if units.copied().chain([self.f_units]).any(|u| u == 0) {
            return bad("every layer needs at least one unit".into());
        }
        for (name, rate) in [("lstm_dropout", self.lstm_dropout), ("dense_dropout", self.dense_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("{name} must lie in [0, 1), got {rate}"));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 || self.t_w == 0 {
            return bad("epochs, batch_size and t_w must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.r_e > 0.0 && self.r_e.is_finite()) {
            return bad(format!("lr and r_e must be positive, got {} and {}", self.lr, self.r_e));
        }
        Ok(())
    }
}

/// Feature extractor and regression head of a single-domain model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorParams {
    pub feature: FeatureExtractor,
    pub head: Head,
}

impl Parameters for RegressorParams {
    fn tensors(&self, prefix: &str) -> Vec<TensorView<'_>> {
        let mut out = self.feature.tensors(&format!("{prefix}feature."));
        out.extend(self.head.tensors(&format!("{prefix}regressor.")));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.feature.tensors_mut();
        out.extend(self.head.tensors_mut());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub spec: BaselineSpec,
    pub num_features: usize,
    pub params: RegressorParams,
    pub scaler: Option<Scaler>,
}

impl BaselineModel {
    pub fn new(spec: &BaselineSpec, q: usize, seed: u64) -> Result<Self, BaselineError> {
        spec.validate()?;
        if q == 0 {
            return Err(BaselineError::Spec("input needs at least one feature".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_INIT));
        let feature = FeatureExtractor::init(q, &spec.lstm_layers, spec.f_units, spec.lstm_dropout, &mut rng);
        let head = Head::init(spec.f_units, &spec.dense_layers, Activation::Linear, spec.dense_dropout, true, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            num_features: q,
            params: RegressorParams { feature, head },
            scaler: None,
        })
    }

    fn forward(&self, batch: &SeqBatch, mode: DropoutMode, rng: &mut impl Rng) -> Result<Vec<f64>, NnError> {
        let (f, _) = self.params.feature.forward(&batch.steps, mode, rng)?;
        Ok(self.params.head.forward(&f, mode, rng)?.0)
    }

    /// Loss and gradients on a batch of normalized labels.
    pub fn grads(
        &self,
        batch: &SeqBatch,
        labels: &[f64],
        rng: &mut impl Rng,
    ) -> Result<(f64, RegressorParams), BaselineError> {
        regressor_grads(&self.params, self.spec.p, batch, labels, rng)
    }
}

fn regressor_grads(
    params: &RegressorParams,
    p: RegressionNorm,
    batch: &SeqBatch,
    labels: &[f64],
    rng: &mut impl Rng,
) -> Result<(f64, RegressorParams), BaselineError> {
    let (f, fc) = params.feature.forward(&batch.steps, DropoutMode::Train, rng)?;
    let (pred, hc) = params.head.forward(&f, DropoutMode::Train, rng)?;
    let loss = regression_loss(&pred, labels, p)?;
    let dy = regression_grad(&pred, labels, p)?;
    let (head, df) = params.head.backward_pre(&hc, &dy)?;
    let feature = params.feature.backward(&fc, &df)?;
    Ok((loss, RegressorParams { feature, head }))
}

impl RulModel for BaselineModel {
    fn window_len(&self) -> usize {
        self.spec.t_w
    }

    fn label_scale(&self) -> f64 {
        self.spec.r_e
    }

    fn predict_normalized(&self, batch: &SeqBatch) -> Result<Vec<f64>, NnError> {
        self.forward(batch, DropoutMode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
    }
}

/// Mini-batch settings shared by the baseline training loops.
#[derive(Debug, Clone, Copy)]
struct Schedule {
    epochs: usize,
    batch_size: usize,
    lr: f64,
    r_e: f64,
}

/// Plain supervised training: every epoch visits all windows of `set` once in
/// shuffled mini-batches and takes one Adam step per batch.
fn supervised_epochs<P: Parameters>(
    params: &mut P,
    set: &WindowSet,
    schedule: Schedule,
    seed: u64,
    mut grads: impl FnMut(&P, &SeqBatch, &[f64], &mut ChaCha8Rng) -> Result<(f64, P), BaselineError>,
    on_epoch: &mut dyn FnMut(&EpochRow),
) -> Result<TrainReport, BaselineError> {
    let all: Vec<usize> = (0..set.len()).collect();
    let labels: Vec<f64> = set
        .labels(&all)
        .ok_or_else(|| BaselineError::Unlabeled(set.name().to_string()))?
        .into_iter()
        .map(|y| y / schedule.r_e)
        .collect();
    let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::Adam, schedule.lr, None)?);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_DROPOUT));
    let mut report = TrainReport::default();
    for epoch in 0..schedule.epochs {
        let mut order = all.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            derive_seed(seed, STREAM_SHUFFLE),
            epoch as u64,
        )));
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(schedule.batch_size) {
            let ys: Vec<f64> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, mut g) = grads(params, &set.inputs(chunk), &ys, &mut rng)?;
            opt.step(params, &mut g, schedule.lr)?;
            total += loss;
            batches += 1;
        }
        let row = EpochRow {
            epoch,
            src_reg_loss: total / batches as f64,
            dom_loss: None,
            dom_acc: None,
            val_rmse: None,
        };
        on_epoch(&row);
        report.rows.push(row);
    }
    report.stop_epoch = schedule.epochs.checked_sub(1);
    report.best_epoch = report.stop_epoch;
    Ok(report)
}

/// Source-only and target-only training share this path; only the dataset
/// supplying the labels differs.
pub fn train_single_domain(
    train: &DomainDataset,
    spec: &BaselineSpec,
    seed: u64,
) -> Result<(BaselineModel, TrainReport), BaselineError> {
    train_single_domain_with_progress(train, spec, seed, |_| {})
}

pub fn train_single_domain_with_progress(
    train: &DomainDataset,
    spec: &BaselineSpec,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<(BaselineModel, TrainReport), BaselineError> {
    spec.validate()?;
    if train.runs.is_empty() {
        return Err(BaselineError::Empty(train.name.to_string()));
    }
    if !train.is_labeled() {
        return Err(BaselineError::Unlabeled(train.name.to_string()));
    }
    let started = Instant::now();
    let set = WindowSet::new(train, spec.t_w, Domain::Source)?;
    let mut model = BaselineModel::new(spec, train.num_features(), seed)?;
    model.scaler = train.scaler.clone();
    let schedule = Schedule {
        epochs: spec.epochs,
        batch_size: spec.batch_size,
        lr: spec.lr,
        r_e: spec.r_e,
    };
    let mut report = supervised_epochs(
        &mut model.params,
        &set,
        schedule,
        seed,
        |params, batch, ys, rng| regressor_grads(params, spec.p, batch, ys, rng),
        &mut on_epoch,
    )?;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, split_train_val, NormKind, ShiftConfig, SyntheticConfig};
    use crate::eval::{evaluate, PredictAt};
    use crate::nn::grad_check;

    fn quick_spec() -> BaselineSpec {
        BaselineSpec {
            lstm_layers: vec![12],
            lstm_dropout: 0.0,
            f_units: 12,
            dense_layers: vec![8],
            dense_dropout: 0.0,
            epochs: 12,
            lr: 0.005,
            batch_size: 64,
            t_w: 10,
            ..BaselineSpec::default()
        }
    }

    fn synthetic(shifted: bool, seed: u64) -> (DomainDataset, DomainDataset) {
        let q = 10;
        let shift = if shifted { ShiftConfig::sensor_inversion(q) } else { ShiftConfig::identity() };
        let config = SyntheticConfig {
            n_units: 24,
            t_range: (60, 90),
            q,
            shift,
            ..SyntheticConfig::default()
        };
        let (mut s, mut t) = gen_synthetic(&config, seed).unwrap();
        s.normalize(NormKind::ZScore);
        t.normalize(NormKind::ZScore);
        (s, t)
    }

    #[test]
    fn spec_defaults_and_windows() {
        let s = BaselineSpec::default();
        assert_eq!((s.lstm_layers.clone(), s.f_units, s.dense_layers.clone()), (vec![100], 30, vec![20]));
        assert_eq!((s.lstm_dropout, s.dense_dropout, s.epochs, s.lr), (0.5, 0.1, 100, 0.001));
        assert_eq!(s.p, RegressionNorm::Squared);
        let windows: Vec<_> = ["FD001", "FD002", "FD003", "fd004"]
            .iter()
            .map(|n| BaselineSpec::for_dataset(n).unwrap().t_w)
            .collect();
        assert_eq!(windows, vec![30, 20, 30, 15]);
        assert!(BaselineSpec::for_dataset("FD005").is_none());
        assert!(BaselineSpec { dense_dropout: 1.0, ..s.clone() }.validate().is_err());
        assert!(BaselineSpec { lr: 0.0, ..s }.validate().is_err());
    }

    #[test]
    fn modes_parse() {
        assert_eq!("coral-dnn".parse::<BaselineMode>().unwrap(), BaselineMode::CoralDnn);
        assert_eq!("target-only".parse::<BaselineMode>().unwrap(), BaselineMode::TargetOnly);
        assert!("tca".parse::<BaselineMode>().is_err());
    }

    #[test]
    fn architecture_follows_spec() {
        let m = BaselineModel::new(&BaselineSpec::default(), 14, 3).unwrap();
        let p = &m.params;
        assert_eq!(p.feature.lstm[0].hidden(), 100);
        assert_eq!(p.feature.dense.output_dim(), 30);
        assert_eq!(p.head.hidden.len(), 1);
        assert_eq!(p.head.hidden[0].output_dim(), 20);
        assert_eq!(p.head.dropout, 0.1);
        assert_eq!(p.head.out.activation, Activation::Linear);
        let batch = SeqBatch::from_window(&crate::linalg::Matrix::zeros(30, 14));
        assert_eq!(m.predict_normalized(&batch).unwrap(), vec![0.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = BaselineSpec {
            lstm_layers: vec![4],
            f_units: 5,
            dense_layers: vec![3],
            lstm_dropout: 0.0,
            dense_dropout: 0.0,
            t_w: 4,
            ..BaselineSpec::default()
        };
        let mut m = BaselineModel::new(&spec, 3, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in m.params.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let x = crate::linalg::Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let batch = SeqBatch::from_window(&x).concat(&SeqBatch::from_window(&x.scaled(-0.5)));
        let ys = [0.3, 0.8];
        let base = m.clone();
        let err = grad_check(&m.params.flatten(), 1e-5, |flat| {
            let mut probe = base.clone();
            probe.params.load_flat(flat);
            let (loss, g) = probe.grads(&batch, &ys, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            (loss, g.flatten())
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (s, _) = synthetic(false, 1);
        let (m1, r1) = train_single_domain(&s, &quick_spec(), 7).unwrap();
        let (m2, r2) = train_single_domain(&s, &quick_spec(), 7).unwrap();
        assert_eq!(r1.to_csv(), r2.to_csv());
        assert_eq!(m1, m2);
        assert_eq!(r1.rows.len(), 12);
        assert_eq!(r1.stop_epoch, Some(11));
        assert!(r1.rows.last().unwrap().src_reg_loss < 0.5 * r1.rows[0].src_reg_loss);
        assert!(r1.rows.iter().all(|r| r.dom_loss.is_none() && r.val_rmse.is_none()));
    }

    /// Source-only and target-only RMSE on held-out target engines; both
    /// models see the same number of training engines.
    fn control_rmse(shifted: bool, seed: u64) -> (f64, f64) {
        let (s, t) = synthetic(shifted, seed);
        let (t_train, t_test) = split_train_val(&t.runs, 0.5, seed).unwrap();
        let src_train = DomainDataset::new("source", s.runs[..t_train.len()].to_vec());
        let test = DomainDataset::new("target-test", t_test);
        let (src_model, _) = train_single_domain(&src_train, &quick_spec(), 1).unwrap();
        let (tgt_model, _) = train_single_domain(&DomainDataset::new("target-train", t_train), &quick_spec(), 1).unwrap();
        (
            evaluate(&src_model, &test, PredictAt::AllWindows).unwrap().rmse,
            evaluate(&tgt_model, &test, PredictAt::AllWindows).unwrap().rmse,
        )
    }

    #[test]
    fn source_only_matches_target_only_without_shift() {
        // Single runs at this size differ by tens of percent; compare means.
        let (a, b) = (2..6).map(|seed| control_rmse(false, seed)).fold((0.0, 0.0), |acc, (a, b)| (acc.0 + a, acc.1 + b));
        assert!((a - b).abs() / b < 0.10, "source-only {a}, target-only {b}");
    }

    #[test]
    fn source_only_degrades_under_shift() {
        let (a, b) = control_rmse(true, 3);
        assert!(a > b, "source-only {a}, target-only {b}");
    }

    #[test]
    fn unlabeled_training_data_is_rejected() {
        let (s, _) = synthetic(false, 4);
        assert!(matches!(
            train_single_domain(&s.without_labels(), &quick_spec(), 0),
            Err(BaselineError::Unlabeled(_))
        ));
    }
}
