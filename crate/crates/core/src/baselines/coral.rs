//! Correlation alignment and the feed-forward regressor trained on it.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{supervised_epochs, BaselineError, Schedule, STREAM_INIT};
use crate::dann::{derive_seed, EpochRow, TrainReport};
use crate::data::{Domain, DomainDataset, EngineRun, Scaler, SeqBatch, WindowSet, DEFAULT_R_E};
use crate::eval::RulModel;
use crate::linalg::{inv_sqrt_psd, matmul, sqrt_psd, Matrix};
use crate::losses::{regression_grad, regression_loss, RegressionNorm};
use crate::nn::{Activation, DropoutMode, Head, NnError};

/// Scale of the adaptive eigenvalue floor, relative to the mean variance.
pub const CORAL_EPS_FACTOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoralConfig {
    /// Fixed ridge added to both covariances; `None` uses [`adaptive_eps`]
    /// of each covariance.
    pub eps: Option<f64>,
    /// Also move the source mean onto the target mean.
    pub align_means: bool,
}

impl Default for CoralConfig {
    fn default() -> Self {
        Self {
            eps: None,
            align_means: true,
        }
    }
}

/// `1e-6 · trace(C) / q`, floored so that an all-constant input stays invertible.
pub fn adaptive_eps(cov: &Matrix) -> f64 {
    (CORAL_EPS_FACTOR * cov.trace() / cov.rows().max(1) as f64).max(1e-12)
}

/// Maps source features onto target second-order statistics:
/// `x' = (x - μ_s) · C_s^{-1/2} · C_t^{1/2} + μ_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoralTransform {
    pub source_mean: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub whiten: Matrix,
    pub recolor: Matrix,
    pub align_means: bool,
}

impl CoralTransform {
    pub fn num_features(&self) -> usize {
        self.source_mean.len()
    }

    /// Transforms every row of `x`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix, BaselineError> {
        if x.cols() != self.num_features() {
            return Err(BaselineError::Features {
                expected: self.num_features(),
                got: x.cols(),
            });
        }
        let map = matmul(&self.whiten, &self.recolor)?;
        let mut centered = x.clone();
        for i in 0..centered.rows() {
            for (v, m) in centered.row_mut(i).iter_mut().zip(&self.source_mean) {
                *v -= m;
            }
        }
        let mut out = matmul(&centered, &map)?;
        let shift = if self.align_means {
            &self.target_mean
        } else {
            &self.source_mean
        };
        for i in 0..out.rows() {
            for (v, m) in out.row_mut(i).iter_mut().zip(shift) {
                *v += m;
            }
        }
        Ok(out)
    }

    /// Copy of `ds` with every run's features transformed; labels are kept.
    pub fn apply_dataset(&self, ds: &DomainDataset) -> Result<DomainDataset, BaselineError> {
        let runs = ds
            .runs
            .iter()
            .map(|r| {
                Ok(EngineRun {
                    features: self.apply(&r.features)?,
                    ..r.clone()
                })
            })
            .collect::<Result<Vec<_>, BaselineError>>()?;
        Ok(DomainDataset {
            name: ds.name.clone(),
            runs,
            scaler: ds.scaler.clone(),
        })
    }
}

/// Fits a transform from observation matrices (rows are samples).
pub fn coral_fit(source: &Matrix, target: &Matrix, config: &CoralConfig) -> Result<CoralTransform, BaselineError> {
    if source.cols() != target.cols() {
        return Err(BaselineError::Features {
            expected: source.cols(),
            got: target.cols(),
        });
    }
    if source.rows() < 2 || target.rows() < 2 {
        return Err(BaselineError::Spec("CORAL needs at least two samples per domain".into()));
    }
    if let Some(eps) = config.eps {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(BaselineError::Spec(format!("CORAL eps must be positive, got {eps}")));
        }
    }
    let cs = source.covariance();
    let ct = target.covariance();
    let eps_s = config.eps.unwrap_or_else(|| adaptive_eps(&cs));
    let eps_t = config.eps.unwrap_or_else(|| adaptive_eps(&ct));
    Ok(CoralTransform {
        source_mean: source.column_means(),
        target_mean: target.column_means(),
        whiten: inv_sqrt_psd(&cs, eps_s)?,
        recolor: sqrt_psd(&ct, eps_t)?,
        align_means: config.align_means,
    })
}

/// `‖cov(a) - cov(b)‖_F / ‖cov(b)‖_F`.
pub fn covariance_gap(a: &Matrix, b: &Matrix) -> Result<f64, BaselineError> {
    let cb = b.covariance();
    Ok(a.covariance().sub(&cb)?.frobenius_norm() / cb.frobenius_norm())
}

/// Every cycle of every run stacked into one observation matrix.
pub fn stack_features(ds: &DomainDataset) -> Matrix {
    let q = ds.num_features();
    let mut data = Vec::new();
    for r in &ds.runs {
        data.extend_from_slice(r.features.as_slice());
    }
    Matrix::from_vec(data.len() / q.max(1), q, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoralDepth {
    /// One hidden layer of 32 units.
    Shallow,
    /// The dense stack of the LSTM baseline: 30 and 20 units with dropout 0.1.
    Deep,
}

impl std::str::FromStr for CoralDepth {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shallow" => Ok(CoralDepth::Shallow),
            "deep" => Ok(CoralDepth::Deep),
            other => Err(BaselineError::Spec(format!("unknown depth '{other}' (expected shallow or deep)"))),
        }
    }
}

impl CoralDepth {
    pub fn layers(self) -> (Vec<usize>, f64) {
        match self {
            CoralDepth::Shallow => (vec![32], 0.0),
            CoralDepth::Deep => (vec![30, 20], 0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoralNnConfig {
    pub depth: CoralDepth,
    /// `false` trains the same network on unaligned source features.
    pub align: bool,
    pub coral: CoralConfig,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub r_e: f64,
}

impl Default for CoralNnConfig {
    fn default() -> Self {
        Self {
            depth: CoralDepth::Shallow,
            align: true,
            coral: CoralConfig::default(),
            epochs: 100,
            lr: 0.001,
            batch_size: 256,
            r_e: DEFAULT_R_E,
        }
    }
}

/// Covariance gap between source and target before and after alignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoralDiagnostics {
    pub gap_before: f64,
    pub gap_after: f64,
}

/// Feed-forward regressor from the features of cycle `t - 1` to the RUL at `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoralModel {
    pub config: CoralNnConfig,
    pub num_features: usize,
    pub head: Head,
    /// Alignment fitted at training time, kept for reference; target inputs
    /// are fed to the network untransformed.
    pub transform: Option<CoralTransform>,
    pub scaler: Option<Scaler>,
}

impl CoralModel {
    pub fn new(config: &CoralNnConfig, q: usize, seed: u64) -> Result<Self, BaselineError> {
        if q == 0 {
            return Err(BaselineError::Spec("input needs at least one feature".into()));
        }
        let (layers, dropout) = config.depth.layers();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_INIT));
        Ok(Self {
            config: config.clone(),
            num_features: q,
            head: Head::init(q, &layers, Activation::Linear, dropout, true, &mut rng),
            transform: None,
            scaler: None,
        })
    }
}

fn single_step(batch: &SeqBatch) -> Result<&Matrix, NnError> {
    match batch.steps.as_slice() {
        [x] => Ok(x),
        steps => Err(NnError::Shape {
            op: "per-step regressor steps",
            expected: (1, batch.batch_size()),
            got: (steps.len(), batch.batch_size()),
        }),
    }
}

fn head_grads(head: &Head, batch: &SeqBatch, labels: &[f64], rng: &mut ChaCha8Rng) -> Result<(f64, Head), BaselineError> {
    let (pred, cache) = head.forward(single_step(batch)?, DropoutMode::Train, rng)?;
    let p = RegressionNorm::Squared;
    let loss = regression_loss(&pred, labels, p)?;
    let (g, _) = head.backward_pre(&cache, &regression_grad(&pred, labels, p)?)?;
    Ok((loss, g))
}

impl RulModel for CoralModel {
    fn window_len(&self) -> usize {
        1
    }

    fn label_scale(&self) -> f64 {
        self.config.r_e
    }

    fn predict_normalized(&self, batch: &SeqBatch) -> Result<Vec<f64>, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.head.forward(single_step(batch)?, DropoutMode::Eval, &mut rng)?.0)
    }
}

fn validate(config: &CoralNnConfig) -> Result<(), BaselineError> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(BaselineError::Spec("epochs and batch_size must be positive".into()));
    }
    if !(config.lr > 0.0 && config.lr.is_finite()) || !(config.r_e > 0.0 && config.r_e.is_finite()) {
        return Err(BaselineError::Spec(format!(
            "lr and r_e must be positive, got {} and {}",
            config.lr, config.r_e
        )));
    }
    Ok(())
}

/// Aligns labelled `source` features to the unlabelled `target` (labels on
/// `target` are never read) and trains the feed-forward regressor on the
/// aligned source.
pub fn train_coral_nn(
    source: &DomainDataset,
    target: &DomainDataset,
    config: &CoralNnConfig,
    seed: u64,
) -> Result<(CoralModel, TrainReport, CoralDiagnostics), BaselineError> {
    train_coral_nn_with_progress(source, target, config, seed, |_| {})
}

pub fn train_coral_nn_with_progress(
    source: &DomainDataset,
    target: &DomainDataset,
    config: &CoralNnConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<(CoralModel, TrainReport, CoralDiagnostics), BaselineError> {
    validate(config)?;
    for ds in [source, target] {
        if ds.runs.is_empty() {
            return Err(BaselineError::Empty(ds.name.to_string()));
        }
    }
    if !source.is_labeled() {
        return Err(BaselineError::Unlabeled(source.name.to_string()));
    }
    let started = Instant::now();
    let xs = stack_features(source);
    let xt = stack_features(&target.without_labels());
    let gap_before = covariance_gap(&xs, &xt)?;
    let (train, transform, gap_after) = if config.align {
        let tf = coral_fit(&xs, &xt, &config.coral)?;
        let gap = covariance_gap(&tf.apply(&xs)?, &xt)?;
        (tf.apply_dataset(source)?, Some(tf), gap)
    } else {
        (source.clone(), None, gap_before)
    };

    let set = WindowSet::new(&train, 1, Domain::Source)?;
    let mut model = CoralModel::new(config, source.num_features(), seed)?;
    model.transform = transform;
    model.scaler = source.scaler.clone();
    let schedule = Schedule {
        epochs: config.epochs,
        batch_size: config.batch_size,
        lr: config.lr,
        r_e: config.r_e,
    };
    let mut report = supervised_epochs(&mut model.head, &set, schedule, seed, head_grads, &mut on_epoch)?;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((model, report, CoralDiagnostics { gap_before, gap_after }))
}
