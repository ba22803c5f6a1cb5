//! Domain-adversarial LSTM regressor: a shared feature extractor `g_f`, a RUL
//! regressor `g_y` and a domain classifier `g_d` behind a gradient-reversal layer.

mod hyper;
mod report;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{make_epoch_batches, split_train_val, DataError, Domain, DomainDataset, Scaler, SeqBatch, WindowSet};
use crate::eval::{predict_windows, RulModel};
use crate::losses::{
    add_l2_grad, domain_accuracy, domain_bce, domain_bce_logit_grad, regression_grad, regression_loss, rmse, LossError,
};
use crate::nn::{
    grl_backward_matrix, Activation, DropoutMode, FeatureCache, FeatureExtractor, Head, HeadCache, NnError, Parameters,
    TensorView,
};
use crate::optim::{lr_at_epoch, OptimError, Optimizer, OptimizerConfig, StopState};

pub use hyper::DannHyperParams;
pub use report::{EpochRow, TrainReport, REPORT_HEADER};

#[derive(Debug, Error)]
pub enum DannError {
    #[error("invalid hyperparameters: {0}")]
    HyperParams(String),
    #[error("{0} domain has no engines")]
    EmptyDomain(&'static str),
    #[error("dataset '{0}' has no RUL labels")]
    Unlabeled(String),
    #[error("feature count mismatch: model expects {expected}, data has {got}")]
    Features { expected: usize, got: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Independent sub-seed for a named random stream (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_BATCHES: u64 = 4;

/// All trainable tensors: `θ_f`, `θ_y`, `θ_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DannParams {
    pub feature: FeatureExtractor,
    pub regressor: Head,
    pub classifier: Head,
}

impl Parameters for DannParams {
    fn tensors(&self, prefix: &str) -> Vec<TensorView<'_>> {
        let mut out = self.feature.tensors(&format!("{prefix}feature."));
        out.extend(self.regressor.tensors(&format!("{prefix}regressor.")));
        out.extend(self.classifier.tensors(&format!("{prefix}classifier.")));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.feature.tensors_mut();
        out.extend(self.regressor.tensors_mut());
        out.extend(self.classifier.tensors_mut());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DannModel {
    pub hp: DannHyperParams,
    pub num_features: usize,
    pub params: DannParams,
    /// Scaler for inputs at prediction time; `fit` stores the source's.
    pub scaler: Option<Scaler>,
}

pub struct RegressionCache {
    feature: FeatureCache,
    head: HeadCache,
}

pub struct DomainCache {
    feature: FeatureCache,
    head: HeadCache,
}

impl DomainCache {
    pub fn logits(&self) -> Vec<f64> {
        self.head.logits()
    }
}

/// Builds a freshly initialized model. The regressor's output layer starts at
/// zero so first predictions are 0.
pub fn build_model(hp: &DannHyperParams, q: usize, seed: u64) -> Result<DannModel, DannError> {
    hp.validate()?;
    if q == 0 {
        return Err(DannError::HyperParams("input needs at least one feature".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_INIT));
    let feature = FeatureExtractor::init(q, &hp.lstm_layers, hp.f_units, hp.lstm_dropout, &mut rng);
    let regressor = Head::init(hp.f_units, &hp.reg_layers, Activation::Linear, hp.reg_dropout, true, &mut rng);
    let classifier = Head::init(hp.f_units, &hp.dom_layers, Activation::Sigmoid, hp.dom_dropout, false, &mut rng);
    Ok(DannModel {
        hp: hp.clone(),
        num_features: q,
        params: DannParams {
            feature,
            regressor,
            classifier,
        },
        scaler: None,
    })
}

impl DannModel {
    fn check_batch(&self, batch: &SeqBatch) -> Result<(), DannError> {
        let got = batch.steps.first().map_or(self.num_features, |m| m.cols());
        if got != self.num_features {
            return Err(DannError::Features {
                expected: self.num_features,
                got,
            });
        }
        Ok(())
    }

    /// Normalized RUL predictions `g_y(g_f(x))`.
    pub fn forward_regression(
        &self,
        batch: &SeqBatch,
        mode: DropoutMode,
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, RegressionCache), DannError> {
        self.check_batch(batch)?;
        let (f, feature) = self.params.feature.forward(&batch.steps, mode, rng)?;
        let (y, head) = self.params.regressor.forward(&f, mode, rng)?;
        Ok((y, RegressionCache { feature, head }))
    }

    /// Domain probabilities `g_d(g_f(x))`; the reversal layer is the identity here.
    pub fn forward_domain(
        &self,
        batch: &SeqBatch,
        mode: DropoutMode,
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, DomainCache), DannError> {
        self.check_batch(batch)?;
        let (f, feature) = self.params.feature.forward(&batch.steps, mode, rng)?;
        let (d, head) = self.params.classifier.forward(&f, mode, rng)?;
        Ok((d, DomainCache { feature, head }))
    }

    /// Gradients of the source regression loss (plus L2 on `θ_y`); `θ_d` entries are zero.
    pub fn regression_grads(
        &self,
        batch: &SeqBatch,
        labels: &[f64],
        rng: &mut impl Rng,
    ) -> Result<(f64, DannParams), DannError> {
        let (pred, cache) = self.forward_regression(batch, DropoutMode::Train, rng)?;
        let loss = regression_loss(&pred, labels, self.hp.p)?;
        let dy = regression_grad(&pred, labels, self.hp.p)?;
        let (mut g_reg, df) = self.params.regressor.backward_pre(&cache.head, &dy)?;
        add_l2_grad(&mut g_reg, &self.params.regressor, self.hp.l2);
        let g_feat = self.params.feature.backward(&cache.feature, &df)?;
        Ok((
            loss,
            DannParams {
                feature: g_feat,
                regressor: g_reg,
                classifier: self.params.classifier.zeros_like(),
            },
        ))
    }

    /// Gradients of the domain loss on `source ++ target` (labels 0 and 1):
    /// `θ_d` descends the loss (plus L2), `θ_f` receives the reversed gradient
    /// scaled by α, `θ_y` entries are zero. Returns `(loss, accuracy, grads)`.
    pub fn domain_grads(
        &self,
        source: &SeqBatch,
        target: &SeqBatch,
        rng: &mut impl Rng,
    ) -> Result<(f64, f64, DannParams), DannError> {
        let batch = source.concat(target);
        let labels: Vec<f64> = std::iter::repeat_n(Domain::Source.label(), source.batch_size())
            .chain(std::iter::repeat_n(Domain::Target.label(), target.batch_size()))
            .collect();
        let (prob, cache) = self.forward_domain(&batch, DropoutMode::Train, rng)?;
        let loss = domain_bce(&prob, &labels)?;
        let acc = domain_accuracy(&prob, &labels)?;
        let dz = domain_bce_logit_grad(&cache.logits(), &labels)?;
        let (mut g_dom, df) = self.params.classifier.backward_pre(&cache.head, &dz)?;
        add_l2_grad(&mut g_dom, &self.params.classifier, self.hp.l2);
        let reversed = grl_backward_matrix(&df, self.hp.alpha);
        let g_feat = self.params.feature.backward(&cache.feature, &reversed)?;
        Ok((
            loss,
            acc,
            DannParams {
                feature: g_feat,
                regressor: self.params.regressor.zeros_like(),
                classifier: g_dom,
            },
        ))
    }
}

impl RulModel for DannModel {
    fn window_len(&self) -> usize {
        self.hp.t_w
    }

    fn label_scale(&self) -> f64 {
        self.hp.r_e
    }

    fn predict_normalized(&self, batch: &SeqBatch) -> Result<Vec<f64>, NnError> {
        // Eval mode draws nothing from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (f, _) = self.params.feature.forward(&batch.steps, DropoutMode::Eval, &mut rng)?;
        let (y, _) = self.params.regressor.forward(&f, DropoutMode::Eval, &mut rng)?;
        Ok(y)
    }
}

/// Separate optimizer state for the regression and the domain pass.
#[derive(Debug, Clone, PartialEq)]
pub struct OptStates {
    pub regression: Optimizer,
    pub domain: Optimizer,
}

impl OptStates {
    pub fn new(hp: &DannHyperParams) -> Result<Self, DannError> {
        let make = |lr| OptimizerConfig::new(hp.optimizer, lr, Some(hp.clip_norm)).map(Optimizer::new);
        Ok(Self {
            regression: make(hp.lr_reg)?,
            domain: make(hp.lr_dom)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub reg_loss: f64,
    pub dom_loss: f64,
    pub dom_acc: f64,
}

/// Pass 1: one clipped update of `θ_f, θ_y` on the source regression loss.
pub fn regression_pass(
    m: &mut DannModel,
    source: &SeqBatch,
    labels: &[f64],
    opt: &mut Optimizer,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<f64, DannError> {
    let (loss, mut grads) = m.regression_grads(source, labels, rng)?;
    opt.step(&mut m.params, &mut grads, lr)?;
    Ok(loss)
}

/// Pass 2: one clipped update of `θ_d` (descending) and `θ_f` (through the
/// reversal layer) on the domain loss. Returns `(loss, accuracy)`.
pub fn domain_pass(
    m: &mut DannModel,
    source: &SeqBatch,
    target: &SeqBatch,
    opt: &mut Optimizer,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<(f64, f64), DannError> {
    let (loss, acc, mut grads) = m.domain_grads(source, target, rng)?;
    opt.step(&mut m.params, &mut grads, lr)?;
    Ok((loss, acc))
}

/// One adversarial step on a batch pair. `labels` are normalized source RULs;
/// the target side carries inputs only.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    m: &mut DannModel,
    source: &SeqBatch,
    labels: &[f64],
    target: &SeqBatch,
    opts: &mut OptStates,
    lr_reg: f64,
    lr_dom: f64,
    rng: &mut impl Rng,
) -> Result<StepLosses, DannError> {
    let reg_loss = regression_pass(m, source, labels, &mut opts.regression, lr_reg, rng)?;
    let (dom_loss, dom_acc) = domain_pass(m, source, target, &mut opts.domain, lr_dom, rng)?;
    Ok(StepLosses {
        reg_loss,
        dom_loss,
        dom_acc,
    })
}

/// Trains on labelled `source` and unlabelled `target` (labels present on
/// `target` are dropped before training starts).
pub fn fit(
    source: &DomainDataset,
    target: &DomainDataset,
    hp: &DannHyperParams,
    seed: u64,
) -> Result<(DannModel, TrainReport), DannError> {
    fit_with_progress(source, target, hp, seed, |_| {})
}

pub fn fit_with_progress(
    source: &DomainDataset,
    target: &DomainDataset,
    hp: &DannHyperParams,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<(DannModel, TrainReport), DannError> {
    hp.validate()?;
    if source.runs.is_empty() {
        return Err(DannError::EmptyDomain("source"));
    }
    if target.runs.is_empty() {
        return Err(DannError::EmptyDomain("target"));
    }
    if !source.is_labeled() {
        return Err(DannError::Unlabeled(source.name.to_string()));
    }
    let q = source.num_features();
    if target.num_features() != q {
        return Err(DannError::Features {
            expected: q,
            got: target.num_features(),
        });
    }
    let started = Instant::now();

    let (train_runs, val_runs) = split_train_val(&source.runs, hp.val_fraction, derive_seed(seed, STREAM_SPLIT))?;
    let src_train = WindowSet::from_runs(source.name.clone(), train_runs, hp.t_w, Domain::Source)?;
    let src_val = WindowSet::from_runs(source.name.clone(), val_runs, hp.t_w, Domain::Source)?;
    let tgt = WindowSet::new(&target.without_labels(), hp.t_w, Domain::Target)?;
    let val_idx: Vec<usize> = (0..src_val.len()).collect();
    let val_truth = src_val.labels(&val_idx).ok_or_else(|| DannError::Unlabeled(source.name.to_string()))?;

    let mut model = build_model(hp, q, seed)?;
    model.scaler = source.scaler.clone();
    let mut opts = OptStates::new(hp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_DROPOUT));
    let src_idx: Vec<usize> = (0..src_train.len()).collect();
    let tgt_idx: Vec<usize> = (0..tgt.len()).collect();

    let mut stop = StopState::new(hp.patience, hp.max_epochs);
    let mut best = model.params.clone();
    let mut report = TrainReport::default();
    for epoch in 0..hp.max_epochs {
        let lr_reg = lr_at_epoch(hp.lr_reg, epoch);
        let lr_dom = lr_at_epoch(hp.lr_dom, epoch);
        let batches = make_epoch_batches(
            &src_idx,
            &tgt_idx,
            hp.batch_size,
            derive_seed(derive_seed(seed, STREAM_BATCHES), epoch as u64),
        )?;
        let (mut reg, mut dom, mut acc) = (0.0, 0.0, 0.0);
        for pair in &batches {
            let xs = src_train.inputs(&pair.source);
            let ys: Vec<f64> = src_train
                .labels(&pair.source)
                .expect("source windows are labelled")
                .into_iter()
                .map(|y| y / hp.r_e)
                .collect();
            let xt = tgt.inputs(&pair.target);
            let s = train_step(&mut model, &xs, &ys, &xt, &mut opts, lr_reg, lr_dom, &mut rng)?;
            reg += s.reg_loss;
            dom += s.dom_loss;
            acc += s.dom_acc;
        }
        let n = batches.len() as f64;
        let val_rmse = rmse(&predict_windows(&model, &src_val)?, &val_truth)?;
        let row = EpochRow {
            epoch,
            src_reg_loss: reg / n,
            dom_loss: Some(dom / n),
            dom_acc: Some(acc / n),
            val_rmse: Some(val_rmse),
        };
        on_epoch(&row);
        report.rows.push(row);
        let (done, improved) = stop.observe(val_rmse, epoch);
        if improved {
            best = model.params.clone();
        }
        if done {
            report.stop_epoch = Some(epoch);
            break;
        }
    }
    model.params = best;
    report.best_epoch = stop.best_epoch;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((model, report))
}
