//! Update rules, gradient clipping, the step-decay schedule and early stopping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Parameters;

pub const RMSPROP_RHO: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const OPTIM_EPS: f64 = 1e-8;
/// Epoch (0-based) from which the decayed learning rate applies.
pub const LR_DECAY_EPOCH: usize = 100;
pub const LR_DECAY_FACTOR: f64 = 0.1;
pub const DEFAULT_PATIENCE: usize = 20;
pub const DEFAULT_MAX_EPOCHS: usize = 200;
/// A validation value must beat the best so far by more than this to count.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("parameter and gradient layouts differ ({params} vs {grads} values)")]
    Layout { params: usize, grads: usize },
    #[error("optimizer state was built for {expected} values, got {got}")]
    State { expected: usize, got: usize },
    #[error("invalid optimizer setting: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Rmsprop,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = OptimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(OptimError::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64, clip_norm: Option<f64>) -> Result<Self, OptimError> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(OptimError::Config(format!("learning rate must be positive, got {lr}")));
        }
        if let Some(c) = clip_norm {
            if !(c > 0.0) {
                return Err(OptimError::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(Self { kind, lr, clip_norm })
    }
}

fn check_layout<P: Parameters + ?Sized>(params: &P, grads: &P) -> Result<usize, OptimError> {
    let (np, ng) = (params.num_params(), grads.num_params());
    if np != ng {
        return Err(OptimError::Layout { params: np, grads: ng });
    }
    Ok(np)
}

/// Visits `(param, grad, flat index)` for every scalar parameter.
fn for_each_param<P: Parameters + ?Sized>(params: &mut P, grads: &P, mut f: impl FnMut(&mut f64, f64, usize)) {
    let gs = grads.tensors("");
    let mut k = 0;
    for (p, g) in params.tensors_mut().into_iter().zip(gs) {
        for (pv, &gv) in p.iter_mut().zip(g.data) {
            f(pv, gv, k);
            k += 1;
        }
    }
}

pub fn global_norm<P: Parameters + ?Sized>(grads: &P) -> f64 {
    grads.sq_norm().sqrt()
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<P: Parameters + ?Sized>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        grads.scale_all(max_norm / norm);
    }
    norm
}

/// `θ ← θ - λ ∇`.
pub fn sgd_step<P: Parameters + ?Sized>(params: &mut P, grads: &P, lr: f64) -> Result<(), OptimError> {
    check_layout(params, grads)?;
    for_each_param(params, grads, |p, g, _| *p -= lr * g);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RmsPropState {
    pub v: Vec<f64>,
}

/// `v ← ρ v + (1 - ρ) g²; θ ← θ - λ g / (√v + ε)`.
pub fn rmsprop_step<P: Parameters + ?Sized>(params: &mut P, grads: &P, lr: f64, state: &mut RmsPropState) -> Result<(), OptimError> {
    let n = check_layout(params, grads)?;
    if state.v.is_empty() {
        state.v = vec![0.0; n];
    } else if state.v.len() != n {
        return Err(OptimError::State {
            expected: state.v.len(),
            got: n,
        });
    }
    let v = &mut state.v;
    for_each_param(params, grads, |p, g, k| {
        v[k] = RMSPROP_RHO * v[k] + (1.0 - RMSPROP_RHO) * g * g;
        *p -= lr * g / (v[k].sqrt() + OPTIM_EPS);
    });
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Adam with bias-corrected moment estimates.
pub fn adam_step<P: Parameters + ?Sized>(params: &mut P, grads: &P, lr: f64, state: &mut AdamState) -> Result<(), OptimError> {
    let n = check_layout(params, grads)?;
    if state.m.is_empty() {
        state.m = vec![0.0; n];
        state.v = vec![0.0; n];
    } else if state.m.len() != n {
        return Err(OptimError::State {
            expected: state.m.len(),
            got: n,
        });
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    let (m, v) = (&mut state.m, &mut state.v);
    for_each_param(params, grads, |p, g, k| {
        m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
        v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[k] / c1;
        let v_hat = v[k] / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + OPTIM_EPS);
    });
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Slots {
    Sgd,
    Rmsprop(RmsPropState),
    Adam(AdamState),
}

/// An optimizer with its own accumulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    slots: Slots,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        let slots = match config.kind {
            OptimizerKind::Sgd => Slots::Sgd,
            OptimizerKind::Rmsprop => Slots::Rmsprop(RmsPropState::default()),
            OptimizerKind::Adam => Slots::Adam(AdamState::default()),
        };
        Self { config, slots }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Clips `grads` if configured, then applies one update at rate `lr`.
    /// Returns the gradient norm before clipping.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &mut P, lr: f64) -> Result<f64, OptimError> {
        let norm = match self.config.clip_norm {
            Some(max) => clip_global_norm(grads, max),
            None => global_norm(grads),
        };
        match &mut self.slots {
            Slots::Sgd => sgd_step(params, grads, lr)?,
            Slots::Rmsprop(s) => rmsprop_step(params, grads, lr, s)?,
            Slots::Adam(s) => adam_step(params, grads, lr, s)?,
        }
        Ok(norm)
    }
}

/// Step decay: `base_lr` before [`LR_DECAY_EPOCH`], `0.1 · base_lr` after.
pub fn lr_at_epoch(base_lr: f64, epoch: usize) -> f64 {
    if epoch < LR_DECAY_EPOCH {
        base_lr
    } else {
        LR_DECAY_FACTOR * base_lr
    }
}

/// Early-stopping bookkeeping over 0-based epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopState {
    pub best_val_rmse: f64,
    pub best_epoch: Option<usize>,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for StopState {
    fn default() -> Self {
        Self::new(DEFAULT_PATIENCE, DEFAULT_MAX_EPOCHS)
    }
}

impl StopState {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        Self {
            best_val_rmse: f64::INFINITY,
            best_epoch: None,
            epochs_since_improvement: 0,
            patience,
            max_epochs,
        }
    }

    /// Records the validation value of `epoch`; returns `(stop, improved)`.
    pub fn observe(&mut self, val_rmse: f64, epoch: usize) -> (bool, bool) {
        let improved = val_rmse < self.best_val_rmse - IMPROVEMENT_EPS;
        if improved {
            self.best_val_rmse = val_rmse;
            self.best_epoch = Some(epoch);
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        let stop = self.epochs_since_improvement >= self.patience || epoch + 1 >= self.max_epochs;
        (stop, improved)
    }
}

/// Pure form of [`StopState::observe`].
pub fn should_stop(state: &StopState, val_rmse: f64, epoch: usize) -> (bool, StopState) {
    let mut next = *state;
    let (stop, _) = next.observe(val_rmse, epoch);
    (stop, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Matrix, Vector};
    use crate::nn::{Activation, DenseParams};

    fn scalar(v: f64) -> DenseParams {
        DenseParams::new(Matrix::from_rows(&[[v]]), Vector::zeros(1), Activation::Linear).unwrap()
    }

    fn pair(a: f64, b: f64) -> DenseParams {
        DenseParams::new(Matrix::from_rows(&[[a]]), Vector::from(vec![b]), Activation::Linear).unwrap()
    }

    fn value(p: &DenseParams) -> f64 {
        p.w[(0, 0)]
    }

    #[test]
    fn clip_examples() {
        let mut g = pair(0.3, 0.4);
        assert_eq!(clip_global_norm(&mut g, 1.0), 0.5);
        assert_eq!(g, pair(0.3, 0.4));
        let mut g = pair(3.0, 4.0);
        clip_global_norm(&mut g, 1.0);
        assert!((g.w[(0, 0)] - 0.6).abs() < 1e-15 && (g.b[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_examples() {
        let mut p = scalar(1.0);
        sgd_step(&mut p, &scalar(0.0), 0.1).unwrap();
        assert_eq!(value(&p), 1.0);
        sgd_step(&mut p, &scalar(2.0), 0.1).unwrap();
        assert!((value(&p) - 0.8).abs() < 1e-15);
        assert!(sgd_step(&mut p, &DenseParams::zeros(2, 1, Activation::Linear), 0.1).is_err());
    }

    fn converge(mut step: impl FnMut(&mut DenseParams, &DenseParams), iters: usize) -> f64 {
        // Minimize (θ - 3)².
        let mut p = scalar(-2.0);
        for _ in 0..iters {
            let g = scalar(2.0 * (value(&p) - 3.0));
            step(&mut p, &g);
        }
        value(&p)
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        let theta = converge(|p, g| sgd_step(p, g, 0.1).unwrap(), 1000);
        assert!((theta - 3.0).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_first_step() {
        let mut p = scalar(0.0);
        let mut s = RmsPropState::default();
        rmsprop_step(&mut p, &scalar(0.0), 0.01, &mut s).unwrap();
        assert_eq!(value(&p), 0.0);
        let mut p = scalar(0.0);
        let mut s = RmsPropState::default();
        rmsprop_step(&mut p, &scalar(1.0), 0.01, &mut s).unwrap();
        assert!((s.v[0] - 0.1).abs() < 1e-15);
        let expected = -0.01 / (0.1f64.sqrt() + 1e-8);
        assert!((value(&p) - expected).abs() < 1e-15);
        assert!((value(&p) + 0.031623).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_converges_on_quadratic() {
        let mut s = RmsPropState::default();
        let mut lr = 0.05;
        let theta = converge(
            |p, g| {
                rmsprop_step(p, g, lr, &mut s).unwrap();
                lr *= 0.995;
            },
            3000,
        );
        assert!((theta - 3.0).abs() < 1e-3, "{theta}");
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for scale in [1e-4, 1.0, 1e4] {
            let mut p = scalar(0.0);
            let mut s = AdamState::default();
            adam_step(&mut p, &scalar(scale), 0.001, &mut s).unwrap();
            assert!((value(&p).abs() - 0.001).abs() < 0.05 * 0.001);
        }
        let mut p = scalar(0.5);
        adam_step(&mut p, &scalar(0.0), 0.001, &mut AdamState::default()).unwrap();
        assert_eq!(value(&p), 0.5);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut s = AdamState::default();
        let theta = converge(|p, g| adam_step(p, g, 0.01, &mut s).unwrap(), 5000);
        assert!((theta - 3.0).abs() < 1e-3, "{theta}");
    }

    #[test]
    fn optimizer_clips_before_stepping() {
        let cfg = OptimizerConfig::new(OptimizerKind::Sgd, 1.0, Some(1.0)).unwrap();
        let mut opt = Optimizer::new(cfg);
        let mut p = pair(0.0, 0.0);
        let mut g = pair(3.0, 4.0);
        assert_eq!(opt.step(&mut p, &mut g, 1.0).unwrap(), 5.0);
        assert!((p.w[(0, 0)] + 0.6).abs() < 1e-15);
        assert!(OptimizerConfig::new(OptimizerKind::Sgd, 0.0, None).is_err());
        assert!(OptimizerConfig::new(OptimizerKind::Sgd, 0.1, Some(0.0)).is_err());
        assert!("nadam".parse::<OptimizerKind>().is_err());
    }

    #[test]
    fn lr_schedule_boundaries() {
        assert_eq!(lr_at_epoch(0.01, 0), 0.01);
        assert_eq!(lr_at_epoch(0.01, 99), 0.01);
        assert!((lr_at_epoch(0.01, 100) - 0.001).abs() < 1e-18);
    }

    #[test]
    fn flat_sequence_stops_at_patience() {
        let mut s = StopState::default();
        let mut stopped = None;
        for epoch in 0..200 {
            let (stop, next) = should_stop(&s, 5.0, epoch);
            s = next;
            if stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(20));
        assert_eq!(s.best_epoch, Some(0));
    }

    #[test]
    fn improving_sequence_runs_to_max_epochs() {
        let mut s = StopState::default();
        for epoch in 0..200 {
            let (stop, improved) = s.observe(100.0 - epoch as f64 * 0.1, epoch);
            assert!(improved);
            assert_eq!(stop, epoch == 199);
        }
    }

    #[test]
    fn tiny_improvements_do_not_count() {
        let mut s = StopState::new(3, 200);
        s.observe(1.0, 0);
        assert_eq!(s.observe(1.0 - 5e-7, 1), (false, false));
        assert_eq!(s.observe(f64::NAN, 2), (false, false));
        assert_eq!(s.observe(0.5, 3), (false, true));
        assert_eq!(s.best_epoch, Some(3));
    }

    proptest::proptest! {
        #[test]
        fn clip_bounds_norm_and_keeps_direction(a in -100.0f64..100.0, b in -100.0f64..100.0, max in 0.01f64..10.0) {
            let orig = pair(a, b);
            let mut g = orig.clone();
            clip_global_norm(&mut g, max);
            proptest::prop_assert!(global_norm(&g) <= max + 1e-12);
            let dot = g.w[(0, 0)] * a + g.b[0] * b;
            let n = global_norm(&g) * global_norm(&orig);
            if n > 0.0 {
                proptest::prop_assert!((dot / n - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn zero_lr_sgd_is_identity(a in -10.0f64..10.0, g in -10.0f64..10.0) {
            let mut p = scalar(a);
            sgd_step(&mut p, &scalar(g), 0.0).unwrap();
            proptest::prop_assert_eq!(value(&p), a);
        }
    }
}
