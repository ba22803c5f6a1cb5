use serde::{Deserialize, Serialize};

use super::DannError;
use crate::losses::RegressionNorm;
use crate::optim::{OptimizerKind, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE};

/// Architecture and training settings of one adaptation experiment.
///
/// Missing keys in a serialized record take the values of
/// [`DannHyperParams::fd004_to_fd001`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DannHyperParams {
    pub lstm_layers: Vec<usize>,
    pub lstm_dropout: f64,
    /// Width of the dense feature layer closing the extractor.
    pub f_units: usize,
    pub reg_layers: Vec<usize>,
    pub reg_dropout: f64,
    pub dom_layers: Vec<usize>,
    pub dom_dropout: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub lr_reg: f64,
    pub lr_dom: f64,
    pub optimizer: OptimizerKind,
    pub l2: f64,
    pub t_w: usize,
    /// Regression exponent (1 = MAE, 2 = MSE).
    pub p: RegressionNorm,
    /// Piecewise-linear RUL ceiling; labels are divided by it for training.
    pub r_e: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of source engines held out for validation.
    pub val_fraction: f64,
}

impl Default for DannHyperParams {
    fn default() -> Self {
        Self::fd004_to_fd001()
    }
}

impl DannHyperParams {
    pub fn fd004_to_fd001() -> Self {
        Self {
            lstm_layers: vec![100],
            lstm_dropout: 0.5,
            f_units: 30,
            reg_layers: vec![20],
            reg_dropout: 0.0,
            dom_layers: vec![20],
            dom_dropout: 0.1,
            alpha: 1.0,
            batch_size: 512,
            lr_reg: 0.01,
            lr_dom: 0.01,
            optimizer: OptimizerKind::Sgd,
            l2: 0.01,
            t_w: 30,
            p: RegressionNorm::Absolute,
            r_e: 125.0,
            clip_norm: 1.0,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            val_fraction: 0.1,
        }
    }

    pub fn fd001_to_fd004() -> Self {
        Self {
            lstm_layers: vec![128],
            lstm_dropout: 0.7,
            f_units: 64,
            reg_layers: vec![32, 32],
            reg_dropout: 0.3,
            dom_layers: vec![32],
            dom_dropout: 0.3,
            alpha: 1.0,
            batch_size: 256,
            lr_reg: 0.01,
            lr_dom: 0.1,
            ..Self::fd004_to_fd001()
        }
    }

    /// Looks up a named preset (`fd004-fd001`, `fd001-fd004`).
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "fd004-fd001" => Some(Self::fd004_to_fd001()),
            "fd001-fd004" => Some(Self::fd001_to_fd004()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), DannError> {
        let bad = |msg: String| Err(DannError::HyperParams(msg));
        if self.lstm_layers.is_empty() {
            return bad("at least one LSTM layer is required".into());
        }
        let units = self.lstm_layers.iter().chain(&self.reg_layers).chain(&self.dom_layers);
        if units.copied().chain([self.f_units]).any(|u| u == 0) {
            return bad("every layer needs at least one unit".into());
        }
        for (name, rate) in [
            ("lstm_dropout", self.lstm_dropout),
            ("reg_dropout", self.reg_dropout),
            ("dom_dropout", self.dom_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("{name} must lie in [0, 1), got {rate}"));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be a finite non-negative number, got {}", self.alpha));
        }
        if self.batch_size == 0 || self.t_w == 0 || self.max_epochs == 0 {
            return bad("batch_size, t_w and max_epochs must be positive".into());
        }
        for (name, v) in [
            ("lr_reg", self.lr_reg),
            ("lr_dom", self.lr_dom),
            ("r_e", self.r_e),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.l2 >= 0.0) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        let a = DannHyperParams::fd004_to_fd001();
        a.validate().unwrap();
        assert_eq!(a.lstm_layers, vec![100]);
        assert_eq!((a.f_units, a.batch_size, a.lr_reg, a.lr_dom), (30, 512, 0.01, 0.01));
        let b = DannHyperParams::fd001_to_fd004();
        b.validate().unwrap();
        assert_eq!(b.reg_layers, vec![32, 32]);
        assert_eq!((b.alpha, b.lr_dom, b.lstm_dropout), (1.0, 0.1, 0.7));
        assert_eq!(DannHyperParams::preset("fd001-fd004"), Some(b));
        assert_eq!(DannHyperParams::preset("fd002-fd003"), None);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let base = DannHyperParams::fd004_to_fd001();
        let cases = [
            DannHyperParams { lstm_layers: vec![], ..base.clone() },
            DannHyperParams { reg_layers: vec![0], ..base.clone() },
            DannHyperParams { dom_dropout: 1.0, ..base.clone() },
            DannHyperParams { alpha: -0.1, ..base.clone() },
            DannHyperParams { batch_size: 0, ..base.clone() },
            DannHyperParams { lr_dom: 0.0, ..base.clone() },
            DannHyperParams { val_fraction: 1.0, ..base.clone() },
        ];
        for hp in cases {
            assert!(hp.validate().is_err(), "{hp:?}");
        }
    }

    #[test]
    fn partial_records_fill_defaults() {
        let hp: DannHyperParams = serde_json::from_str(r#"{"alpha":0.5,"lstm_layers":[16],"p":2}"#).unwrap();
        assert_eq!(hp.alpha, 0.5);
        assert_eq!(hp.lstm_layers, vec![16]);
        assert_eq!(hp.p, RegressionNorm::Squared);
        assert_eq!(hp.batch_size, 512);
        assert!(serde_json::from_str::<DannHyperParams>(r#"{"alpah":0.5}"#).is_err());
    }
}
