//! Versioned JSON checkpoints: an architecture record, the input scaler and
//! every parameter tensor by name.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{BaselineError, BaselineModel, BaselineSpec, CoralModel, CoralNnConfig, CoralTransform};
use crate::dann::{build_model, DannError, DannHyperParams, DannModel};
use crate::data::{Scaler, SeqBatch};
use crate::eval::RulModel;
use crate::nn::{NnError, Parameters, TensorView};

pub const CHECKPOINT_FORMAT: &str = "rul-dann-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (format '{0}')")]
    Format(String),
    #[error("unsupported checkpoint version {0} (this build reads version {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("checkpoint does not match its architecture: {0}")]
    Architecture(String),
    #[error("parameter tensor '{0}' holds a non-finite value")]
    NonFinite(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Dann(#[from] DannError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<TensorView<'_>> for NamedTensor {
    fn from(t: TensorView<'_>) -> Self {
        Self {
            name: t.name,
            rows: t.rows,
            cols: t.cols,
            data: t.data.to_vec(),
        }
    }
}

/// Everything needed to rebuild an untrained network of the right shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "kebab-case")]
pub enum Architecture {
    Dann(DannHyperParams),
    Baseline(BaselineSpec),
    Coral(CoralNnConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub num_features: usize,
    pub scaler: Option<Scaler>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coral_transform: Option<CoralTransform>,
    pub tensors: Vec<NamedTensor>,
}

/// Any trained model that can be checkpointed.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Dann(DannModel),
    Baseline(BaselineModel),
    Coral(CoralModel),
}

impl From<DannModel> for SavedModel {
    fn from(m: DannModel) -> Self {
        SavedModel::Dann(m)
    }
}

impl From<BaselineModel> for SavedModel {
    fn from(m: BaselineModel) -> Self {
        SavedModel::Baseline(m)
    }
}

impl From<CoralModel> for SavedModel {
    fn from(m: CoralModel) -> Self {
        SavedModel::Coral(m)
    }
}

fn tensors_of<P: Parameters>(p: &P) -> Result<Vec<NamedTensor>, CheckpointError> {
    p.tensors("")
        .into_iter()
        .map(|t| {
            if t.data.iter().all(|v| v.is_finite()) {
                Ok(NamedTensor::from(t))
            } else {
                Err(CheckpointError::NonFinite(t.name))
            }
        })
        .collect()
}

/// Copies `saved` into `p` after checking names and shapes one by one.
fn load_into<P: Parameters>(p: &mut P, saved: &[NamedTensor]) -> Result<(), CheckpointError> {
    let expected: Vec<(String, usize, usize)> = p.tensors("").into_iter().map(|t| (t.name, t.rows, t.cols)).collect();
    if expected.len() != saved.len() {
        return Err(CheckpointError::Architecture(format!(
            "expected {} tensors, found {}",
            expected.len(),
            saved.len()
        )));
    }
    for ((name, rows, cols), t) in expected.iter().zip(saved) {
        if *name != t.name || (*rows, *cols) != (t.rows, t.cols) || t.data.len() != rows * cols {
            return Err(CheckpointError::Architecture(format!(
                "expected '{name}' of shape {rows}x{cols}, found '{}' of shape {}x{} with {} values",
                t.name,
                t.rows,
                t.cols,
                t.data.len()
            )));
        }
    }
    for (dst, t) in p.tensors_mut().into_iter().zip(saved) {
        dst.copy_from_slice(&t.data);
    }
    Ok(())
}

impl SavedModel {
    pub fn to_checkpoint(&self) -> Result<Checkpoint, CheckpointError> {
        let (architecture, num_features, scaler, coral_transform, tensors) = match self {
            SavedModel::Dann(m) => (
                Architecture::Dann(m.hp.clone()),
                m.num_features,
                m.scaler.clone(),
                None,
                tensors_of(&m.params)?,
            ),
            SavedModel::Baseline(m) => (
                Architecture::Baseline(m.spec.clone()),
                m.num_features,
                m.scaler.clone(),
                None,
                tensors_of(&m.params)?,
            ),
            SavedModel::Coral(m) => (
                Architecture::Coral(m.config.clone()),
                m.num_features,
                m.scaler.clone(),
                m.transform.clone(),
                tensors_of(&m.head)?,
            ),
        };
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            architecture,
            num_features,
            scaler,
            coral_transform,
            tensors,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(ck.format.clone()));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        // Initialization is overwritten, so the seed is irrelevant.
        Ok(match &ck.architecture {
            Architecture::Dann(hp) => {
                let mut m = build_model(hp, ck.num_features, 0)?;
                load_into(&mut m.params, &ck.tensors)?;
                m.scaler = ck.scaler.clone();
                SavedModel::Dann(m)
            }
            Architecture::Baseline(spec) => {
                let mut m = BaselineModel::new(spec, ck.num_features, 0)?;
                load_into(&mut m.params, &ck.tensors)?;
                m.scaler = ck.scaler.clone();
                SavedModel::Baseline(m)
            }
            Architecture::Coral(config) => {
                let mut m = CoralModel::new(config, ck.num_features, 0)?;
                load_into(&mut m.head, &ck.tensors)?;
                m.scaler = ck.scaler.clone();
                m.transform = ck.coral_transform.clone();
                SavedModel::Coral(m)
            }
        })
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint()?)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        Self::from_checkpoint(&serde_json::from_str(text)?)
    }

    pub fn num_features(&self) -> usize {
        match self {
            SavedModel::Dann(m) => m.num_features,
            SavedModel::Baseline(m) => m.num_features,
            SavedModel::Coral(m) => m.num_features,
        }
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        match self {
            SavedModel::Dann(m) => m.scaler.as_ref(),
            SavedModel::Baseline(m) => m.scaler.as_ref(),
            SavedModel::Coral(m) => m.scaler.as_ref(),
        }
    }

    /// Replaces the scaler stored with the model, e.g. by the one of the
    /// domain it will predict on.
    pub fn set_scaler(&mut self, scaler: Option<Scaler>) {
        match self {
            SavedModel::Dann(m) => m.scaler = scaler,
            SavedModel::Baseline(m) => m.scaler = scaler,
            SavedModel::Coral(m) => m.scaler = scaler,
        }
    }

    fn inner(&self) -> &dyn RulModel {
        match self {
            SavedModel::Dann(m) => m,
            SavedModel::Baseline(m) => m,
            SavedModel::Coral(m) => m,
        }
    }
}

impl RulModel for SavedModel {
    fn window_len(&self) -> usize {
        self.inner().window_len()
    }

    fn label_scale(&self) -> f64 {
        self.inner().label_scale()
    }

    fn predict_normalized(&self, batch: &SeqBatch) -> Result<Vec<f64>, NnError> {
        self.inner().predict_normalized(batch)
    }
}
