//! Experiment configuration files.
//!
//! A config is TOML with a top-level block, a `[data]` section and one model
//! section:
//!
//! ```toml
//! seed = 0
//! trials = 3
//!
//! [data]
//! source = ["train_FD004.txt"]
//! target = ["train_FD001.txt"]
//! target_test = "test_FD001.txt"
//! target_truth = "RUL_FD001.txt"
//! normalization = "minmax"
//! r_e = 125
//!
//! [dann]
//! preset = "fd004-fd001"
//! max_epochs = 50
//! ```
//!
//! `[dann]` takes the fields of `DannHyperParams` on top of an optional
//! `preset`; `[baseline]` takes a `mode`, an optional C-MAPSS `dataset` name
//! that selects the window length, and then the fields of `BaselineSpec`
//! (LSTM modes) or `CoralNnConfig` (CORAL modes). Instead of files, `[data]`
//! may hold a `[data.synthetic]` table. Relative paths are resolved against
//! the directory of the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rul_dann::baselines::{BaselineMode, BaselineSpec, CoralDepth, CoralNnConfig};
use rul_dann::dann::DannHyperParams;
use rul_dann::data::{NormKind, ShiftConfig, SyntheticConfig, DEFAULT_R_E};
use rul_dann::eval::PredictAt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub dann: Option<toml::Table>,
    #[serde(default)]
    pub baseline: Option<toml::Table>,
}

fn one() -> usize {
    1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 1,
            out_dir: None,
            data: DataConfig::default(),
            dann: None,
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Run-to-failure source files; several files are concatenated.
    pub source: Vec<PathBuf>,
    /// Run-to-failure target files. Their labels are only read by the
    /// target-only baseline.
    pub target: Vec<PathBuf>,
    pub target_test: Option<PathBuf>,
    pub target_truth: Option<PathBuf>,
    pub normalization: NormKind,
    pub r_e: f64,
    /// Overrides the window length of the model section.
    pub t_w: Option<usize>,
    /// Defaults to the last window per unit for test files and to all
    /// windows otherwise.
    pub eval_at: Option<PredictAt>,
    pub synthetic: Option<SynthConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: Vec::new(),
            target: Vec::new(),
            target_test: None,
            target_truth: None,
            normalization: NormKind::MinMax,
            r_e: DEFAULT_R_E,
            t_w: None,
            eval_at: None,
            synthetic: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftPreset {
    Identity,
    SensorInversion,
}

impl std::str::FromStr for ShiftPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(ShiftPreset::Identity),
            "sensor-inversion" => Ok(ShiftPreset::SensorInversion),
            other => Err(format!("unknown shift '{other}' (expected identity or sensor-inversion)")),
        }
    }
}

/// Generator settings for synthetic domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_units: usize,
    pub t_range: (usize, usize),
    pub q: usize,
    pub shift: ShiftPreset,
    /// Explicit shift; takes precedence over `shift`.
    pub custom_shift: Option<ShiftConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let base = SyntheticConfig::default();
        Self {
            seed: 0,
            n_units: base.n_units,
            t_range: base.t_range,
            q: base.q,
            shift: ShiftPreset::SensorInversion,
            custom_shift: None,
        }
    }
}

impl SynthConfig {
    pub fn generator(&self, r_e: f64) -> SyntheticConfig {
        let shift = self.custom_shift.unwrap_or(match self.shift {
            ShiftPreset::Identity => ShiftConfig::identity(),
            ShiftPreset::SensorInversion => ShiftConfig::sensor_inversion(self.q),
        });
        SyntheticConfig {
            n_units: self.n_units,
            t_range: self.t_range,
            q: self.q,
            shift,
            r_e,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        d.source.iter_mut().chain(d.target.iter_mut()).for_each(fix);
        d.target_test.iter_mut().chain(d.target_truth.iter_mut()).for_each(fix);
        if let Some(out) = &mut self.out_dir {
            fix(out);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        let d = &self.data;
        if !(d.r_e > 0.0 && d.r_e.is_finite()) {
            bail!("r_e must be positive, got {}", d.r_e);
        }
        if d.synthetic.is_some() {
            if !d.source.is_empty() || !d.target.is_empty() || d.target_test.is_some() {
                bail!("[data] holds both synthetic settings and data files");
            }
        } else {
            if d.source.is_empty() || d.target.is_empty() {
                bail!("[data] needs source and target files (or a [data.synthetic] table)");
            }
            if d.target_test.is_some() != d.target_truth.is_some() {
                bail!("target_test and target_truth must be given together");
            }
        }
        Ok(())
    }

    /// Hyperparameters of the `[dann]` section, preset first, then overrides.
    pub fn dann_hyper_params(&self) -> Result<DannHyperParams> {
        let mut table = self.dann.clone().unwrap_or_default();
        let base = match table.remove("preset") {
            Some(toml::Value::String(name)) => {
                DannHyperParams::preset(&name).with_context(|| format!("unknown preset '{name}'"))?
            }
            Some(other) => bail!("preset must be a string, got {other}"),
            None => DannHyperParams::default(),
        };
        let mut hp: DannHyperParams = overlay(&base, table).context("in [dann]")?;
        hp.r_e = self.data.r_e;
        if let Some(t_w) = self.data.t_w {
            hp.t_w = t_w;
        }
        hp.validate()?;
        Ok(hp)
    }

    /// The `[baseline]` section: mode and model settings.
    pub fn baseline(&self) -> Result<BaselineSettings> {
        let mut table = self.baseline.clone().context("config has no [baseline] section")?;
        let mode: BaselineMode = match table.remove("mode") {
            Some(toml::Value::String(m)) => m.parse()?,
            Some(other) => bail!("mode must be a string, got {other}"),
            None => bail!("[baseline] needs a mode"),
        };
        let dataset = match table.remove("dataset") {
            Some(toml::Value::String(name)) => Some(name),
            Some(other) => bail!("dataset must be a string, got {other}"),
            None => None,
        };
        match mode {
            BaselineMode::SourceOnly | BaselineMode::TargetOnly => {
                let base = match &dataset {
                    Some(name) => BaselineSpec::for_dataset(name).with_context(|| format!("unknown dataset '{name}'"))?,
                    None => BaselineSpec::default(),
                };
                let mut spec: BaselineSpec = overlay(&base, table).context("in [baseline]")?;
                spec.r_e = self.data.r_e;
                if let Some(t_w) = self.data.t_w {
                    spec.t_w = t_w;
                }
                spec.validate()?;
                Ok(BaselineSettings::Lstm { mode, spec })
            }
            BaselineMode::CoralNn | BaselineMode::CoralDnn => {
                let depth = if mode == BaselineMode::CoralNn {
                    CoralDepth::Shallow
                } else {
                    CoralDepth::Deep
                };
                let base = CoralNnConfig {
                    depth,
                    ..CoralNnConfig::default()
                };
                let mut config: CoralNnConfig = overlay(&base, table).context("in [baseline]")?;
                config.depth = depth;
                config.r_e = self.data.r_e;
                Ok(BaselineSettings::Coral { mode, config })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineSettings {
    Lstm { mode: BaselineMode, spec: BaselineSpec },
    Coral { mode: BaselineMode, config: CoralNnConfig },
}

/// Replaces the fields of `base` named in `table`. Unknown keys are errors.
fn overlay<T: Serialize + serde::de::DeserializeOwned>(base: &T, table: toml::Table) -> Result<T> {
    let mut merged = match toml::Value::try_from(base)? {
        toml::Value::Table(t) => t,
        _ => bail!("settings must serialize to a table"),
    };
    merged.extend(table);
    Ok(toml::Value::Table(merged).try_into()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rul_dann::losses::RegressionNorm;

    #[test]
    fn preset_with_overrides() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 3
            [data]
            source = ["a.txt"]
            target = ["b.txt"]
            r_e = 130
            [dann]
            preset = "fd001-fd004"
            max_epochs = 7
            p = 2
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        let hp = cfg.dann_hyper_params().unwrap();
        assert_eq!(hp.reg_layers, vec![32, 32]);
        assert_eq!(hp.max_epochs, 7);
        assert_eq!(hp.p, RegressionNorm::Squared);
        assert_eq!(hp.r_e, 130.0);
        assert_eq!(cfg.trials, 1);
    }

    #[test]
    fn typos_and_bad_presets_fail() {
        let with = |section: &str| {
            ExperimentConfig::from_toml(&format!("[data]\nsource=[\"a\"]\ntarget=[\"b\"]\n{section}"))
                .and_then(|c| c.dann_hyper_params())
        };
        assert!(with("[dann]\nalhpa = 1.0").is_err());
        assert!(with("[dann]\npreset = \"fd002-fd003\"").is_err());
        assert!(with("[dann]\nalpha = -1.0").is_err());
        assert!(ExperimentConfig::from_toml("seeed = 1").is_err());
    }

    #[test]
    fn baseline_modes() {
        let parse = |body: &str| {
            ExperimentConfig::from_toml(&format!("[data]\nsource=[\"a\"]\ntarget=[\"b\"]\n[baseline]\n{body}"))
                .unwrap()
                .baseline()
        };
        match parse("mode = \"target-only\"\ndataset = \"FD004\"\nepochs = 3").unwrap() {
            BaselineSettings::Lstm { mode, spec } => {
                assert_eq!(mode, BaselineMode::TargetOnly);
                assert_eq!((spec.t_w, spec.epochs), (15, 3));
            }
            other => panic!("{other:?}"),
        }
        match parse("mode = \"coral-dnn\"\nlr = 0.01").unwrap() {
            BaselineSettings::Coral { config, .. } => {
                assert_eq!(config.depth, CoralDepth::Deep);
                assert_eq!(config.lr, 0.01);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse("mode = \"tca\"").is_err());
        assert!(parse("epochs = 3").is_err());
    }

    #[test]
    fn validation_rules() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_err());
        cfg.data.synthetic = Some(SynthConfig::default());
        cfg.validate().unwrap();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        cfg.trials = 1;
        cfg.data.source = vec!["x".into()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = ExperimentConfig::from_toml("[data]\nsource=[\"a.txt\"]\ntarget=[\"/abs/b.txt\"]").unwrap();
        cfg.resolve_paths(Path::new("/configs"));
        assert_eq!(cfg.data.source[0], PathBuf::from("/configs/a.txt"));
        assert_eq!(cfg.data.target[0], PathBuf::from("/abs/b.txt"));
    }
}
