//! Commands that do not train: synthetic data generation, prediction and
//! evaluation of a saved checkpoint.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rul_dann::baselines::{covariance_gap, stack_features};
use rul_dann::checkpoint::SavedModel;
use rul_dann::data::{gen_synthetic, write_cmapss, DomainDataset, NormKind, Scaler};
use rul_dann::eval::{metrics, predict_windows, window_set, Metrics, PredictAt, RulModel};

use crate::artifacts::{blob_hash, write_atomic, write_json, InputFile};
use crate::config::SynthConfig;
use crate::experiment::{read_runs, read_truth};

pub fn load_checkpoint(path: &Path) -> Result<SavedModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SavedModel::from_json(&text).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Where prediction inputs come from and how they are labelled and scaled.
#[derive(Debug, Clone)]
pub struct PredictInput {
    pub data: PathBuf,
    pub truth: Option<PathBuf>,
    /// Label `data` as complete run-to-failure series instead of using a truth file.
    pub run_to_failure: bool,
    /// Fit the scaler on this file instead of using the checkpoint's.
    pub reference: Option<PathBuf>,
    pub normalization: Option<NormKind>,
    pub at: PredictAt,
}

fn prepare(model: &SavedModel, input: &PredictInput) -> Result<DomainDataset> {
    if input.truth.is_some() && input.run_to_failure {
        bail!("--truth and --run-to-failure are mutually exclusive");
    }
    let mut inputs = Vec::new();
    let paths = std::slice::from_ref(&input.data);
    let mut ds = DomainDataset::new(
        input.data.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
        read_runs(paths, &mut inputs)?,
    );
    if ds.num_features() != model.num_features() {
        bail!(
            "checkpoint expects {} features, {} has {}",
            model.num_features(),
            input.data.display(),
            ds.num_features()
        );
    }
    let r_e = model.label_scale();
    if let Some(truth) = &input.truth {
        ds.label_from_truth(&read_truth(truth, &mut inputs)?, r_e)?;
    } else if input.run_to_failure {
        ds.label_run_to_failure(r_e)?;
    }
    let scaler: Option<Scaler> = match &input.reference {
        Some(reference) => {
            let mut refset = DomainDataset::new("reference", read_runs(std::slice::from_ref(reference), &mut inputs)?);
            let kind = input
                .normalization
                .or_else(|| model.scaler().map(|s| s.kind))
                .unwrap_or(NormKind::MinMax);
            refset.normalize(kind);
            refset.scaler
        }
        None => {
            if input.normalization.is_some() {
                bail!("--normalization needs --reference");
            }
            model.scaler().cloned()
        }
    };
    if let Some(s) = &scaler {
        ds.apply_scaler(s);
    }
    Ok(ds)
}

/// Prediction CSV with columns `unit,t,predicted_rul,true_rul`; `t` is the
/// cycle whose RUL is predicted and `true_rul` is empty without labels.
pub fn predict_csv(model: &SavedModel, input: &PredictInput) -> Result<String> {
    let ds = prepare(model, input)?;
    let set = window_set(&ds, model.window_len(), input.at)?;
    let pred = predict_windows(model, &set)?;
    let idx: Vec<usize> = (0..set.len()).collect();
    let truth = set.labels(&idx);
    let mut out = String::from("unit,t,predicted_rul,true_rul\n");
    for (i, p) in pred.iter().enumerate() {
        let (unit, cycle) = set.origin(i);
        write!(out, "{unit},{cycle},{p},").expect("writing to a String");
        if let Some(y) = &truth {
            write!(out, "{}", y[i]).expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub score: f64,
    pub predictions: usize,
    pub at: PredictAt,
}

pub fn evaluate_checkpoint(model: &SavedModel, input: &PredictInput) -> Result<EvalReport> {
    if input.truth.is_none() && !input.run_to_failure {
        bail!("evaluation needs --truth or --run-to-failure");
    }
    let ds = prepare(model, input)?;
    let set = window_set(&ds, model.window_len(), input.at)?;
    let pred = predict_windows(model, &set)?;
    let idx: Vec<usize> = (0..set.len()).collect();
    let truth = set.labels(&idx).context("dataset has no labels")?;
    let Metrics { rmse, score } = metrics(&pred, &truth)?;
    Ok(EvalReport {
        rmse,
        score,
        predictions: pred.len(),
        at: input.at,
    })
}

#[derive(Debug, Serialize)]
struct SynthManifest<'a> {
    config: &'a SynthConfig,
    r_e: f64,
    files: Vec<InputFile>,
    /// Relative covariance gap between the raw source and target features.
    covariance_gap: f64,
    /// Largest absolute difference between per-feature means.
    max_mean_gap: f64,
}

fn rul_csv(ds: &DomainDataset) -> String {
    let mut out = String::from("unit,cycle,rul\n");
    for run in &ds.runs {
        for (t, y) in run.rul.as_deref().unwrap_or_default().iter().enumerate() {
            writeln!(out, "{},{},{y}", run.unit_id, t + 1).expect("writing to a String");
        }
    }
    out
}

/// Writes `source.txt` and `target.txt` in the 26-column layout, the oracle
/// labels `source_rul.csv` and `target_rul.csv`, and `synth.json`.
pub fn synth(config: &SynthConfig, r_e: f64, out_dir: &Path) -> Result<PathBuf> {
    let (source, target) = gen_synthetic(&config.generator(r_e), config.seed)?;
    let xs = stack_features(&source);
    let xt = stack_features(&target);
    let max_mean_gap = xs
        .column_means()
        .iter()
        .zip(xt.column_means())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut files = Vec::new();
    for (name, contents) in [
        ("source.txt", write_cmapss(&source.runs)?),
        ("target.txt", write_cmapss(&target.runs)?),
        ("source_rul.csv", rul_csv(&source)),
        ("target_rul.csv", rul_csv(&target)),
    ] {
        let path = out_dir.join(name);
        write_atomic(&path, contents.as_bytes())?;
        files.push(InputFile {
            path: PathBuf::from(name),
            sha256: blob_hash(contents.as_bytes()),
        });
    }
    let manifest = out_dir.join("synth.json");
    write_json(
        &manifest,
        &SynthManifest {
            config,
            r_e,
            files,
            covariance_gap: covariance_gap(&xs, &xt)?,
            max_mean_gap,
        },
    )?;
    Ok(manifest)
}
