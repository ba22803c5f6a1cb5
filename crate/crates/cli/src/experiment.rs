//! Loading the domains of a config and running its trials.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rul_dann::baselines::{
    train_coral_nn_with_progress, train_single_domain_with_progress, BaselineMode, CoralDiagnostics,
};
use rul_dann::checkpoint::SavedModel;
use rul_dann::dann::{fit_with_progress, EpochRow, TrainReport};
use rul_dann::data::{gen_synthetic, parse_cmapss, parse_rul_truth, DomainDataset, EngineRun};
use rul_dann::eval::{evaluate, Metrics, PredictAt};

use crate::artifacts::{combined_hash, summarize, write_atomic, write_json, InputFile};
use crate::config::{BaselineSettings, ExperimentConfig};

/// Normalized datasets of one experiment.
#[derive(Debug, Clone)]
pub struct Domains {
    pub source: DomainDataset,
    /// Run-to-failure target data. Labels are present but only the
    /// target-only baseline reads them.
    pub target: DomainDataset,
    /// Labelled target data the trained models are scored on, scaled with
    /// the target's statistics.
    pub eval: DomainDataset,
    pub eval_at: PredictAt,
    pub inputs: Vec<InputFile>,
}

fn dataset_name(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
        .collect::<Vec<_>>()
        .join("+")
}

/// Reads and concatenates C-MAPSS files; unit ids of later files are shifted
/// past those of earlier ones.
pub fn read_runs(paths: &[PathBuf], inputs: &mut Vec<InputFile>) -> Result<Vec<EngineRun>> {
    let mut runs: Vec<EngineRun> = Vec::new();
    for path in paths {
        let (input, text) = InputFile::read(path)?;
        inputs.push(input);
        let offset = runs.iter().map(|r| r.unit_id).max().unwrap_or(0);
        let parsed = parse_cmapss(&text).with_context(|| format!("parsing {}", path.display()))?;
        if parsed.is_empty() {
            bail!("{} contains no engines", path.display());
        }
        runs.extend(parsed.into_iter().map(|mut r| {
            r.unit_id += offset;
            r
        }));
    }
    Ok(runs)
}

pub fn read_truth(path: &Path, inputs: &mut Vec<InputFile>) -> Result<Vec<u32>> {
    let (input, text) = InputFile::read(path)?;
    inputs.push(input);
    parse_rul_truth(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_domains(cfg: &ExperimentConfig) -> Result<Domains> {
    cfg.validate()?;
    let d = &cfg.data;
    if let Some(synth) = &d.synthetic {
        let (mut source, mut target) = gen_synthetic(&synth.generator(d.r_e), synth.seed)?;
        source.normalize(d.normalization);
        target.normalize(d.normalization);
        return Ok(Domains {
            eval: target.clone(),
            source,
            target,
            eval_at: d.eval_at.unwrap_or(PredictAt::AllWindows),
            inputs: Vec::new(),
        });
    }

    let mut inputs = Vec::new();
    let mut source = DomainDataset::new(dataset_name(&d.source), read_runs(&d.source, &mut inputs)?);
    let mut target = DomainDataset::new(dataset_name(&d.target), read_runs(&d.target, &mut inputs)?);
    if source.num_features() != target.num_features() {
        bail!(
            "source has {} features but target has {}",
            source.num_features(),
            target.num_features()
        );
    }
    source.label_run_to_failure(d.r_e)?;
    target.label_run_to_failure(d.r_e)?;
    source.normalize(d.normalization);
    target.normalize(d.normalization);
    let scaler = target.scaler.clone().expect("normalized above");

    let (eval, default_at) = match (&d.target_test, &d.target_truth) {
        (Some(test), Some(truth)) => {
            let name = dataset_name(std::slice::from_ref(test));
            let mut eval = DomainDataset::new(name, read_runs(std::slice::from_ref(test), &mut inputs)?);
            let truth = read_truth(truth, &mut inputs)?;
            eval.label_from_truth(&truth, d.r_e)?;
            eval.apply_scaler(&scaler);
            (eval, PredictAt::LastWindow)
        }
        _ => (target.clone(), PredictAt::AllWindows),
    };
    Ok(Domains {
        source,
        target,
        eval,
        eval_at: d.eval_at.unwrap_or(default_at),
        inputs,
    })
}

#[derive(Debug, Clone, Serialize)]
struct ModelRecord<'a> {
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<BaselineMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hyper_params: Option<&'a rul_dann::dann::DannHyperParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spec: Option<&'a rul_dann::baselines::BaselineSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coral: Option<&'a rul_dann::baselines::CoralNnConfig>,
}

/// What a run trains.
#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Dann(rul_dann::dann::DannHyperParams),
    Baseline(BaselineSettings),
}

impl Job {
    fn command(&self) -> &'static str {
        match self {
            Job::Dann(_) => "train-dann",
            Job::Baseline(_) => "train-baseline",
        }
    }

    fn record(&self) -> ModelRecord<'_> {
        let empty = ModelRecord {
            kind: "dann",
            mode: None,
            hyper_params: None,
            spec: None,
            coral: None,
        };
        match self {
            Job::Dann(hp) => ModelRecord {
                hyper_params: Some(hp),
                ..empty
            },
            Job::Baseline(BaselineSettings::Lstm { mode, spec }) => ModelRecord {
                kind: "baseline",
                mode: Some(*mode),
                spec: Some(spec),
                ..empty
            },
            Job::Baseline(BaselineSettings::Coral { mode, config }) => ModelRecord {
                kind: "coral",
                mode: Some(*mode),
                coral: Some(config),
                ..empty
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    trials: usize,
    seeds: Vec<u64>,
    config: &'a ExperimentConfig,
    model: ModelRecord<'a>,
    inputs: &'a [InputFile],
    input_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub seed: u64,
    pub rmse: f64,
    pub score: f64,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub stop_epoch: Option<usize>,
    pub wall_clock_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<CoralDiagnostics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsFile {
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub score_mean: f64,
    pub score_std: f64,
    pub trials: usize,
    pub eval_dataset: String,
    pub eval_at: PredictAt,
    pub per_trial: Vec<TrialResult>,
}

pub struct Outcome {
    pub metrics: MetricsFile,
    pub out_dir: PathBuf,
}

fn train_once(
    job: &Job,
    domains: &Domains,
    seed: u64,
    on_epoch: impl FnMut(&EpochRow),
) -> Result<(SavedModel, TrainReport, Option<CoralDiagnostics>)> {
    Ok(match job {
        Job::Dann(hp) => {
            let (m, r) = fit_with_progress(&domains.source, &domains.target, hp, seed, on_epoch)?;
            (m.into(), r, None)
        }
        Job::Baseline(BaselineSettings::Lstm { mode, spec }) => {
            let train = match mode {
                BaselineMode::TargetOnly => &domains.target,
                _ => &domains.source,
            };
            let (m, r) = train_single_domain_with_progress(train, spec, seed, on_epoch)?;
            (m.into(), r, None)
        }
        Job::Baseline(BaselineSettings::Coral { config, .. }) => {
            let (m, r, diag) =
                train_coral_nn_with_progress(&domains.source, &domains.target, config, seed, on_epoch)?;
            (m.into(), r, Some(diag))
        }
    })
}

fn progress_line(trial: usize, row: &EpochRow) -> String {
    let mut line = format!("trial {trial} epoch {:>3} loss {:.6}", row.epoch, row.src_reg_loss);
    if let (Some(l), Some(a)) = (row.dom_loss, row.dom_acc) {
        line.push_str(&format!(" dom_loss {l:.4} dom_acc {a:.3}"));
    }
    if let Some(v) = row.val_rmse {
        line.push_str(&format!(" val_rmse {v:.3}"));
    }
    line
}

/// Runs every trial and writes the manifest, per-trial checkpoints and
/// reports, and the aggregated metrics under `out_dir`.
pub fn run(cfg: &ExperimentConfig, job: &Job, out_dir: &Path, verbose: bool) -> Result<Outcome> {
    let domains = load_domains(cfg)?;
    let seeds: Vec<u64> = (0..cfg.trials as u64).map(|k| cfg.seed + k).collect();
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_json(
        &out_dir.join("manifest.json"),
        &Manifest {
            tool: "rul-dann",
            version: env!("CARGO_PKG_VERSION"),
            command: job.command(),
            seed: cfg.seed,
            trials: cfg.trials,
            seeds: seeds.clone(),
            config: cfg,
            model: job.record(),
            inputs: &domains.inputs,
            input_hash: combined_hash(&domains.inputs),
        },
    )?;

    let mut results = Vec::with_capacity(seeds.len());
    for (k, &seed) in seeds.iter().enumerate() {
        let (mut model, mut report, alignment) = train_once(job, &domains, seed, |row| {
            if verbose {
                eprintln!("{}", progress_line(k, row));
            }
        })?;
        model.set_scaler(domains.eval.scaler.clone());
        let Metrics { rmse, score } = evaluate(&model, &domains.eval, domains.eval_at)?;
        report.target_metrics = Some(Metrics { rmse, score });
        let dir = out_dir.join(format!("trial_{k}"));
        write_atomic(&dir.join("checkpoint.json"), model.to_json()?.as_bytes())?;
        write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes())?;
        if verbose {
            eprintln!("trial {k} (seed {seed}): rmse {rmse:.4} score {score:.4}");
        }
        results.push(TrialResult {
            seed,
            rmse,
            score,
            epochs: report.rows.len(),
            best_epoch: report.best_epoch,
            stop_epoch: report.stop_epoch,
            wall_clock_secs: report.wall_clock_secs,
            alignment,
        });
    }

    let rmse = summarize(&results.iter().map(|r| r.rmse).collect::<Vec<_>>());
    let score = summarize(&results.iter().map(|r| r.score).collect::<Vec<_>>());
    let metrics = MetricsFile {
        rmse_mean: rmse.mean,
        rmse_std: rmse.std,
        score_mean: score.mean,
        score_std: score.std,
        trials: results.len(),
        eval_dataset: domains.eval.name.to_string(),
        eval_at: domains.eval_at,
        per_trial: results,
    };
    write_json(&out_dir.join("metrics.json"), &metrics)?;
    Ok(Outcome {
        metrics,
        out_dir: out_dir.to_path_buf(),
    })
}
