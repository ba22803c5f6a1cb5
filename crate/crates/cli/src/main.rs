use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rul_dann::data::NormKind;
use rul_dann::eval::PredictAt;
use rul_dann_cli::artifacts::write_atomic;
use rul_dann_cli::commands::{evaluate_checkpoint, load_checkpoint, predict_csv, synth, PredictInput};
use rul_dann_cli::config::{ExperimentConfig, ShiftPreset, SynthConfig};
use rul_dann_cli::experiment::{run, Job};

#[derive(Parser)]
#[command(name = "rul-dann", version, about = "Domain-adversarial LSTM models for remaining useful life")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the adversarial model on a source/target pair.
    TrainDann(TrainArgs),
    /// Train a source-only, target-only or CORAL reference model.
    TrainBaseline {
        #[command(flatten)]
        args: TrainArgs,
        /// source-only, target-only, coral-nn or coral-dnn
        #[arg(long)]
        mode: Option<String>,
    },
    /// Write per-window predictions of a checkpoint as CSV.
    Predict {
        #[command(flatten)]
        input: InputArgs,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on labelled data and print the metrics as JSON.
    Evaluate {
        #[command(flatten)]
        input: InputArgs,
        /// Also write the metrics to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic source/target pair with oracle labels.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Source run-to-failure file; repeat to concatenate.
    #[arg(long)]
    source: Vec<PathBuf>,
    #[arg(long)]
    target: Vec<PathBuf>,
    #[arg(long)]
    target_test: Option<PathBuf>,
    #[arg(long)]
    target_truth: Option<PathBuf>,
    #[arg(long)]
    normalization: Option<NormKind>,
    #[arg(long)]
    r_e: Option<f64>,
    #[arg(long)]
    t_w: Option<usize>,
    #[arg(long)]
    eval_at: Option<PredictAt>,
    /// Named hyperparameter preset (train-dann) or C-MAPSS subset (train-baseline).
    #[arg(long)]
    preset: Option<String>,
    /// Model setting override, e.g. `--set max_epochs=20`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// C-MAPSS-format data file.
    #[arg(long)]
    data: PathBuf,
    /// Ground-truth RUL file with one value per unit.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Treat `--data` as complete run-to-failure series.
    #[arg(long)]
    run_to_failure: bool,
    /// Fit input scaling on this file instead of using the checkpoint's scaler.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    normalization: Option<NormKind>,
    #[arg(long, default_value = "last-window")]
    at: PredictAt,
}

impl InputArgs {
    fn into_input(self) -> PredictInput {
        PredictInput {
            data: self.data,
            truth: self.truth,
            run_to_failure: self.run_to_failure,
            reference: self.reference,
            normalization: self.normalization,
            at: self.at,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file with the fields of a `[data.synthetic]` table.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    t_min: Option<usize>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    shift: Option<ShiftPreset>,
    #[arg(long, default_value_t = rul_dann::data::DEFAULT_R_E)]
    r_e: f64,
}

fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (key, value) = s.split_once('=').with_context(|| format!("override '{s}' is not KEY=VALUE"))?;
    let key = key.trim().to_string();
    // Parse the value as TOML, falling back to a bare string.
    let parsed: toml::Table = toml::from_str(&format!("v = {value}"))
        .unwrap_or_else(|_| toml::Table::from_iter([("v".to_string(), toml::Value::String(value.trim().into()))]));
    Ok((key, parsed["v"].clone()))
}

/// Config file (if any) with command-line flags layered on top.
fn experiment_config(args: &TrainArgs, section: &str, preset_key: &str) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    let d = &mut cfg.data;
    if !args.source.is_empty() {
        d.source = args.source.clone();
    }
    if !args.target.is_empty() {
        d.target = args.target.clone();
    }
    if args.target_test.is_some() {
        d.target_test = args.target_test.clone();
    }
    if args.target_truth.is_some() {
        d.target_truth = args.target_truth.clone();
    }
    if let Some(v) = args.normalization {
        d.normalization = v;
    }
    if let Some(v) = args.r_e {
        d.r_e = v;
    }
    if args.t_w.is_some() {
        d.t_w = args.t_w;
    }
    if args.eval_at.is_some() {
        d.eval_at = args.eval_at;
    }
    let table = match section {
        "dann" => cfg.dann.get_or_insert_with(Default::default),
        _ => cfg.baseline.get_or_insert_with(Default::default),
    };
    if let Some(p) = &args.preset {
        table.insert(preset_key.to_string(), toml::Value::String(p.clone()));
    }
    for o in &args.overrides {
        let (k, v) = parse_override(o)?;
        table.insert(k, v);
    }
    let out_dir = match (&args.out_dir, &cfg.out_dir) {
        (Some(dir), _) | (None, Some(dir)) => dir.clone(),
        (None, None) => bail!("no output directory: pass --out-dir or set out_dir in the config"),
    };
    cfg.out_dir = Some(out_dir.clone());
    cfg.validate()?;
    Ok((cfg, out_dir))
}

/// `baseline` is `None` for the adversarial model; otherwise it holds the
/// `--mode` flag, which may also come from the config's `[baseline]` table.
fn train(args: TrainArgs, baseline: Option<Option<String>>) -> Result<()> {
    let (job, cfg, out_dir) = match baseline {
        None => {
            let (cfg, out_dir) = experiment_config(&args, "dann", "preset")?;
            (Job::Dann(cfg.dann_hyper_params()?), cfg, out_dir)
        }
        Some(mode) => {
            let (mut cfg, out_dir) = experiment_config(&args, "baseline", "dataset")?;
            if let Some(mode) = mode {
                cfg.baseline
                    .get_or_insert_with(Default::default)
                    .insert("mode".into(), toml::Value::String(mode));
            }
            (Job::Baseline(cfg.baseline()?), cfg, out_dir)
        }
    };
    let outcome = run(&cfg, &job, &out_dir, !args.quiet)?;
    println!("{}", serde_json::to_string_pretty(&outcome.metrics)?);
    eprintln!("artifacts written to {}", outcome.out_dir.display());
    Ok(())
}

fn synth_command(args: SynthArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.units {
        config.n_units = v;
    }
    if let Some(v) = args.q {
        config.q = v;
    }
    if let Some(v) = args.t_min {
        config.t_range.0 = v;
    }
    if let Some(v) = args.t_max {
        config.t_range.1 = v;
    }
    if let Some(v) = args.shift {
        config.shift = v;
    }
    let manifest = synth(&config, args.r_e, &args.out_dir)?;
    eprintln!("synthetic domains written; manifest at {}", manifest.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainDann(args) => train(args, None),
        Command::TrainBaseline { args, mode } => train(args, Some(mode)),
        Command::Predict { input, out } => {
            let model = load_checkpoint(&input.checkpoint)?;
            let csv = predict_csv(&model, &input.into_input())?;
            match out {
                Some(path) => write_atomic(&path, csv.as_bytes()),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Evaluate { input, out } => {
            let model = load_checkpoint(&input.checkpoint)?;
            let report = evaluate_checkpoint(&model, &input.into_input())?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(path) = out {
                write_atomic(&path, format!("{text}\n").as_bytes())?;
            }
            Ok(())
        }
        Command::Synth(args) => synth_command(args),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
