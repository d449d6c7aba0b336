//! `nightadapt` command-line tool.
//!
//! Configuration is resolved in three layers: built-in defaults, then an
//! optional `--config` file, then flags. Set `RUST_LOG` for more output.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Axis;

use nightadapt::data::io::{load_rgb, save_rgb};
use nightadapt::data::synth::{synth_generate, SynthConfig};
use nightadapt::data::{class_proportions, load_paired_index, DatasetIndex};
use nightadapt::evaluation::{evaluate_dataset, predict_split, std_sweep, sweep_csv};
use nightadapt::reweight::{clamp_absent, normalize_weights, raw_class_weights};
use nightadapt::trainer::{predictor, pretrain_source, run_training, RunOptions, Start, TrainData, TrainState};
use nightadapt::{Config, LabelSet};

#[derive(Parser)]
#[command(name = "nightadapt", version, about = "Day-to-night domain adaptation for semantic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic day/night benchmark.
    Generate(GenerateArgs),
    /// Print class proportions and re-weighting factors of a labeled split.
    Weights(WeightsArgs),
    /// Train the segmentation network on labeled source data only.
    Pretrain(PretrainArgs),
    /// Run adaptation training.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled split.
    Eval(EvalArgs),
    /// Relight images with a trained checkpoint.
    Relight(RelightArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scenes per split.
    #[arg(long, default_value_t = 200)]
    scenes: usize,
    /// Image side length; must be divisible by 32.
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
struct LabelArgs {
    /// `cityscapes`, `synthetic` or a file with one class name per line.
    /// Defaults to `synthetic` for generated data and `cityscapes` otherwise.
    #[arg(long)]
    labels: Option<String>,
}

#[derive(Args)]
struct WeightsArgs {
    /// Split root with `images/` and `labels/`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `std_train`.
    #[arg(long)]
    std: Option<f64>,
    #[command(flatten)]
    labels: LabelArgs,
}

#[derive(Args)]
struct CommonTrain {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` config overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(flatten)]
    labels: LabelArgs,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: CommonTrain,
    #[arg(long)]
    source_dir: PathBuf,
    /// Checkpoint to write.
    #[arg(long, default_value = "pretrain.ckpt")]
    out: PathBuf,
    /// Overrides `pretrain_iters`.
    #[arg(long)]
    iters: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonTrain,
    #[arg(long)]
    source_dir: PathBuf,
    #[arg(long)]
    target_day_dir: PathBuf,
    #[arg(long)]
    target_night_dir: PathBuf,
    /// `night<TAB>day` file names, one pair per line.
    #[arg(long)]
    pairs_file: PathBuf,
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
    /// Continue from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Initialise segmentation from this pretraining checkpoint instead of pretraining now.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Labeled night split for periodic validation (see `val_every`).
    #[arg(long)]
    val_dir: Option<PathBuf>,
    /// Overrides `max_iters`.
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    no_relight: bool,
    #[arg(long)]
    no_light_loss: bool,
    #[arg(long, value_parser = ["windowed", "matched", "ce", "focal", "none"])]
    static_loss: Option<String>,
    /// Disables every use of the class re-weighting.
    #[arg(long)]
    no_reweight: bool,
    /// Starts segmentation from random initialisation.
    #[arg(long)]
    no_pretrain: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split root with `images/` and `labels/`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.16)]
    std: f64,
    /// Output directory for metrics.json, predictions and the sweep CSV.
    #[arg(long, default_value = "eval")]
    out: PathBuf,
    /// Comma-separated test-time stds; writes `sweep.csv`.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
}

#[derive(Args)]
struct RelightArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// An image file or a directory of PNG images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "relit")]
    out: PathBuf,
}

/// Error raised for bad invocations rather than runtime failures.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<Usage>().is_some()
                || matches!(e.downcast_ref::<nightadapt::Error>(), Some(nightadapt::Error::InvalidConfig { .. }));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Weights(a) => weights(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Relight(a) => relight(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let cfg = SynthConfig {
        size: a.size,
        n_scenes: a.scenes,
        ..SynthConfig::default()
    };
    synth_generate(&a.out, a.seed, &cfg).with_context(|| format!("generating into {}", a.out.display()))?;
    log::info!("wrote {} scenes per split to {}", a.scenes, a.out.display());
    Ok(())
}

/// Built-in defaults, then the config file, then flags, each override logged.
fn resolve_config(file: Option<&Path>, flags: &[(String, String)]) -> Result<Config> {
    let mut cfg = match file {
        Some(p) => {
            log::info!("config file {}", p.display());
            Config::from_file(p)?
        }
        None => Config::default(),
    };
    for (k, v) in flags {
        log::info!("flag override {k} = {v}");
        cfg.set(k, v)?;
    }
    Ok(cfg.validate()?)
}

fn common_flags(c: &CommonTrain) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(s) = c.seed {
        out.push(("seed".into(), s.to_string()));
    }
    Ok(out)
}

fn resolve_labels(flag: Option<&str>, data: &Path) -> Result<LabelSet> {
    match flag {
        Some("cityscapes") => Ok(LabelSet::cityscapes()),
        Some("synthetic") => Ok(LabelSet::synthetic()),
        Some(file) => {
            let text = fs::read_to_string(file).with_context(|| format!("reading label names from {file}"))?;
            let names: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            Ok(LabelSet::from_names(&names)?)
        }
        None => {
            let generated = data.ancestors().take(3).any(|d| d.join("synth.json").is_file());
            Ok(if generated { LabelSet::synthetic() } else { LabelSet::cityscapes() })
        }
    }
}

fn images_dir(p: &Path) -> PathBuf {
    let sub = p.join("images");
    if sub.is_dir() {
        sub
    } else {
        p.to_path_buf()
    }
}

fn weights(a: WeightsArgs) -> Result<()> {
    let mut flags = Vec::new();
    if let Some(s) = a.std {
        flags.push(("std_train".into(), s.to_string()));
    }
    let cfg = resolve_config(a.config.as_deref(), &flags)?;
    let labels = resolve_labels(a.labels.labels.as_deref(), &a.data)?;
    let index = DatasetIndex::load(&a.data, true)?;
    let maps = index.load_labels()?;
    let props = class_proportions(maps.iter().map(|m| m.view()), &labels)?;
    let clamped = clamp_absent(&props);
    let raw = raw_class_weights(&clamped)?;
    let w = normalize_weights(&raw, cfg.std_train, cfg.reweight_avg);
    let width = labels.names().iter().map(|n| n.len()).max().unwrap_or(5).max(5);
    println!("{:<width$}  {:>10}  {:>10}  {:>8}", "class", "a_k", "w'_k", "w_k");
    for (k, name) in labels.names().iter().enumerate() {
        println!("{name:<width$}  {:>10.6}  {:>10.4}  {:>8.4}", props[k], raw[k], w.w[k]);
    }
    Ok(())
}

fn load_source(dir: &Path) -> Result<nightadapt::data::InMemorySplit> {
    let index = DatasetIndex::load(dir, true).with_context(|| format!("source split {}", dir.display()))?;
    Ok(index.materialize()?)
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let mut flags = common_flags(&a.common)?;
    if let Some(n) = a.iters {
        flags.push(("pretrain_iters".into(), n.to_string()));
    }
    let cfg = resolve_config(a.common.config.as_deref(), &flags)?;
    let labels = resolve_labels(a.common.labels.labels.as_deref(), &a.source_dir)?;
    let source = load_source(&a.source_dir)?;
    let out = pretrain_source(cfg, labels, &source)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    out.state.save(&a.out)?;
    if let (Some(first), Some(last)) = (out.losses.first(), out.losses.last()) {
        log::info!("source loss {first:.4} -> {last:.4}");
    }
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut flags = common_flags(&a.common)?;
    if let Some(n) = a.iters {
        flags.push(("max_iters".into(), n.to_string()));
    }
    if a.no_relight {
        flags.push(("use_relight".into(), "false".into()));
    }
    if a.no_light_loss {
        flags.push(("use_light_loss".into(), "false".into()));
    }
    if let Some(s) = &a.static_loss {
        flags.push(("static_loss".into(), s.clone()));
    }
    if a.no_reweight {
        for k in ["reweight_ce", "reweight_pseudo", "reweight_prediction"] {
            flags.push((k.into(), "false".into()));
        }
    }
    if a.no_pretrain {
        flags.push(("pretrain".into(), "false".into()));
    }
    if a.resume.is_some() && a.pretrained.is_some() {
        return Err(Usage("--resume and --pretrained are mutually exclusive".into()).into());
    }
    let cfg = resolve_config(a.common.config.as_deref(), &flags)?;
    let labels = resolve_labels(a.common.labels.labels.as_deref(), &a.source_dir)?;
    let source = load_source(&a.source_dir)?;
    let pairs = load_paired_index(images_dir(&a.target_day_dir), images_dir(&a.target_night_dir), &a.pairs_file)?.materialize()?;
    let val = match &a.val_dir {
        Some(d) => Some(DatasetIndex::load(d, true)?.materialize()?),
        None => None,
    };
    fs::create_dir_all(&a.out_dir)?;
    fs::write(a.out_dir.join("config.txt"), cfg.to_text())?;
    let start = if let Some(p) = a.resume {
        Start::Resume(p)
    } else if !cfg.pretrain {
        Start::Scratch
    } else if let Some(p) = a.pretrained {
        Start::Pretrained(p)
    } else {
        log::info!("pretraining on source for {} iterations", cfg.pretrain_iters);
        let pre = pretrain_source(cfg.clone(), labels.clone(), &source)?;
        let path = a.out_dir.join("pretrain.ckpt");
        pre.state.save(&path)?;
        Start::Pretrained(path)
    };
    let data = TrainData { source, pairs, val };
    let opts = RunOptions {
        out_dir: a.out_dir.clone(),
        start,
        stop_at: None,
    };
    let out = run_training(cfg, labels, &data, &opts)?;
    log::info!("finished at iteration {}; outputs in {}", out.state.iteration, a.out_dir.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if !(a.std >= 0.0) || a.sweep.iter().any(|s| !(*s >= 0.0)) {
        return Err(Usage("test-time std must be >= 0".into()).into());
    }
    let state = TrainState::<f32>::load(&a.checkpoint)?;
    let split = DatasetIndex::load(&a.data, true)?.materialize()?;
    let f = predictor(&state);
    let props = clamp_absent(&state.proportions);
    let std = if state.cfg.reweight_prediction { a.std } else { 0.0 };
    let report = evaluate_dataset(&f, &split, &state.labels, &props, std, Some(&a.out))?;
    eprint!("{}", report.table());
    if !a.sweep.is_empty() {
        let probs = predict_split(&f, &split.images)?;
        let rows = std_sweep(&probs, split.labels.as_ref().expect("loaded with labels"), &state.labels, &props, &a.sweep)?;
        fs::write(a.out.join("sweep.csv"), sweep_csv(&rows))?;
    }
    log::info!("wrote {}", a.out.join("metrics.json").display());
    Ok(())
}

fn relight(a: RelightArgs) -> Result<()> {
    let state = TrainState::<f32>::load(&a.checkpoint)?;
    let inputs: Vec<PathBuf> = if a.input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(&a.input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        v.sort();
        v
    } else if a.input.is_file() {
        vec![a.input.clone()]
    } else {
        bail!("{} does not exist", a.input.display());
    };
    fs::create_dir_all(&a.out)?;
    for p in &inputs {
        let img = load_rgb(p)?;
        let (_, h, w) = img.dim();
        if h % 4 != 0 || w % 4 != 0 {
            bail!("{}: {h}×{w} is not a multiple of 4", p.display());
        }
        let r = state.relight.relight(img.insert_axis(Axis(0)))?.index_axis_move(Axis(0), 0);
        let name = p.file_name().expect("file path");
        save_rgb(a.out.join(name), r.view())?;
    }
    log::info!("relit {} images into {}", inputs.len(), a.out.display());
    Ok(())
}
