//! Subcommand wiring: synthetic data generation, training, evaluation,
//! checkpoint averaging, quantization, prediction and ensembling.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use nlvc_core::bf16::{dequantize_checkpoint, quantize_checkpoint, QuantizeError};
use nlvc_core::checkpoint::{self, average_checkpoints, Checkpoint, CheckpointError};
use nlvc_core::ensemble::{ensemble_predict, EnsembleError, EnsembleModel};
use nlvc_core::metrics::{dense_predictions, evaluate, top_k, EvalResult, MetricsError};
use nlvc_core::model::{build_model, ModelConfig, ModelError, VideoModel};
use nlvc_core::rng::derive_seed;
use nlvc_core::train::{train, AdamParams, TrainConfig, TrainError};
use nlvc_core::SeededRng;

use crate::dataset::{DatasetError, DatasetFile};
use crate::synth::{gen_synthetic, SyntheticSpec};

#[derive(Debug)]
pub enum CliError {
    Io { path: PathBuf, source: io::Error },
    Dataset(DatasetError),
    Checkpoint(CheckpointError),
    Model(ModelError),
    Train(TrainError),
    Ensemble(EnsembleError),
    Metrics(MetricsError),
    Quantize(QuantizeError),
    Usage(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Self::Dataset(e) => write!(f, "{e}"),
            Self::Checkpoint(e) => write!(f, "{e}"),
            Self::Model(e) => write!(f, "{e}"),
            Self::Train(e) => write!(f, "{e}"),
            Self::Ensemble(e) => write!(f, "{e}"),
            Self::Metrics(e) => write!(f, "{e}"),
            Self::Quantize(e) => write!(f, "{e}"),
            Self::Usage(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! from_error {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::$variant(e)
            }
        }
    };
}

from_error!(Dataset, DatasetError);
from_error!(Checkpoint, CheckpointError);
from_error!(Model, ModelError);
from_error!(Train, TrainError);
from_error!(Ensemble, EnsembleError);
from_error!(Metrics, MetricsError);
from_error!(Quantize, QuantizeError);

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.into(),
                source,
            })?;
        }
    }
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

#[derive(Parser)]
#[command(
    name = "nlvc",
    version,
    about = "Multi-label video classification over pre-extracted frame features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    GenData(GenDataArgs),
    /// Train one model and write its checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a predictions file against a dataset.
    Eval(EvalArgs),
    /// Average several checkpoints element-wise.
    AvgCheckpoints(AvgArgs),
    /// Re-encode a checkpoint between f32 and bfloat16.
    Quantize(QuantizeArgs),
    /// Score a dataset with one model and write a predictions file.
    Predict(PredictArgs),
    /// Score a dataset with a multi-model ensemble.
    Ensemble(EnsembleArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    videos: usize,
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    frames_min: usize,
    #[arg(long, default_value_t = 40)]
    frames_max: usize,
    #[arg(long, default_value_t = 64)]
    visual_dim: usize,
    #[arg(long, default_value_t = 16)]
    audio_dim: usize,
    #[arg(long, default_value_t = 1)]
    clusters_per_class: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the line-oriented text variant instead of binary.
    #[arg(long)]
    text: bool,
    /// Split off this many trailing videos into a held-out file.
    #[arg(long)]
    holdout: Option<usize>,
    #[arg(long)]
    holdout_out: Option<PathBuf>,
}

/// Model sizing flags shared by train/eval/predict; unset values fall back
/// to the family defaults.
#[derive(Args, Clone)]
struct ModelFlags {
    #[arg(long)]
    model_family: Option<String>,
    /// Visual cluster count K.
    #[arg(long)]
    clusters: Option<usize>,
    /// Audio cluster count (default: half the visual count).
    #[arg(long)]
    audio_clusters: Option<usize>,
    /// Experts per class in the MoE head.
    #[arg(long)]
    experts: Option<usize>,
    /// Width of the dense projection feeding the head.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    gru_hidden: Option<usize>,
    #[arg(long)]
    gru_layers: Option<usize>,
}

impl ModelFlags {
    fn to_config(&self, data: &DatasetFile) -> Result<ModelConfig, CliError> {
        let family = self
            .model_family
            .as_deref()
            .ok_or_else(|| CliError::Usage("--model-family is required".into()))?
            .parse()
            .map_err(CliError::Usage)?;
        let mut cfg = ModelConfig::for_family(family, data.classes);
        cfg.visual_dim = data.visual_dim;
        cfg.audio_dim = data.audio_dim;
        if let Some(k) = self.clusters {
            cfg.visual_clusters = k;
            cfg.audio_clusters = (k / 2).max(1);
        }
        if let Some(k) = self.audio_clusters {
            cfg.audio_clusters = k;
        }
        if let Some(e) = self.experts {
            cfg.experts = e;
        }
        if let Some(f) = self.hidden {
            cfg.hidden = f;
        }
        if let Some(h) = self.gru_hidden {
            cfg.gru_hidden = h;
        }
        if let Some(l) = self.gru_layers {
            cfg.gru_layers = l;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory receiving checkpoint-<step>.nlvc files.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    /// Frames kept per video each time it is sampled (0 = all).
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit a checkpoint every this many steps (0 = only initial + final).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model checkpoint to score (requires the model flags).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    /// Previously written predictions file (alternative to --checkpoint).
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Frames kept per video when scoring (0 = all).
    #[arg(long, default_value_t = 0)]
    frames: usize,
    /// Repeated subsampling runs averaged per video.
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write a machine-readable JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AvgArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Widen bfloat16 back to f32 instead of narrowing.
    #[arg(long)]
    dequantize: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    /// Frames kept per video when scoring (0 = all).
    #[arg(long, default_value_t = 0)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Classes kept per video in the output file.
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long)]
    data: PathBuf,
    /// Member spec: comma-separated key=value pairs. Required keys:
    /// family=<name>, checkpoint=<path>. Optional: clusters, audio-clusters,
    /// experts, hidden, gru-hidden, gru-layers, weight.
    #[arg(long = "member", required = true)]
    members: Vec<String>,
    #[arg(long, default_value_t = 0)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Write per-video predictions here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Entry point behind `main`; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::AvgCheckpoints(args) => avg_cmd(args),
        Command::Quantize(args) => quantize_cmd(args),
        Command::Predict(args) => predict_cmd(args),
        Command::Ensemble(args) => ensemble_cmd(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        videos: args.videos,
        classes: args.classes,
        frames_min: args.frames_min,
        frames_max: args.frames_max,
        visual_dim: args.visual_dim,
        audio_dim: args.audio_dim,
        clusters_per_class: args.clusters_per_class,
        noise: args.noise,
        seed: args.seed,
    };
    let mut data = gen_synthetic(&spec)?;

    let save = |ds: &DatasetFile, path: &Path| -> Result<(), CliError> {
        let bytes = if args.text {
            ds.to_text().into_bytes()
        } else {
            ds.to_bytes()
        };
        write_file(path, &bytes)?;
        println!("wrote videos={} path={}", ds.videos.len(), path.display());
        Ok(())
    };

    if let Some(holdout) = args.holdout {
        let out = args.holdout_out.as_deref().ok_or_else(|| {
            CliError::Usage("--holdout requires --holdout-out".into())
        })?;
        if holdout >= data.videos.len() {
            return Err(CliError::Usage(
                "--holdout must leave at least one training video".into(),
            ));
        }
        let tail = data.videos.split_off(data.videos.len() - holdout);
        let held = DatasetFile {
            visual_dim: data.visual_dim,
            audio_dim: data.audio_dim,
            classes: data.classes,
            videos: tail,
        };
        save(&held, out)?;
    }
    save(&data, &args.out)
}

fn load_dataset(path: &Path) -> Result<DatasetFile, CliError> {
    Ok(DatasetFile::load(path)?)
}

fn load_checkpoint_file(path: &Path) -> Result<Checkpoint, CliError> {
    Ok(checkpoint::decode(&read_file(path)?)?)
}

fn build_from_flags(
    flags: &ModelFlags,
    data: &DatasetFile,
    ck_path: &Path,
) -> Result<VideoModel, CliError> {
    let cfg = flags.to_config(data)?;
    let mut model = build_model(&cfg, &mut SeededRng::new(0))?;
    let ck = load_checkpoint_file(ck_path)?;
    model.load_checkpoint(&ck)?;
    Ok(model)
}

fn train_cmd(args: TrainArgs) -> Result<(), CliError> {
    let data = load_dataset(&args.data)?;
    if data.videos.is_empty() {
        return Err(CliError::Usage("training dataset is empty".into()));
    }
    let cfg = args.model.to_config(&data)?;
    let mut model = build_model(&cfg, &mut SeededRng::new(derive_seed(args.seed, 0)))?;
    println!(
        "model_family={} parameters={}",
        cfg.family,
        model.parameter_count()
    );
    let outcome = train(
        &mut model,
        &data.videos,
        &TrainConfig {
            batch_size: args.batch,
            steps: args.steps,
            frames: args.frames,
            seed: derive_seed(args.seed, 1),
            checkpoint_every: args.checkpoint_every,
            adam: AdamParams::default(),
        },
    )?;
    let stride = (args.steps / 10).max(1);
    for (i, loss) in outcome.losses.iter().enumerate() {
        let step = i + 1;
        if step % stride == 0 || step == args.steps {
            println!("step={step} loss={loss:.6}");
        }
    }
    for ck in &outcome.checkpoints {
        let path = args.out.join(format!("checkpoint-{:06}.nlvc", ck.step));
        write_file(&path, &checkpoint::encode(ck))?;
        println!("wrote checkpoint step={} path={}", ck.step, path.display());
    }
    Ok(())
}

/// Score every video with repeated seeded subsampling; per-video streams
/// derive from the base seed and the video index.
fn score_dataset(
    ensemble: &EnsembleModel,
    data: &DatasetFile,
    runs: usize,
    frames: usize,
    seed: u64,
) -> Result<Vec<Vec<(usize, f32)>>, CliError> {
    let mut all = Vec::with_capacity(data.videos.len());
    for (i, video) in data.videos.iter().enumerate() {
        let probs = ensemble_predict(ensemble, video, runs, frames, derive_seed(seed, i as u64))?;
        all.push(dense_predictions(probs.data()));
    }
    Ok(all)
}

fn print_eval(result: &EvalResult, k: usize) {
    println!("videos={}", result.videos);
    println!("pooled_predictions={}", result.pooled_predictions);
    println!("total_positives={}", result.total_positives);
    println!("gap@{k}={:.6}", result.gap);
    println!("hit@1={:.6}", result.hit_at_one);
}

fn report_json(result: &EvalResult, k: usize) -> String {
    format!(
        "{{\"k\":{},\"videos\":{},\"pooled_predictions\":{},\"total_positives\":{},\"gap\":{},\"hit_at_one\":{}}}\n",
        k, result.videos, result.pooled_predictions, result.total_positives, result.gap,
        result.hit_at_one
    )
}

fn eval_cmd(args: EvalArgs) -> Result<(), CliError> {
    let data = load_dataset(&args.data)?;
    let predictions = match (&args.checkpoint, &args.predictions) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "choose one of --checkpoint or --predictions".into(),
            ))
        }
        (Some(ck), None) => {
            let model = build_from_flags(&args.model, &data, ck)?;
            let ensemble = EnsembleModel::new(vec![model])?;
            score_dataset(&ensemble, &data, args.runs, args.frames, args.seed)?
        }
        (None, Some(path)) => read_predictions(path, &data)?,
        (None, None) => {
            return Err(CliError::Usage(
                "need --checkpoint (plus model flags) or --predictions".into(),
            ))
        }
    };
    let result = evaluate(&predictions, &data.label_sets(), args.k)?;
    print_eval(&result, args.k);
    if let Some(path) = &args.report {
        write_file(path, report_json(&result, args.k).as_bytes())?;
        println!("wrote report path={}", path.display());
    }
    Ok(())
}

fn avg_cmd(args: AvgArgs) -> Result<(), CliError> {
    let mut checkpoints = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        checkpoints.push(load_checkpoint_file(path)?);
    }
    let avg = average_checkpoints(&checkpoints)?;
    write_file(&args.out, &checkpoint::encode(&avg))?;
    println!(
        "averaged checkpoints={} path={}",
        checkpoints.len(),
        args.out.display()
    );
    Ok(())
}

fn quantize_cmd(args: QuantizeArgs) -> Result<(), CliError> {
    let input = load_checkpoint_file(&args.input)?;
    let output = if args.dequantize {
        dequantize_checkpoint(&input)?
    } else {
        quantize_checkpoint(&input)?
    };
    write_file(&args.output, &checkpoint::encode(&output))?;
    println!(
        "payload_bytes_in={} payload_bytes_out={} path={}",
        input.payload_bytes(),
        output.payload_bytes(),
        args.output.display()
    );
    Ok(())
}

fn predict_cmd(args: PredictArgs) -> Result<(), CliError> {
    let data = load_dataset(&args.data)?;
    let model = build_from_flags(&args.model, &data, &args.checkpoint)?;
    let ensemble = EnsembleModel::new(vec![model])?;
    let predictions = score_dataset(&ensemble, &data, args.runs, args.frames, args.seed)?;
    write_predictions(&args.out, &data, &predictions, args.k)?;
    println!(
        "wrote predictions videos={} path={}",
        data.videos.len(),
        args.out.display()
    );
    Ok(())
}

fn ensemble_cmd(args: EnsembleArgs) -> Result<(), CliError> {
    let data = load_dataset(&args.data)?;
    let mut models = Vec::with_capacity(args.members.len());
    let mut weights = Vec::with_capacity(args.members.len());
    for spec in &args.members {
        let (model, weight) = parse_member(spec, &data)?;
        models.push(model);
        weights.push(weight);
    }
    let ensemble = EnsembleModel::with_weights(models, weights)?;
    let predictions = score_dataset(&ensemble, &data, args.runs, args.frames, args.seed)?;
    let result = evaluate(&predictions, &data.label_sets(), args.k)?;
    println!("members={} runs={}", args.members.len(), args.runs);
    print_eval(&result, args.k);
    if let Some(path) = &args.out {
        write_predictions(path, &data, &predictions, args.k)?;
        println!("wrote predictions path={}", path.display());
    }
    if let Some(path) = &args.report {
        write_file(path, report_json(&result, args.k).as_bytes())?;
        println!("wrote report path={}", path.display());
    }
    Ok(())
}

/// `--member` spec: `family=gru,checkpoint=out/avg.nlvc[,gru-hidden=32]...`
fn parse_member(spec: &str, data: &DatasetFile) -> Result<(VideoModel, f32), CliError> {
    let usage = |msg: String| CliError::Usage(format!("--member {spec:?}: {msg}"));
    let mut flags = ModelFlags {
        model_family: None,
        clusters: None,
        audio_clusters: None,
        experts: None,
        hidden: None,
        gru_hidden: None,
        gru_layers: None,
    };
    let mut ck_path: Option<PathBuf> = None;
    let mut weight = 1.0f32;
    for pair in spec.split(',') {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("expected key=value, got {pair:?}")))?;
        let parse_usize =
            |v: &str| v.parse::<usize>().map_err(|_| usage(format!("bad number {v:?}")));
        match key {
            "family" => flags.model_family = Some(value.to_string()),
            "checkpoint" => ck_path = Some(PathBuf::from(value)),
            "clusters" => flags.clusters = Some(parse_usize(value)?),
            "audio-clusters" => flags.audio_clusters = Some(parse_usize(value)?),
            "experts" => flags.experts = Some(parse_usize(value)?),
            "hidden" => flags.hidden = Some(parse_usize(value)?),
            "gru-hidden" => flags.gru_hidden = Some(parse_usize(value)?),
            "gru-layers" => flags.gru_layers = Some(parse_usize(value)?),
            "weight" => {
                weight = value
                    .parse()
                    .map_err(|_| usage(format!("bad weight {value:?}")))?
            }
            other => return Err(usage(format!("unknown key {other:?}"))),
        }
    }
    let ck_path = ck_path.ok_or_else(|| usage("missing checkpoint=<path>".into()))?;
    let model = build_from_flags(&flags, data, &ck_path)?;
    Ok((model, weight))
}

/// Predictions file: one line per video, `<id> <class>:<confidence> ...`,
/// `#`-prefixed comment lines ignored.
fn write_predictions(
    path: &Path,
    data: &DatasetFile,
    predictions: &[Vec<(usize, f32)>],
    k: usize,
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&format!("# predictions k={k}\n"));
    for (video, preds) in data.videos.iter().zip(predictions) {
        out.push_str(&video.id);
        for (class, confidence) in top_k(preds, k) {
            out.push_str(&format!(" {class}:{confidence}"));
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

fn read_predictions(
    path: &Path,
    data: &DatasetFile,
) -> Result<Vec<Vec<(usize, f32)>>, CliError> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| {
        CliError::Usage(format!("{}: predictions file is not UTF-8", path.display()))
    })?;
    let index: BTreeMap<&str, usize> = data
        .videos
        .iter()
        .enumerate()
        .map(|(i, v)| (v.id.as_str(), i))
        .collect();
    let mut predictions: Vec<Vec<(usize, f32)>> = vec![Vec::new(); data.videos.len()];
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| {
            CliError::Usage(format!(
                "{}:{}: {msg}",
                path.display(),
                lineno + 1
            ))
        };
        let mut tokens = line.split_whitespace();
        let id = tokens.next().expect("non-empty line");
        let &video = index
            .get(id)
            .ok_or_else(|| bad(format!("unknown video id {id:?}")))?;
        for tok in tokens {
            let (class, conf) = tok
                .split_once(':')
                .ok_or_else(|| bad(format!("expected class:confidence, got {tok:?}")))?;
            let class: usize = class
                .parse()
                .map_err(|_| bad(format!("bad class id {class:?}")))?;
            let conf: f32 = conf
                .parse()
                .map_err(|_| bad(format!("bad confidence {conf:?}")))?;
            predictions[video].push((class, conf));
        }
    }
    Ok(predictions)
}
