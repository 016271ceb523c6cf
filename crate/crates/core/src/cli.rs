//! Command-line front end. Each subcommand is also callable as a library function.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{parse_config, RunConfig};
use crate::decoder::{count_parameters, initialize_weights, Decoder, DecoderConfig};
use crate::encoder::{EmbeddingCache, Encoder};
use crate::error::{Error, Result};
use crate::inference::{argmax_segmentation, sliding_window_predict};
use crate::metrics::{evaluate_volume, write_csv_summary, write_json_report, CaseReport, EvaluationReport};
use crate::toy::generate_toy_dataset;
use crate::trainer::{load_checkpoint, run_training, TrainOptions, TrainingOutcome};
use crate::volume::nifti::{read_nifti, read_nifti_labels, write_nifti_labels};
use crate::volume::{load_case, normalize_intensity, DatasetManifest, LabelVolume};

#[derive(Debug, Parser)]
#[command(name = "volseg", version, about = "Volumetric segmentation with a frozen slice encoder")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Run single-threaded.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the decoder on the manifest's training split.
    Train(TrainArgs),
    /// Segment one NIfTI image, or every manifest case when --input is omitted.
    Predict(PredictArgs),
    /// Score predictions against the manifest's labels.
    Evaluate(EvaluateArgs),
    /// Fill the embedding cache for every manifest case.
    ExtractEmbeddings(ExtractArgs),
    /// Print closed-form and allocated decoder parameter counts.
    CountParams(CountArgs),
    /// Write a synthetic dataset and its manifest.
    MakeToyDataset(ToyArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Resume from this checkpoint directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory holding `<case_id>_pred.nii` files.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub cache_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    /// Takes modality and class counts from the config's manifest.
    #[arg(long, conflicts_with_all = ["modalities", "classes"])]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub modalities: usize,
    #[arg(long, default_value_t = 9)]
    pub classes: usize,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub cases: usize,
    /// `D,H,W`
    #[arg(long, value_delimiter = ',', num_args = 1, default_values_t = [8, 64, 64])]
    pub shape: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// One-line JSON description of an error for stderr.
pub fn error_line(e: &Error) -> String {
    let kind = match e {
        Error::Io { .. } => "io",
        Error::Format { .. } => "format",
        Error::Unsupported { .. } => "unsupported",
        Error::Shape(_) => "shape",
        Error::Validation { .. } => "validation",
        Error::NonFinite(_) => "non_finite",
        Error::Checkpoint(_) => "checkpoint",
        Error::Json(_) => "json",
        Error::Coverage(_) => "coverage",
        Error::Other(_) => "other",
    };
    let mut v = json!({"error": kind, "message": e.to_string()});
    if let Error::Validation { path, .. } = e {
        v["path"] = json!(path);
    }
    v.to_string()
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = if cli.deterministic { 1 } else { cli.threads };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Other(format!("thread pool: {e}")))?
        .install(|| dispatch(cli.command))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => {
            let mut cfg = parse_config(&a.config)?;
            if let Some(o) = a.output {
                cfg.output_dir = o;
            }
            let out = train(&cfg, a.cache_dir, a.checkpoint)?;
            let last = out.log.last();
            println!(
                "{}",
                json!({
                    "iterations": out.log.len(),
                    "final_loss": last.map(|r| r.loss),
                    "checkpoint": out.last_checkpoint,
                })
            );
        }
        Command::Predict(a) => {
            let cfg = parse_config(&a.config)?;
            let written = predict(&cfg, &a.checkpoint, a.input.as_deref(), &a.output)?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Evaluate(a) => {
            let cfg = parse_config(&a.config)?;
            let report = evaluate(&cfg, &a.input, &a.output)?;
            println!("{}", json!({"cases": report.cases.len(), "mean_dsc": report.mean_dsc, "mean_hd95": report.mean_hd95}));
        }
        Command::ExtractEmbeddings(a) => {
            let cfg = parse_config(&a.config)?;
            let (cases, computed) = extract_embeddings(&cfg, &a.cache_dir)?;
            println!("{}", json!({"cases": cases, "computed": computed, "cache_dir": a.cache_dir}));
        }
        Command::CountParams(a) => {
            let dec = match a.config {
                Some(p) => {
                    let cfg = parse_config(p)?;
                    cfg.decoder_config(&cfg.load_manifest()?)
                }
                None => DecoderConfig::new(a.modalities, a.classes),
            };
            let (closed, allocated) = count_params(&dec)?;
            println!("closed_form {closed}");
            println!("allocated {allocated}");
            println!("match");
        }
        Command::MakeToyDataset(a) => {
            let shape: [usize; 3] = a
                .shape
                .as_slice()
                .try_into()
                .map_err(|_| Error::validation("--shape", format!("need D,H,W, got {:?}", a.shape)))?;
            let m = generate_toy_dataset(&a.output, a.cases, shape, a.classes, a.seed)?;
            println!("{}", a.output.join("manifest.json").display());
            log::info!("wrote {} cases", m.cases.len());
        }
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, cache_dir: Option<PathBuf>, resume: Option<PathBuf>) -> Result<TrainingOutcome> {
    let manifest = cfg.load_manifest()?;
    let dec = cfg.decoder_config(&manifest);
    let opts = TrainOptions {
        resume_from: resume,
        cache_dir,
        stop_after_epoch: None,
    };
    run_training(&manifest, &cfg.encoder, &dec, &cfg.train, &cfg.output_dir, &opts)
}

/// `(closed form, allocated)`; errors if they differ.
pub fn count_params(cfg: &DecoderConfig) -> Result<(usize, usize)> {
    cfg.validate()?;
    let closed = count_parameters(cfg).total;
    let allocated = initialize_weights::<f32>(cfg, 0).param_count();
    if closed != allocated {
        return Err(Error::Other(format!("closed-form count {closed} != allocated {allocated}")));
    }
    Ok((closed, allocated))
}

/// Loads a checkpoint and checks it was trained with this encoder and decoder layout.
pub fn load_model(cfg: &RunConfig, manifest: &DatasetManifest, checkpoint: &Path) -> Result<(Encoder, Decoder<f32>)> {
    let encoder = Encoder::new(&cfg.encoder)?;
    let (state, ck) = load_checkpoint(checkpoint)?;
    if ck.digests.encoder != encoder.digest() {
        return Err(Error::Checkpoint(format!(
            "{} was trained with a different encoder configuration",
            checkpoint.display()
        )));
    }
    if ck.decoder_config != cfg.decoder_config(manifest) {
        return Err(Error::Checkpoint(format!(
            "{} decoder {:?} does not match the configured {:?}",
            checkpoint.display(),
            ck.decoder_config,
            cfg.decoder_config(manifest)
        )));
    }
    Ok((encoder, state.decoder))
}

/// Writes `<output>/<case_id>_pred.nii` for every manifest case, or one file for `input`.
pub fn predict(cfg: &RunConfig, checkpoint: &Path, input: Option<&Path>, output: &Path) -> Result<Vec<PathBuf>> {
    let manifest = cfg.load_manifest()?;
    let (encoder, decoder) = load_model(cfg, &manifest, checkpoint)?;
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let window = cfg.window(&manifest);
    let jobs: Vec<(String, PathBuf)> = match input {
        Some(p) => {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("image");
            let stem = name.trim_end_matches(".gz").trim_end_matches(".nii");
            vec![(stem.to_string(), p.to_path_buf())]
        }
        None => manifest
            .cases
            .iter()
            .map(|c| (c.case_id.clone(), manifest.resolve(&c.image)))
            .collect(),
    };
    let mut written = Vec::new();
    for (id, path) in jobs {
        let tag = |e: Error| Error::Other(format!("case {id}: {e}"));
        let img = read_nifti(&path).map_err(tag)?;
        let vol = normalize_intensity(&img.volume, cfg.train.normalization).map_err(tag)?;
        let probs = sliding_window_predict(&vol, &encoder, &decoder, window, cfg.inference.overlap).map_err(tag)?;
        let seg = argmax_segmentation(&probs).map_err(tag)?;
        let out = output.join(format!("{id}_pred.nii"));
        write_nifti_labels(&out, &seg, img.volume.spacing, img.volume.origin, Some(&img.header))?;
        written.push(out);
    }
    Ok(written)
}

/// Scores `<pred_dir>/<case_id>_pred.nii` against every manifest case and writes
/// `report.json` and `summary.csv` under `output`.
pub fn evaluate(cfg: &RunConfig, pred_dir: &Path, output: &Path) -> Result<EvaluationReport> {
    let manifest = cfg.load_manifest()?;
    let n = manifest.num_classes;
    let mut cases = Vec::new();
    for c in &manifest.cases {
        let tag = |e: Error| Error::Other(format!("case {}: {e}", c.case_id));
        let (gt, header) = read_nifti_labels(manifest.resolve(&c.label), n).map_err(tag)?;
        let (pred, _): (LabelVolume, _) =
            read_nifti_labels(pred_dir.join(format!("{}_pred.nii", c.case_id)), n).map_err(tag)?;
        let spacing = cfg.metrics.spacing.unwrap_or(header.spacing());
        let mut m = evaluate_volume(&pred, &gt, spacing, n).map_err(tag)?;
        if !cfg.metrics.compute_hd95 {
            m.per_class.iter_mut().for_each(|k| k.hd95 = None);
            m.mean_hd95 = None;
        }
        cases.push(CaseReport {
            case_id: c.case_id.clone(),
            metrics: m,
        });
    }
    let report = EvaluationReport::new(n, cases);
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    write_json_report(&report, &output.join("report.json"))?;
    write_csv_summary(&report, &output.join("summary.csv"))?;
    Ok(report)
}

/// `(cases visited, embeddings computed)`; cached entries are reused.
pub fn extract_embeddings(cfg: &RunConfig, cache_dir: &Path) -> Result<(usize, usize)> {
    let manifest = cfg.load_manifest()?;
    let encoder = Encoder::new(&cfg.encoder)?;
    let cache = EmbeddingCache::new(cache_dir)?;
    for c in &manifest.cases {
        let case = load_case(&manifest, c, cfg.train.normalization)?;
        cache.get_or_compute(&case.case_id, &case.image, &encoder)?;
    }
    Ok((manifest.cases.len(), cache.encoder_calls()))
}
