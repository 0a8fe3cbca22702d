//! `aecl`: train, evaluate and inspect short-text clustering models over
//! precomputed embeddings.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aecl::checkpoint::{load_checkpoint, save_checkpoint};
use aecl::embeddings_io::{
    format_matrix, generate_synthetic, load_dataset, read_labels, read_matrix, write_labels,
    write_matrix, EmbeddingDataset,
};
use aecl::evaluation::{emit_report, evaluate_dataset, infer, ns_curve_csv, EvaluationReport};
use aecl::model::ModelDims;
use aecl::training::{train, TrainConfig};
use aecl::{AeclError, ErrorKind};
use clap::{Args, Parser, Subcommand};

use manifest::{sha256_hex, InputRecord, RunManifest};

#[derive(Parser)]
#[command(name = "aecl", version, about = "Attention-enhanced contrastive clustering of sentence embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, manifest, curves and report.
    Train(Box<TrainArgs>),
    /// Cluster a dataset with a saved checkpoint and write report.csv.
    Evaluate(EvalArgs),
    /// Per-batch attention diagnostics (NS/PS) for a saved checkpoint.
    Diagnose(EvalArgs),
    /// Write a synthetic Gaussian-blob dataset.
    SynthData(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// key=value configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "synthetic")]
    view0: Option<PathBuf>,
    /// Second-view embeddings; without it view0 is augmented.
    #[arg(long, conflicts_with = "augment")]
    view1: Option<PathBuf>,
    /// Use feature-space augmentation for the second view (the default
    /// when no --view1 is given).
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Generate blobs instead of reading files: CLUSTERSxPERxDIM.
    #[arg(long, value_name = "KxPxD")]
    synthetic: Option<String>,
    #[arg(long, default_value_t = 10.0, requires = "synthetic")]
    sep: f64,
    #[arg(long, default_value_t = 1.0, requires = "synthetic")]
    sigma: f64,
    /// Number of clusters.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    d2: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs_stage1: Option<usize>,
    #[arg(long)]
    epochs_stage2: Option<usize>,
    /// Total number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Balance preset for lambda4: balanced, slight or heavy.
    #[arg(long)]
    preset: Option<String>,
    /// intent (negative entropies) or paper (typeset sign).
    #[arg(long)]
    entropy_sign: Option<String>,
    /// threshold or argmax.
    #[arg(long)]
    pseudo_mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any configuration key, e.g. --set lambda4=0.18 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    view0: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 400)]
    batch_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    /// Samples per cluster.
    #[arg(long, default_value_t = 200)]
    per: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 10.0)]
    sep: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(*a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::SynthData(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Runtime => 1,
            })
        }
    }
}

fn config_err(msg: impl Into<String>) -> AeclError {
    AeclError::Config(msg.into())
}

fn parse_shape(spec: &str) -> Result<(usize, usize, usize), AeclError> {
    let parts: Vec<&str> = spec.split('x').collect();
    let bad = || config_err(format!("--synthetic expects CLUSTERSxPERxDIM, got `{spec}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let n = |s: &str| s.parse::<usize>().map_err(|_| bad());
    Ok((n(parts[0])?, n(parts[1])?, n(parts[2])?))
}

/// Dataset plus the manifest records of where it came from.
fn load_training_data(a: &TrainArgs, seed: u64) -> Result<(EmbeddingDataset, Vec<InputRecord>), AeclError> {
    if let Some(spec) = &a.synthetic {
        let (k, per, dim) = parse_shape(spec)?;
        let mut ds = generate_synthetic(k, per, dim, a.sep, a.sigma, seed)?;
        ds.view1 = None;
        let source = format!("synthetic:{spec}:sep={:?}:sigma={:?}:seed={seed}", a.sep, a.sigma);
        let records = vec![InputRecord {
            role: "view0",
            sha256: sha256_hex(format_matrix(&ds.view0).as_bytes()),
            source,
        }];
        return Ok((ds, records));
    }
    let view0 = a
        .view0
        .as_deref()
        .ok_or_else(|| config_err("either --view0 or --synthetic is required"))?;
    let mut records = Vec::new();
    for (role, path) in [("view0", Some(view0)), ("view1", a.view1.as_deref()), ("labels", a.labels.as_deref())] {
        if let Some(path) = path {
            records.push(InputRecord {
                role,
                source: path.display().to_string(),
                sha256: sha256_hex(&fs::read(path)?),
            });
        }
    }
    let ds = load_dataset(view0, a.view1.as_deref(), a.labels.as_deref())?;
    Ok((ds, records))
}

fn build_config(a: &TrainArgs, d1: usize, classes_hint: Option<usize>) -> Result<TrainConfig, AeclError> {
    // Placeholder m; resolved below from flags, file or labels.
    let mut config = TrainConfig::new(ModelDims { d1, d2: 128, m: 2 });
    let mut m_from_file = false;
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        config.apply_kv(&text)?;
        m_from_file = text
            .lines()
            .any(|l| l.split_once('=').is_some_and(|(k, _)| k.trim() == "m"));
    }
    let mut set = |key: &str, value: String| config.set(key, &value);
    if let Some(v) = a.d2 {
        set("d2", v.to_string())?;
    }
    if let Some(v) = a.batch_size {
        set("batch_size", v.to_string())?;
    }
    if let Some(v) = a.epochs_stage1 {
        set("epochs_stage1", v.to_string())?;
    }
    if let Some(v) = a.epochs_stage2 {
        set("epochs_stage2", v.to_string())?;
    }
    if let Some(v) = a.epochs {
        set("epochs_total", v.to_string())?;
    }
    if let Some(v) = &a.preset {
        set("preset", v.clone())?;
    }
    if let Some(v) = &a.entropy_sign {
        set("entropy_sign", v.clone())?;
    }
    if let Some(v) = &a.pseudo_mode {
        set("pseudo_mode", v.clone())?;
    }
    if let Some(v) = a.seed {
        set("seed", v.to_string())?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| config_err(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        set(k, v.to_string())?;
    }
    let overrides_m = a.overrides.iter().any(|kv| kv.split('=').next() == Some("m"));
    config.dims.m = match (a.m, overrides_m || m_from_file, classes_hint) {
        (Some(m), _, _) => m,
        (None, true, _) => config.dims.m,
        (None, false, Some(hint)) => hint,
        (None, false, None) => {
            return Err(config_err("number of clusters required (--m)"));
        }
    };
    if config.dims.d1 != d1 {
        return Err(config_err(format!(
            "configured d1={} but the embeddings have {d1} dimensions",
            config.dims.d1
        )));
    }
    config.validate()?;
    Ok(config)
}

/// The run seed as the configuration will resolve it, needed before the
/// data exists to generate synthetic inputs.
fn resolve_seed(a: &TrainArgs) -> Result<u64, AeclError> {
    let mut seed = 0;
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                if k.trim() == "seed" {
                    seed = v.trim().parse().map_err(|_| config_err(format!("bad seed `{v}`")))?;
                }
            }
        }
    }
    for kv in &a.overrides {
        if let Some(("seed", v)) = kv.split_once('=') {
            seed = v.trim().parse().map_err(|_| config_err(format!("bad seed `{v}`")))?;
        }
    }
    Ok(a.seed.unwrap_or(seed))
}

fn cmd_train(a: TrainArgs) -> Result<(), AeclError> {
    let seed = resolve_seed(&a)?;
    let (data, inputs) = load_training_data(&a, seed)?;
    let config = build_config(&a, data.dim(), data.num_classes_hint)?;
    if data.len() < config.batch_size {
        return Err(AeclError::DatasetTooSmall {
            samples: data.len(),
            batch_size: config.batch_size,
        });
    }

    fs::create_dir_all(&a.out)?;
    let paths = OutputPaths::new(&a.out);
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        inputs,
        config: config.to_kv(),
        outputs: vec![
            ("checkpoint", paths.checkpoint.clone()),
            ("curves", paths.curves.clone()),
            ("report", paths.report.clone()),
        ],
    };
    manifest.write_atomic(&paths.manifest)?;

    let (params, history) = train(&data, &config)?;
    save_checkpoint(&paths.checkpoint, &params)?;
    let report = evaluate_dataset(&params, &data.view0, data.labels.as_deref(), config.batch_size)?;
    emit_report(&report, &history, &a.out)?;
    print_summary(&report);
    Ok(())
}

struct OutputPaths {
    checkpoint: PathBuf,
    manifest: PathBuf,
    curves: PathBuf,
    report: PathBuf,
}

impl OutputPaths {
    fn new(dir: &Path) -> Self {
        Self {
            checkpoint: dir.join("model.ckpt"),
            manifest: dir.join("manifest.txt"),
            curves: dir.join("curves.csv"),
            report: dir.join("report.csv"),
        }
    }
}

fn print_summary(report: &EvaluationReport) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    println!(
        "samples={} m={} acc={} nmi={} ns={} sizes={:?}",
        report.n_samples,
        report.m,
        fmt(report.acc),
        fmt(report.nmi),
        fmt(report.ns),
        report.cluster_sizes
    );
}

/// Checkpoint, embeddings and optional labels, checked against each other.
fn load_for_inference(a: &EvalArgs) -> Result<(aecl::model::ParameterSet, EmbeddingDataset), AeclError> {
    let params = load_checkpoint(&a.checkpoint)?;
    let view0 = read_matrix(&a.view0)?;
    if view0.ncols() != params.dims.d1 {
        return Err(AeclError::Parse {
            context: a.view0.display().to_string(),
            message: format!(
                "embeddings have {} dimensions but the checkpoint expects {}",
                view0.ncols(),
                params.dims.d1
            ),
        });
    }
    let labels = a.labels.as_deref().map(read_labels).transpose()?;
    let ds = EmbeddingDataset::new(view0, None, labels, None)?;
    if a.batch_size == 0 {
        return Err(config_err("--batch-size must be positive"));
    }
    Ok((params, ds))
}

fn cmd_evaluate(a: EvalArgs) -> Result<(), AeclError> {
    let (params, ds) = load_for_inference(&a)?;
    let report = evaluate_dataset(&params, &ds.view0, ds.labels.as_deref(), a.batch_size)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("report.csv"), report.to_csv())?;
    print_summary(&report);
    Ok(())
}

fn cmd_diagnose(a: EvalArgs) -> Result<(), AeclError> {
    if a.labels.is_none() {
        return Err(config_err("diagnose needs ground-truth labels (--labels)"));
    }
    let (params, ds) = load_for_inference(&a)?;
    let inf = infer(&params, &ds.view0, ds.labels.as_deref(), a.batch_size)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("ns_curve.csv"), ns_curve_csv(&inf.batch_similarity))?;
    let mean = inf.batch_similarity.iter().map(|b| b.0).sum::<f64>() / inf.batch_similarity.len() as f64;
    println!("batches={} mean_ns={mean:.4} mean_ps={:.4}", inf.batch_similarity.len(), 1.0 - mean);
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), AeclError> {
    let ds = generate_synthetic(a.clusters, a.per, a.dim, a.sep, a.sigma, a.seed)?;
    fs::create_dir_all(&a.out)?;
    write_matrix(&a.out.join("view0.emb"), &ds.view0)?;
    write_labels(&a.out.join("labels.txt"), ds.labels.as_deref().unwrap_or_default())?;
    println!("wrote {} samples of dimension {} to {}", ds.len(), ds.dim(), a.out.display());
    Ok(())
}
