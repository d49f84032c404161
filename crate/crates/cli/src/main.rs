mod config;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use owleye::corpus::{self, AugmentRun, CorpusError};
use owleye::manifest::{read_manifest, to_jsonl, write_jsonl};
use owleye::nn::NnError;
use owleye::owlnet::{
    load_checkpoint, save_checkpoint, MetricsReport, NetworkConfig, OwlNetError, ScalePreset,
};
use owleye::synth;
use serde::Serialize;

use config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "owleye", version, about = "Detect and localize UI display issues in app screenshots")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON pipeline configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_preset)]
    preset: Option<ScalePreset>,
    /// Worker threads for per-file work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

fn parse_preset(s: &str) -> Result<ScalePreset, String> {
    s.parse().map_err(|e: OwlNetError| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus of screenshot/hierarchy pairs.
    Synth {
        #[arg(long, default_value_t = 10)]
        apps: usize,
        #[arg(long, default_value_t = 1)]
        screens: usize,
        #[arg(long, default_value_t = 0)]
        first_app: usize,
        #[arg(long, default_value_t = 128)]
        width: u32,
        #[arg(long, default_value_t = 192)]
        height: u32,
    },
    /// Inject display issues into every (png, json) pair of a directory.
    Augment {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        icons: Option<PathBuf>,
    },
    /// Remove near-duplicate rows from a manifest.
    Dedup {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train a detector on a manifest, selecting the epoch by validation F1.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score a checkpoint on a manifest, or print the metrics of given counts.
    Eval {
        #[arg(long, required_unless_present = "counts")]
        checkpoint: Option<PathBuf>,
        #[arg(long, required_unless_present = "counts")]
        manifest: Option<PathBuf>,
        /// tp,fp,fn,tn
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["checkpoint", "manifest"])]
        counts: Option<Vec<u64>>,
    },
    /// Classify every image in a directory.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Grad-CAM heatmaps and regions for every image in a directory.
    Localize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        alpha: Option<f32>,
        #[arg(long)]
        frac: Option<f32>,
    },
}

/// Marker for configuration and usage problems.
#[derive(Debug)]
struct ConfigProblem(String);

impl fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigProblem {}

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigProblem>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<OwlNetError>() {
            return match e {
                OwlNetError::Config(_) => EXIT_CONFIG,
                OwlNetError::NonFinite { .. } | OwlNetError::Nn(NnError::NonFinite { .. }) => EXIT_NUMERIC,
                _ => continue,
            };
        }
        if let Some(e) = cause.downcast_ref::<CorpusError>() {
            match e {
                CorpusError::Config(_) => return EXIT_CONFIG,
                CorpusError::Model(OwlNetError::Config(_)) => return EXIT_CONFIG,
                CorpusError::Model(OwlNetError::NonFinite { .. }) => return EXIT_NUMERIC,
                _ => continue,
            }
        }
        if let Some(NnError::NonFinite { .. }) = cause.downcast_ref::<NnError>() {
            return EXIT_NUMERIC;
        }
    }
    EXIT_DATA
}

fn config_err(e: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(ConfigProblem(e.to_string()))
}

fn emit_jsonl<T: Serialize>(rows: &[T]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(to_jsonl(rows).as_bytes())?;
    out.flush()?;
    Ok(())
}

fn resolved_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| config_err(format!("{e:#}")))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(p) = common.preset {
        cfg.preset = p;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn manifest_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolved_config(&cli.common)?;
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            return Err(config_err("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| config_err(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth {
            apps,
            screens,
            first_app,
            width,
            height,
        } => {
            if width == 0 || height == 0 {
                return Err(config_err("width and height must be positive"));
            }
            let ids = synth::write_corpus(&cfg.output_dir, first_app..first_app + apps, screens, cfg.seed, width, height)?;
            #[derive(Serialize)]
            struct Row<'a> {
                source_id: &'a str,
                image: String,
                hierarchy: String,
            }
            let rows: Vec<Row> = ids
                .iter()
                .map(|id| Row {
                    source_id: id,
                    image: cfg.output_dir.join(format!("{id}.png")).display().to_string(),
                    hierarchy: cfg.output_dir.join(format!("{id}.json")).display().to_string(),
                })
                .collect();
            emit_jsonl(&rows)?;
            eprintln!("wrote {} screens to {}", ids.len(), cfg.output_dir.display());
        }
        Command::Augment { input, icons } => {
            if input.is_some() {
                cfg.input_dir = input;
            }
            if icons.is_some() {
                cfg.icon_dir = icons;
            }
            cfg.validate().map_err(config_err)?;
            let input = cfg
                .input_dir
                .clone()
                .ok_or_else(|| config_err("augment needs --input or input_dir in the config"))?;
            let icons = match &cfg.icon_dir {
                Some(d) => corpus::load_icons(d)?,
                None => Vec::new(),
            };
            ensure_dir(&cfg.output_dir)?;
            let run = AugmentRun {
                mix: cfg.mix.clone(),
                seed: cfg.seed,
                augment: cfg.augment.clone(),
            };
            let report = corpus::augment_corpus(&input, &cfg.output_dir, &run, &icons)?;
            write_jsonl(cfg.output_dir.join("manifest.jsonl"), &report.rows)?;
            write_jsonl(cfg.output_dir.join("records.jsonl"), &report.records)?;
            emit_jsonl(&report.rows)?;
            if report.rows.is_empty() {
                log::warn!("no screenshots were augmented from {}", input.display());
            }
            for s in &report.skipped {
                eprintln!("skipped {}: {}", s.source, s.reason);
            }
            eprintln!(
                "{} buggy + {} clean rows written to {}",
                report.records.len(),
                report.rows.len() - report.records.len(),
                cfg.output_dir.join("manifest.jsonl").display()
            );
        }
        Command::Dedup { manifest, threshold } => {
            if let Some(t) = threshold {
                cfg.dedup_threshold = t;
            }
            cfg.validate().map_err(config_err)?;
            let rows = read_manifest(&manifest)?;
            let report =
                corpus::dedup_manifest(&rows, &manifest_base(&manifest), cfg.dedup_threshold, cfg.seed, &cfg.orb)?;
            ensure_dir(&cfg.output_dir)?;
            // Kept rows keep their paths valid by resolving against the source manifest.
            let base = manifest_base(&manifest);
            let kept: Vec<_> = report
                .kept
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.path = absolute(&corpus::resolve(&base, &r.path)).display().to_string();
                    r
                })
                .collect();
            write_jsonl(cfg.output_dir.join("manifest.dedup.jsonl"), &kept)?;
            emit_jsonl(&report.rows)?;
            for (label, k, d) in &report.balance {
                eprintln!("{label:?}: kept {k}, dropped {d}");
            }
        }
        Command::Train {
            train,
            val,
            epochs,
            batch_size,
            lr,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(l) = lr {
                cfg.train.lr = l;
            }
            cfg.validate().map_err(config_err)?;
            let net_cfg = NetworkConfig::for_preset(cfg.preset);
            let train_rows = read_manifest(&train)?;
            let val_rows = match &val {
                Some(v) => read_manifest(v)?,
                None => Vec::new(),
            };
            let val_base = val.as_deref().map(manifest_base).unwrap_or_default();
            let (model, history) = corpus::train_model(
                &train_rows,
                &manifest_base(&train),
                &val_rows,
                &val_base,
                &net_cfg,
                &cfg.train,
            )
            .map_err(|e| match e {
                CorpusError::Model(OwlNetError::AppOverlap(_)) => config_err(e),
                other => other.into(),
            })?;
            ensure_dir(&cfg.output_dir)?;
            let ckpt = cfg.output_dir.join("model.owl");
            save_checkpoint(&model, &ckpt)?;
            emit_jsonl(&history.epochs)?;
            eprintln!(
                "best epoch {} (validation F1 {:?}); checkpoint {}",
                history.best_epoch,
                history.best_val_f1,
                ckpt.display()
            );
        }
        Command::Eval {
            checkpoint,
            manifest,
            counts,
        } => {
            let report = match (counts, checkpoint, manifest) {
                (Some(c), _, _) => match c[..] {
                    [tp, fp, fn_, tn] => MetricsReport::from_counts(tp, fp, fn_, tn),
                    _ => return Err(config_err(format!("--counts needs tp,fp,fn,tn, got {} values", c.len()))),
                },
                (None, Some(ck), Some(m)) => {
                    let model = load_checkpoint(&ck)?;
                    let rows = read_manifest(&m)?;
                    corpus::evaluate_manifest(&model, &rows, &manifest_base(&m))?
                }
                _ => return Err(config_err("eval needs --checkpoint and --manifest, or --counts")),
            };
            emit_jsonl(std::slice::from_ref(&report))?;
            eprint!("{}", report.table());
        }
        Command::Detect { checkpoint, input } => {
            let model = load_checkpoint(&checkpoint)?;
            let rows = corpus::detect_dir(&model, &input)?;
            if rows.is_empty() {
                log::warn!("no images found in {}", input.display());
            }
            emit_jsonl(&rows)?;
            let buggy = rows.iter().filter(|r| r.label == owleye::manifest::Label::Buggy).count();
            eprintln!("{buggy} of {} screenshots flagged as buggy", rows.len());
        }
        Command::Localize {
            checkpoint,
            input,
            alpha,
            frac,
        } => {
            if let Some(a) = alpha {
                cfg.heatmap_alpha = a;
            }
            if let Some(f) = frac {
                cfg.region_frac = f;
            }
            cfg.validate().map_err(config_err)?;
            let model = load_checkpoint(&checkpoint)?;
            let rows = corpus::localize_dir(&model, &input, &cfg.output_dir, cfg.heatmap_alpha, cfg.region_frac)?;
            if rows.is_empty() {
                log::warn!("no images found in {}", input.display());
            }
            emit_jsonl(&rows)?;
            eprintln!("{} heatmaps written to {}", rows.len(), cfg.output_dir.display());
        }
    }
    Ok(())
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OWLEYE_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
