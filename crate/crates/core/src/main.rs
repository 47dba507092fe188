//! `endoscrub` command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use endoscrub::baselines::FeatureKind;
use endoscrub::config::ExperimentConfig;
use endoscrub::dataset::{
    extract_frames, load_manifest, parse_annotations, write_annotations, write_manifest, ClassLabel, Corpus,
    FrameDirVideo, FrameStore, ManifestEntry,
};
use endoscrub::error::{Error, ErrorClass, Result};
use endoscrub::eval::{aggregate_folds, fraction_label, table_csv, FoldReport, MetricsReport};
use endoscrub::experiment::{file_hash, Experiment, MethodKind, Predictor, RunRecord};
use endoscrub::model::{
    load_checkpoint, read_checkpoint_meta, save_checkpoint, save_meta_only, CheckpointMeta, Init, Phase,
};
use endoscrub::scrub::{
    apply_edit_list, classify_video, make_edit_list, oracle_predictions, segmentize, smooth, Smoothing,
};
use endoscrub::synth::generate_corpus;
use endoscrub::train::TrainResult;

#[derive(Parser, Debug)]
#[command(
    name = "endoscrub",
    version,
    about = "Out-of-body frame detection and scrubbing for endoscopic video"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArg {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic corpus.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract 1 fps frames and validate annotations.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the case-level fold splits.
    Folds {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Rotation pretraining on a fold's training frames.
    Pretrain {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        fold: u32,
    },
    /// Fine-tune a pretext checkpoint on a label fraction.
    Finetune {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        fold: u32,
        #[arg(long)]
        fraction: f64,
        /// Pretext checkpoint; defaults to the fold's pretrain run.
        #[arg(long = "from")]
        from: Option<PathBuf>,
    },
    /// Supervised training from random or external weights.
    TrainSupervised {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        fold: u32,
        #[arg(long)]
        fraction: f64,
        /// `random` or `weights:PATH`.
        #[arg(long, default_value = "random")]
        init: String,
    },
    /// Handcrafted-feature baseline with an MLP-2 head.
    TrainBaseline {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        fold: u32,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        feature: FeatureKind,
    },
    /// Metrics, timelines and error report of a checkpoint on one split.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        fold: u32,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Cross-fold table of every evaluated run under a directory.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Classify a video, cut its irrelevant seconds and write the edit list.
    Scrub {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        ckpt: PathBuf,
        /// Corpus video id, or a frame-directory video.
        #[arg(long)]
        video: String,
        #[arg(long)]
        margin: Option<i64>,
        /// Median smoothing window (odd).
        #[arg(long)]
        smooth: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a label-oracle checkpoint (no network).
    #[command(hide = true)]
    MakeOracle {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig> {
    match &arg.config {
        Some(p) => ExperimentConfig::load(p),
        None => {
            let mut cfg = ExperimentConfig::default();
            cfg.apply_env();
            Ok(cfg)
        }
    }
}

fn open(arg: &ConfigArg) -> Result<Experiment> {
    Experiment::open(load_config(arg)?)
}

fn save_run(dir: &Path, result: &TrainResult, record: &RunRecord) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&dir.join("checkpoint.bin"), &result.model, &result.meta)?;
    result.log.save(dir, "log")?;
    record.save(dir)?;
    println!("{}", dir.join("checkpoint.bin").display());
    Ok(())
}

fn check_fraction(f: f64) -> Result<f64> {
    if f > 0.0 && f <= 1.0 {
        Ok(f)
    } else {
        Err(Error::Fraction(f))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = load_config(&config)?;
            let c = generate_corpus(&cfg.synth, &out)?;
            let frames: u32 = c.entries.iter().map(|e| e.duration_s).sum();
            println!("{} videos, {} s -> {}", c.entries.len(), frames, out.display());
        }
        Command::Ingest {
            manifest,
            annotations,
            out,
        } => ingest(&manifest, &annotations, &out)?,
        Command::Folds { config } => {
            let ex = open(&config)?;
            for p in ex.save_folds()? {
                println!("{}", p.display());
            }
        }
        Command::Pretrain { config, fold } => {
            let ex = open(&config)?;
            let split = ex.fold(fold)?;
            let data = ex.load_fold_data(&split)?;
            let r = ex.pretrain(&data)?;
            let record = ex.run_record(MethodKind::Ssl, None, &split, r.meta.seed)?;
            save_run(&ex.run_dir(fold, "pretext"), &r, &record)?;
        }
        Command::Finetune {
            config,
            fold,
            fraction,
            from,
        } => {
            let fraction = check_fraction(fraction)?;
            let ex = open(&config)?;
            let split = ex.fold(fold)?;
            let from = from.unwrap_or_else(|| ex.run_dir(fold, "pretext").join("checkpoint.bin"));
            let (pretext, meta) = load_checkpoint(&from)?;
            if meta.phase != Phase::Pretext {
                return Err(Error::Config(format!("{} is not a pretext checkpoint", from.display())));
            }
            let data = ex.load_fold_data(&split)?;
            let r = ex.finetune(&data, &pretext, fraction)?;
            let mut record = ex.run_record(MethodKind::Ssl, Some(fraction), &split, r.meta.seed)?;
            record.inputs.insert("pretext".into(), file_hash(&from)?);
            save_run(&ex.method_dir(fold, MethodKind::Ssl, fraction), &r, &record)?;
        }
        Command::TrainSupervised {
            config,
            fold,
            fraction,
            init,
        } => {
            let fraction = check_fraction(fraction)?;
            let ex = open(&config)?;
            let split = ex.fold(fold)?;
            let (init, method) = match init.as_str() {
                "random" => (Init::Random, MethodKind::SupervisedRandom),
                other => match other.strip_prefix("weights:") {
                    Some(p) => (Init::External(PathBuf::from(p)), MethodKind::SupervisedWeights),
                    None => {
                        return Err(Error::Config(format!(
                            "--init must be random or weights:PATH, got `{other}`"
                        )))
                    }
                },
            };
            let data = ex.load_fold_data(&split)?;
            let r = ex.train_supervised(&data, &init, fraction)?;
            let mut record = ex.run_record(method, Some(fraction), &split, r.meta.seed)?;
            if let Init::External(p) = &init {
                record.inputs.insert("init".into(), file_hash(p)?);
            }
            save_run(&ex.method_dir(fold, method, fraction), &r, &record)?;
        }
        Command::TrainBaseline {
            config,
            fold,
            fraction,
            feature,
        } => {
            let fraction = check_fraction(fraction)?;
            let ex = open(&config)?;
            let split = ex.fold(fold)?;
            let r = ex.train_baseline(&split, feature, fraction)?;
            let method = MethodKind::Feature(feature);
            let record = ex.run_record(method, Some(fraction), &split, r.meta.seed)?;
            save_run(&ex.method_dir(fold, method, fraction), &r, &record)?;
        }
        Command::Evaluate {
            config,
            ckpt,
            fold,
            split,
        } => {
            let ex = open(&config)?;
            let fold_split = ex.fold(fold)?;
            let meta = read_checkpoint_meta(&ckpt)?;
            let predictor = match meta.phase {
                Phase::LabelOracle => Predictor::Oracle,
                Phase::Pretext => {
                    return Err(Error::Config(
                        "pretext checkpoints predict rotations, not frame classes".into(),
                    ))
                }
                _ => Predictor::Model(Box::new(load_checkpoint(&ckpt)?.0)),
            };
            if !meta.config_hash.is_empty() && meta.config_hash != ex.cfg.hash() {
                eprintln!("warning: checkpoint was trained under a different config");
            }
            let ev = ex.evaluate(&predictor, &fold_split, &split)?;
            let dir = ckpt.parent().unwrap_or(Path::new(".")).join(format!("eval_{split}"));
            ex.write_evaluation(&ev, &dir)?;
            println!("mF1 {:.2}  {}", ev.report.mf1, dir.join("metrics.json").display());
        }
        Command::Report { runs, split } => report(&runs, &split)?,
        Command::Scrub {
            config,
            ckpt,
            video,
            margin,
            smooth: window,
            out,
        } => {
            let cfg = load_config(&config)?;
            scrub(cfg, &ckpt, &video, margin, window, &out)?;
        }
        Command::MakeOracle { out } => {
            save_meta_only(&out, &CheckpointMeta::new(Phase::LabelOracle, 0, 0, None, ""))?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn ingest(manifest: &Path, annotations: &Path, out: &Path) -> Result<()> {
    let entries = load_manifest(manifest)?;
    let durations: BTreeMap<String, u32> = entries.iter().map(|e| (e.video_id.clone(), e.duration_s)).collect();
    let labels = parse_annotations(annotations, &durations)?;
    let store = FrameStore::new(out.join("frames"));
    let mut copied = Vec::with_capacity(entries.len());
    for e in &entries {
        let video = FrameDirVideo::open(&e.path)?;
        if video.duration_s() < e.duration_s {
            return Err(Error::MissingTimestamp {
                video_id: e.video_id.clone(),
                timestamp_s: video.duration_s(),
            });
        }
        let got = extract_frames(&video, 1, &store.video_dir(&e.video_id))?;
        println!("{}: {} frames", e.video_id, got.timestamps.len());
        copied.push(ManifestEntry {
            path: std::fs::canonicalize(&e.path).map_err(|err| Error::io(&e.path, err))?,
            ..e.clone()
        });
    }
    write_manifest(&out.join("manifest.json"), &copied)?;
    write_annotations(&out.join("annotations.csv"), &labels)?;
    // full validation against the store just written
    Corpus::load(&out.join("manifest.json"), &out.join("annotations.csv"), store.root())?;
    Ok(())
}

fn find_metrics(dir: &Path, split: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            if p.file_name().is_some_and(|n| n == format!("eval_{split}").as_str()) && p.join("metrics.json").is_file()
            {
                out.push(p.join("metrics.json"));
            } else {
                find_metrics(&p, split, out)?;
            }
        }
    }
    Ok(())
}

fn report(runs: &Path, split: &str) -> Result<()> {
    let mut files = Vec::new();
    find_metrics(runs, split, &mut files)?;
    let mut values: BTreeMap<(String, String), Vec<(u32, f64)>> = BTreeMap::new();
    let mut methods: Vec<String> = Vec::new();
    let mut fractions: Vec<(f64, String)> = Vec::new();
    for f in &files {
        let run_dir = f.parent().and_then(Path::parent).unwrap_or(Path::new("."));
        let Ok(record) = RunRecord::load(run_dir) else {
            continue;
        };
        let metrics = MetricsReport::load(f)?;
        let frac = record.fraction.unwrap_or(1.0);
        let col = fraction_label(frac);
        if !methods.contains(&record.method) {
            methods.push(record.method.clone());
        }
        if !fractions.iter().any(|(_, c)| *c == col) {
            fractions.push((frac, col.clone()));
        }
        values
            .entry((record.method, col))
            .or_default()
            .push((metrics.fold_id, metrics.mf1));
    }
    fractions.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cells: BTreeMap<(String, String), FoldReport> = BTreeMap::new();
    for (key, mut v) in values {
        v.sort_by_key(|x| x.0);
        let vals: Vec<f64> = v.iter().map(|x| x.1).collect();
        match aggregate_folds(&vals) {
            Ok(r) => {
                cells.insert(key, r);
            }
            Err(Error::TooFewFolds(n)) => eprintln!("skipping {} @ {}: {n} fold(s)", key.0, key.1),
            Err(e) => return Err(e),
        }
    }
    let columns: Vec<String> = fractions.into_iter().map(|f| f.1).collect();
    let csv = table_csv(&cells, &methods, &columns);
    let path = runs.join(format!("table_{split}.csv"));
    std::fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
    print!("{csv}");
    Ok(())
}

fn scrub(
    cfg: ExperimentConfig,
    ckpt: &Path,
    video: &str,
    margin: Option<i64>,
    window: Option<usize>,
    out: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let meta = read_checkpoint_meta(ckpt)?;
    let as_path = Path::new(video);
    let (video_id, source, store, segments) = if as_path.join("video.json").is_file() {
        let source = FrameDirVideo::open(as_path)?;
        let id = as_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "video".into());
        let store = FrameStore::new(out.join("frames"));
        extract_frames(&source, 1, &store.video_dir(&id))?;
        (id, source, store, None)
    } else {
        let c = &cfg.corpus;
        let corpus = Corpus::load(&c.manifest(), &c.annotations(), &c.frame_store())?;
        let entry = load_manifest(&c.manifest())?
            .into_iter()
            .find(|e| e.video_id == video)
            .ok_or_else(|| Error::UnknownVideo(video.to_string()))?;
        let source = FrameDirVideo::open(&entry.path)?;
        let segments = corpus.segments(video).to_vec();
        (video.to_string(), source, corpus.store.clone(), Some(segments))
    };
    let duration = source.duration_s();
    let preds = match meta.phase {
        Phase::LabelOracle => {
            let segs = segments.ok_or_else(|| Error::Config("the label oracle needs a corpus video id".into()))?;
            oracle_predictions(&segs)
        }
        Phase::Pretext => return Err(Error::Config("pretext checkpoints cannot scrub".into())),
        _ => {
            let (model, _) = load_checkpoint(ckpt)?;
            let mut pipeline = cfg.pipeline.clone();
            pipeline.crop_size = meta.crop_size;
            classify_video(&model, &store, &video_id, duration, &pipeline)?
        }
    };
    let window = window.or(match cfg.scrub.smoothing {
        Smoothing::Median(w) => Some(w),
        Smoothing::None => None,
    });
    let preds = match window {
        Some(w) => smooth(&preds, w)?,
        None => preds,
    };
    let segs = segmentize(&video_id, &preds)?;
    let mut edl = make_edit_list(&segs, margin.unwrap_or(cfg.scrub.margin_s as i64))?;
    edl.video_id = video_id.clone();
    edl.smoothing = window.map_or(Smoothing::None, Smoothing::Median);
    edl.model = meta.config_hash.clone();
    edl.save(&out.join("edit_list.json"))?;
    let pred_path = out.join("predictions.json");
    let text = serde_json::to_string_pretty(&preds).map_err(|e| Error::json(&pred_path, e))?;
    std::fs::write(&pred_path, text + "\n").map_err(|e| Error::io(&pred_path, e))?;
    let audit = apply_edit_list(&source, &edl, &out.join("video"), &out.join("audit.json"))?;
    let irr = preds.iter().filter(|p| p.label == ClassLabel::Irrelevant).count();
    println!(
        "{}: {} irrelevant s predicted, removed {} s, kept {} s",
        video_id,
        irr,
        edl.removed_seconds(),
        audit.output_duration_s
    );
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Runtime => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let report = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}
