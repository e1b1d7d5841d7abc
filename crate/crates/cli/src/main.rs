//! `occlugait` — command-line pipeline for occlusion-aware gait
//! recognition experiments: dataset generation, detector and backbone
//! training, and gallery/probe evaluation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use occlugait_core::awareness::{make_injector_with_conv_out, Variant};
use occlugait_core::backbone::{BackboneConfig, ReferenceBackbone};
use occlugait_core::data_model::load_dataset;
use occlugait_core::detector::{
    build_detector_samples, train_detector, DetectorConfig, DetectorNetwork, DetectorTrainConfig,
};
use occlugait_core::evaluation::{
    cross_occlusion_eval, read_protocol_csv, run_protocol, sliced_eval, write_protocol_csv,
    EvalError, EvalProtocol, EvalReport,
};
use occlugait_core::training::{train_occluded, TrainConfig, TrainError};
use occlugait_core::walker::{build_dataset, WalkerRegime};

const EXIT_CONFIG: u8 = 2;
const EXIT_CONTRACT: u8 = 3;
const EXIT_DATA: u8 = 4;

#[derive(Debug)]
enum CliError {
    /// Bad flags, malformed config files, clobbering without --overwrite.
    Config(String),
    /// Frozen-detector training contract violations.
    Contract(String),
    /// Missing datasets, videos, or checkpoints.
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Contract(_) => EXIT_CONTRACT,
            CliError::Data(_) => EXIT_DATA,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Contract(m) | CliError::Data(m) => m,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::FrozenContractViolation { .. } | TrainError::DetectorNotFrozen => {
                CliError::Contract(e.to_string())
            }
            TrainError::EmptyDataset(_) => CliError::Data(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::MissingVideo(_) => CliError::Data(e.to_string()),
            EvalError::Train(t) => CliError::from(t),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "occlugait",
    about = "Occlusion-aware gait recognition pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic walker silhouette dataset.
    GenData(GenDataArgs),
    /// Train the occlusion-type detector CNN.
    TrainDetector(TrainDetectorArgs),
    /// Train a gait backbone, optionally with an awareness injector.
    TrainBackbone(TrainBackboneArgs),
    /// Run gallery/probe rank-K evaluation.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output dataset root (parent must exist).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    subjects: usize,
    #[arg(long, default_value_t = 3)]
    seqs: usize,
    #[arg(long, default_value_t = 120)]
    frames: usize,
    /// Walker parameter regime: a or b (two synthetic domains).
    #[arg(long, default_value = "a")]
    regime: String,
    /// Per-frame boundary jitter amplitude.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct TrainDetectorArgs {
    /// Dataset root produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with DetectorTrainConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Occlusion classes to train on, e.g. "0-8" or "0,1,5".
    #[arg(long, default_value = "0-8")]
    classes: String,
    /// Conv channel widths, e.g. "32,64,128".
    #[arg(long, default_value = "32,64,128")]
    channels: String,
    #[arg(long, default_value_t = 64)]
    feature_dim: usize,
    #[arg(long)]
    overwrite: bool,
    /// 0 = strict deterministic single-worker mode.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct TrainBackboneArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Awareness variant: none, guided-add, learnable-3dconv,
    /// deferred-concat, complex-deferred-concat, conv-plus-deferred.
    #[arg(long, default_value = "none")]
    variant: String,
    /// Detector checkpoint; required (and loaded frozen) when variant != none.
    #[arg(long)]
    detector: Option<PathBuf>,
    /// JSON file with TrainConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Occlusion classes sampled per training clip, e.g. "0" or "0-8".
    #[arg(long)]
    occlusion_classes: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_subjects: Option<usize>,
    #[arg(long)]
    clips_per_subject: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Backbone conv channels "c1,c2,c3".
    #[arg(long, default_value = "32,64,128")]
    channels: String,
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    /// Wide-channel ablation: output width of the learnable-3dconv injector.
    #[arg(long)]
    injector_conv_out: Option<usize>,
    #[arg(long)]
    overwrite: bool,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Backbone checkpoint to evaluate.
    #[arg(long)]
    model: PathBuf,
    /// Detector checkpoint (required for awareness-injected models).
    #[arg(long)]
    detector: Option<PathBuf>,
    /// Output directory for report + manifests.
    #[arg(long)]
    out: PathBuf,
    /// Optional protocol CSV (role,video_id,subject_id,condition,start,end);
    /// default: first sequence of each subject enrolls the gallery.
    #[arg(long)]
    protocol: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Rank cutoffs, e.g. "1,5,10,20".
    #[arg(long, default_value = "1,5,10,20")]
    ranks: String,
    /// standard | sliced | cross | dynamic
    #[arg(long, default_value = "standard")]
    mode: String,
    /// Occlusion classes for gallery and probes in standard mode.
    #[arg(long, default_value = "0-8")]
    classes: String,
    /// Leave the gallery unoccluded.
    #[arg(long)]
    probe_only: bool,
    /// Mean per-part distance instead of flattened Euclidean.
    #[arg(long)]
    part_averaged: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replay occlusions from a previously written manifest directory.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::TrainDetector(args) => cmd_train_detector(args),
        Command::TrainBackbone(args) => cmd_train_backbone(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// Parse "0-8", "1,2,3", or a mix like "0,5-6" into a class set.
fn parse_classes(s: &str) -> Result<BTreeSet<u8>, CliError> {
    let mut out = BTreeSet::new();
    for part in s.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let a: u8 = a.trim().parse().map_err(|_| bad_classes(s))?;
            let b: u8 = b.trim().parse().map_err(|_| bad_classes(s))?;
            if a > b || b > 8 {
                return Err(bad_classes(s));
            }
            out.extend(a..=b);
        } else {
            let v: u8 = part.parse().map_err(|_| bad_classes(s))?;
            if v > 8 {
                return Err(bad_classes(s));
            }
            out.insert(v);
        }
    }
    if out.is_empty() {
        return Err(bad_classes(s));
    }
    Ok(out)
}

fn bad_classes(s: &str) -> CliError {
    CliError::Config(format!(
        "invalid occlusion class list {s:?} (expected values in 0..=8, e.g. \"0-8\" or \"1,2,5\")"
    ))
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("invalid {what} list {s:?}")))
        })
        .collect()
}

/// Refuse to clobber an existing artifact unless --overwrite is set.
fn check_clobber(path: &Path, overwrite: bool) -> Result<(), CliError> {
    if path.exists() && !overwrite {
        return Err(CliError::Config(format!(
            "{} already exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    Ok(())
}

fn write_resolved_config(dir_or_file: &Path, config: &serde_json::Value) -> Result<(), CliError> {
    let path = if dir_or_file.is_dir() {
        dir_or_file.join("resolved_config.json")
    } else {
        let mut os = dir_or_file.as_os_str().to_os_string();
        os.push(".config.json");
        PathBuf::from(os)
    };
    std::fs::write(path, serde_json::to_string_pretty(config).unwrap())?;
    Ok(())
}

fn load_videos(root: &Path) -> Result<Vec<occlugait_core::data_model::SilhouetteVideo>, CliError> {
    if !root.is_dir() {
        return Err(CliError::Data(format!(
            "dataset root {} does not exist",
            root.display()
        )));
    }
    load_dataset(root).map_err(|e| CliError::Data(e.to_string()))
}

fn load_json_config(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid JSON in {}: {e}", path.display())))
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let regime = match args.regime.as_str() {
        "a" | "A" => WalkerRegime::A,
        "b" | "B" => WalkerRegime::B,
        other => return Err(CliError::Config(format!("unknown regime {other:?}"))),
    };
    match args.out.parent() {
        Some(parent) if parent.as_os_str().is_empty() || parent.is_dir() => {}
        _ => {
            return Err(CliError::Config(format!(
                "parent of output dir {} does not exist",
                args.out.display()
            )))
        }
    }
    if args.out.exists() {
        if !args.overwrite {
            return Err(CliError::Config(format!(
                "{} already exists; pass --overwrite to regenerate",
                args.out.display()
            )));
        }
        std::fs::remove_dir_all(&args.out)?;
    }
    let meta = build_dataset(
        &args.out,
        regime,
        args.subjects,
        args.seqs,
        args.frames,
        args.noise,
        args.seed,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    write_resolved_config(&args.out, &serde_json::to_value(&meta).unwrap())?;
    println!(
        "wrote {} subjects x {} sequences x {} frames to {}",
        meta.num_subjects,
        meta.seqs_per_subject,
        meta.frames_per_seq,
        args.out.display()
    );
    Ok(())
}

fn cmd_train_detector(args: TrainDetectorArgs) -> Result<(), CliError> {
    check_clobber(&args.out, args.overwrite)?;
    let mut train_cfg = DetectorTrainConfig::default();
    if let Some(path) = &args.config {
        train_cfg = serde_json::from_value(load_json_config(path)?)
            .map_err(|e| CliError::Config(format!("bad detector config: {e}")))?;
    }
    if let Some(v) = args.epochs {
        train_cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        train_cfg.lr = v;
    }
    if let Some(v) = args.seed {
        train_cfg.rng_seed = v;
    }
    let classes = parse_classes(&args.classes)?;
    let channels = parse_usize_list(&args.channels, "channel")?;
    let det_cfg = DetectorConfig {
        input_size: 64,
        conv_channels: channels,
        feature_dim: args.feature_dim,
        num_classes: 9,
    };

    let videos = load_videos(&args.data)?;
    let samples = build_detector_samples(&videos, &classes, train_cfg.rng_seed)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut det = DetectorNetwork::<f32>::new(det_cfg.clone(), train_cfg.rng_seed);
    let log = train_detector(&mut det, &samples, &train_cfg)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let metrics = serde_json::to_value(&log).unwrap();
    det.save(&args.out, &metrics)
        .map_err(|e| CliError::Config(e.to_string()))?;
    write_resolved_config(
        &args.out,
        &serde_json::json!({
            "command": "train-detector",
            "data": args.data,
            "detector_config": det_cfg,
            "train_config": train_cfg,
            "occlusion_classes": classes,
            "workers": args.workers,
        }),
    )?;
    println!(
        "detector saved to {} (best val acc {:.4})",
        args.out.display(),
        log.best_val_acc
    );
    Ok(())
}

fn parse_variant(s: &str) -> Result<Option<Variant>, CliError> {
    if s == "none" {
        return Ok(None);
    }
    Variant::from_str(s).map(Some).ok_or_else(|| {
        CliError::Config(format!(
            "unknown variant {s:?} (expected none, guided-add, learnable-3dconv, \
             deferred-concat, complex-deferred-concat, conv-plus-deferred)"
        ))
    })
}

fn load_frozen_detector(path: &Path) -> Result<DetectorNetwork<f32>, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!(
            "detector checkpoint {} does not exist",
            path.display()
        )));
    }
    let mut det =
        DetectorNetwork::<f32>::load(path).map_err(|e| CliError::Data(e.to_string()))?;
    det.freeze();
    Ok(det)
}

fn cmd_train_backbone(args: TrainBackboneArgs) -> Result<(), CliError> {
    check_clobber(&args.out, args.overwrite)?;
    let variant = parse_variant(&args.variant)?;
    let mut train_cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        train_cfg = serde_json::from_value(load_json_config(path)?)
            .map_err(|e| CliError::Config(format!("bad training config: {e}")))?;
    }
    if let Some(v) = &args.occlusion_classes {
        train_cfg.occlusion_classes = parse_classes(v)?;
    }
    if let Some(v) = args.steps {
        train_cfg.max_steps = v;
    }
    if let Some(v) = args.lr {
        train_cfg.learning_rate = v;
    }
    if let Some(v) = args.seed {
        train_cfg.rng_seed = v;
    }
    if let Some(v) = args.batch_subjects {
        train_cfg.batch_subjects = v;
    }
    if let Some(v) = args.clips_per_subject {
        train_cfg.clips_per_subject = v;
    }
    if let Some(v) = args.eval_every {
        train_cfg.eval_every = v;
    }
    let channels = parse_usize_list(&args.channels, "channel")?;
    if channels.len() != 3 {
        return Err(CliError::Config(
            "backbone --channels expects exactly three values, e.g. 32,64,128".into(),
        ));
    }
    let bb_cfg = BackboneConfig {
        channels: (channels[0], channels[1], channels[2]),
        conv3_in: args.injector_conv_out,
        embed_dim: args.embed_dim,
        ..BackboneConfig::default()
    };

    let mut model = ReferenceBackbone::<f32>::new(bb_cfg.clone(), train_cfg.rng_seed);
    let detector = match variant {
        Some(v) => {
            let det_path = args.detector.as_ref().ok_or_else(|| {
                CliError::Config(format!(
                    "--variant {} requires --detector <checkpoint>",
                    v.as_str()
                ))
            })?;
            let det = load_frozen_detector(det_path)?;
            let injector = make_injector_with_conv_out(
                v,
                &model.hooks(),
                args.injector_conv_out,
                occlugait_core::seed::mix(train_cfg.rng_seed, 0x1213),
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            model
                .set_injector(injector)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Some(det)
        }
        None => None,
    };

    let videos = load_videos(&args.data)?;
    let log = train_occluded(&mut model, detector.as_ref(), &videos, &train_cfg)?;

    let last = log.steps.last();
    let metrics = serde_json::json!({
        "steps": log.steps.len(),
        "final_loss_triplet": last.map(|s| s.loss_triplet),
        "final_loss_ce": last.map(|s| s.loss_ce),
    });
    model
        .save(&args.out, &metrics)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let log_path = {
        let mut os = args.out.as_os_str().to_os_string();
        os.push(".metrics.ndjson");
        PathBuf::from(os)
    };
    std::fs::write(&log_path, log.to_ndjson())?;
    write_resolved_config(
        &args.out,
        &serde_json::json!({
            "command": "train-backbone",
            "data": args.data,
            "variant": args.variant,
            "detector": args.detector,
            "backbone_config": bb_cfg,
            "train_config": train_cfg,
            "workers": args.workers,
        }),
    )?;
    println!(
        "backbone saved to {} ({} steps)",
        args.out.display(),
        log.steps.len()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let report_path = args.out.join("report.json");
    check_clobber(&report_path, args.overwrite)?;
    if !args.model.exists() {
        return Err(CliError::Data(format!(
            "model checkpoint {} does not exist",
            args.model.display()
        )));
    }
    let model =
        ReferenceBackbone::<f32>::load(&args.model).map_err(|e| CliError::Data(e.to_string()))?;
    let needs = occlugait_core::backbone::GaitModel::beta_requirements(&model);
    let detector = match &args.detector {
        Some(p) => Some(load_frozen_detector(p)?),
        None if needs.0 || needs.1 => {
            return Err(CliError::Config(
                "this model carries an awareness injector; pass --detector".into(),
            ))
        }
        None => None,
    };
    let videos = load_videos(&args.data)?;
    let ranks: Vec<usize> = parse_usize_list(&args.ranks, "rank")?;
    let classes = parse_classes(&args.classes)?;

    let mut protocol = match &args.protocol {
        Some(path) => {
            let f = std::fs::File::open(path)
                .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
            let (gallery, probes) = read_protocol_csv(f)?;
            EvalProtocol {
                gallery,
                probes,
                ranks: ranks.clone(),
                num_runs: args.runs,
                gallery_occlusion_classes: classes.clone(),
                probe_occlusion_classes: classes.clone(),
                rng_seed: args.seed,
                probe_only: args.probe_only,
                dynamic_probes: false,
                part_averaged: args.part_averaged,
            }
        }
        None => {
            let mut p = EvalProtocol::from_videos(&videos, 1, ranks.clone(), args.runs, args.seed);
            p.gallery_occlusion_classes = classes.clone();
            p.probe_occlusion_classes = classes.clone();
            p.probe_only = args.probe_only;
            p.part_averaged = args.part_averaged;
            p
        }
    };
    protocol.validate()?;

    std::fs::create_dir_all(&args.out)?;
    let manifest_dir = args.out.join("manifests");
    let det_ref = detector.as_ref();

    let report_json: serde_json::Value;
    let report_csv: String;
    match args.mode.as_str() {
        "standard" | "dynamic" => {
            protocol.dynamic_probes = args.mode == "dynamic";
            let report = run_protocol(
                &model,
                det_ref,
                &videos,
                &protocol,
                args.replay.is_none().then_some(manifest_dir.as_path()),
                args.replay.as_deref(),
            )?;
            print_summary(&report);
            report_csv = report.to_csv();
            report_json = serde_json::to_value(&report).unwrap();
        }
        "sliced" => {
            let subsets: Vec<BTreeSet<u8>> =
                vec![(1..=4).collect(), (5..=6).collect(), (7..=8).collect()];
            let rows = sliced_eval(
                &model,
                det_ref,
                &videos,
                &protocol,
                &subsets,
                Some(&manifest_dir),
            )?;
            let mut csv = String::from("classes,condition,rank,mean,std\n");
            for (subset, report) in &rows {
                print_summary(report);
                let label = subset
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join("+");
                for line in report.to_csv().lines().skip(1) {
                    csv.push_str(&format!("{label},{line}\n"));
                }
            }
            report_csv = csv;
            report_json = serde_json::json!({
                "mode": "sliced",
                "rows": rows
                    .iter()
                    .map(|(s, r)| serde_json::json!({"classes": s, "report": r}))
                    .collect::<Vec<_>>(),
            });
        }
        "cross" => {
            let rows = cross_occlusion_eval(&model, det_ref, &videos, &protocol, Some(&manifest_dir))?;
            let mut csv = String::from("gallery_classes,probe_classes,condition,rank,mean,std\n");
            for (gal, probe, report) in &rows {
                print_summary(report);
                let fmt = |s: &BTreeSet<u8>| {
                    s.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("+")
                };
                for line in report.to_csv().lines().skip(1) {
                    csv.push_str(&format!("{},{},{line}\n", fmt(gal), fmt(probe)));
                }
            }
            report_csv = csv;
            report_json = serde_json::json!({
                "mode": "cross",
                "rows": rows
                    .iter()
                    .map(|(g, p, r)| serde_json::json!({
                        "gallery_classes": g,
                        "probe_classes": p,
                        "report": r,
                    }))
                    .collect::<Vec<_>>(),
            });
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown mode {other:?} (expected standard, sliced, cross, dynamic)"
            )))
        }
    }

    std::fs::write(&report_path, serde_json::to_string_pretty(&report_json).unwrap())?;
    std::fs::write(args.out.join("report.csv"), report_csv)?;
    let protocol_file = std::fs::File::create(args.out.join("protocol.csv"))?;
    write_protocol_csv(protocol_file, &protocol)?;
    write_resolved_config(
        &args.out,
        &serde_json::json!({
            "command": "evaluate",
            "data": args.data,
            "model": args.model,
            "detector": args.detector,
            "mode": args.mode,
            "protocol": protocol,
            "replay": args.replay,
            "workers": args.workers,
        }),
    )?;
    println!("report written to {}", report_path.display());
    Ok(())
}

fn print_summary(report: &EvalReport) {
    if let Some(by_k) = report.mean.get("all") {
        let parts: Vec<String> = by_k
            .iter()
            .map(|(k, v)| format!("rank-{k}: {:.4} ± {:.4}", v, report.std["all"][k]))
            .collect();
        println!("{}", parts.join("  "));
    }
}
