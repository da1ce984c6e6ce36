//! The `cerhv` command line: one subcommand per pipeline stage.

mod config;
mod lock;

pub use config::{Preset, RunConfig};
pub use lock::{DirLock, LOCK_FILE};

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::detector::{
    score_samples, select_flagged, train_with_early_stopping, write_score_report, DetectorError,
    TrainingSetup,
};
use crate::lab::{run_noise_lab, split_cer, LabError, NoiseLabConfig};
use crate::pipeline::{
    apply_page_split, audit_split, crop_line_from_mask, inject_noise, load_gray, page_texts, save_gray, split_pages,
    synth_dataset, Manifest, NoiseCategory, PipelineError, PreprocessSpec, RenderConfig, Split, SynthConfig,
};
use crate::recognizer::{load_checkpoint, save_checkpoint, ModelError};
use crate::review::server::ReviewService;
use crate::review::{build_cleaned_manifest, CleanedManifest, ReviewError, ReviewSession, Verdict};

/// Failure classes, one exit code each.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io { .. } => CliError::Runtime(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteLoss(_) | ModelError::Io(_) => CliError::Runtime(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<DetectorError> for CliError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::Pipeline(e) => e.into(),
            DetectorError::Model(e) => e.into(),
            DetectorError::Diverged { .. } => CliError::Runtime(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<ReviewError> for CliError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::Pipeline(e) => e.into(),
            ReviewError::Detector(e) => e.into(),
            ReviewError::Io { .. } => CliError::Runtime(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::Pipeline(e) => e.into(),
            LabError::Detector(e) => e.into(),
            LabError::Review(e) => e.into(),
            LabError::Io { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

fn runtime(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "cerhv", version, about = "CER-based label-noise detection and human-verified cleaning for HTR datasets")]
pub struct Cli {
    /// JSON file of flat dotted config keys; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides (value parsed as JSON, else string).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic lines, inject noise, write manifest and images.
    Synth(SynthArgs),
    /// Train with early stopping; writes checkpoint and history.
    Train(TrainArgs),
    /// Rank samples by CER and flag those above tau.
    Score(ScoreArgs),
    /// Mean CER of a checkpoint on one split.
    Eval(EvalArgs),
    /// Serve the review API.
    ReviewServe(ReviewServeArgs),
    /// Apply verdicts and write the cleaned manifest.
    Clean(CleanArgs),
    /// Detector precision and recall on injected noise across seeds.
    NoiseLab(NoiseLabArgs),
    /// Leakage-free page-level split of a manifest.
    Split(SplitArgs),
    /// Cut line images out of a page with one mask per line.
    CropLines(CropArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub alphabet_size: Option<usize>,
    /// Mixed noise split evenly over the five categories.
    #[arg(long)]
    pub noise_rate: Option<f64>,
    #[arg(long)]
    pub rate_transcription: Option<f64>,
    #[arg(long)]
    pub rate_segmentation: Option<f64>,
    #[arg(long)]
    pub rate_orientation: Option<f64>,
    #[arg(long)]
    pub rate_script_mismatch: Option<f64>,
    #[arg(long)]
    pub rate_irrelevant: Option<f64>,
    #[arg(long)]
    pub right_to_left: bool,
    /// Overwrite an existing manifest.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f32>,
    /// Disable augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Split to score; all splits when omitted.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReviewServeArgs {
    /// Directory holding session state.
    #[arg(long)]
    pub root: PathBuf,
    /// Open a session for this manifest and score report at startup.
    #[arg(long, requires = "scores")]
    pub manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    /// Review session directory (flag set and verdict log).
    #[arg(long, conflicts_with = "verdicts")]
    pub session: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Verdict log; every sample it names counts as flagged.
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub allow_partial: bool,
}

#[derive(Debug, Args)]
pub struct NoiseLabArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub noise_rate: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CropArgs {
    #[arg(long)]
    pub page: PathBuf,
    /// One mask per line, in reading order.
    #[arg(long = "mask", required = true)]
    pub masks: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_set(items: &[String]) -> Result<Map<String, Value>, CliError> {
    let mut out = Map::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        out.insert(k.to_string(), value);
    }
    Ok(out)
}

/// Defaults, then the config file, then `--set`, then `CERHV_DETERMINISTIC`.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.config {
        config = config.load_file(path)?;
    }
    config = config.with_overrides(&parse_set(&cli.set)?)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if std::env::var("CERHV_DETERMINISTIC").is_ok_and(|v| v == "1") {
        config.deterministic = true;
    }
    if !config.deterministic && cli.seed.is_none() {
        config.seed = rand::random();
    }
    config.train.seed = config.seed;
    config.train.deterministic = config.deterministic;
    Ok(config)
}

fn required(opt: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    opt.clone()
        .ok_or_else(|| CliError::Usage(format!("missing --{what} (or paths.{what} in the config)")))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(runtime(path))
}

/// Runs one command. Results go to stdout; logs to stderr.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = resolve_config(&cli)?;
    match cli.command {
        Command::Synth(a) => cmd_synth(&mut config, a),
        Command::Train(a) => cmd_train(&mut config, a),
        Command::Score(a) => cmd_score(&mut config, a),
        Command::Eval(a) => cmd_eval(&mut config, a),
        Command::ReviewServe(a) => cmd_review_serve(&mut config, a),
        Command::Clean(a) => cmd_clean(&mut config, a),
        Command::NoiseLab(a) => cmd_noise_lab(&mut config, a),
        Command::Split(a) => cmd_split(&mut config, a),
        Command::CropLines(a) => cmd_crop_lines(&mut config, a),
    }
}

fn cmd_synth(config: &mut RunConfig, a: SynthArgs) -> Result<(), CliError> {
    let _lock = DirLock::acquire(&a.out)?;
    let manifest_path = a.out.join("manifest.jsonl");
    if manifest_path.exists() && !a.force {
        return Err(CliError::Data(format!("{} exists; pass --force to overwrite", manifest_path.display())));
    }
    if let Some(v) = a.count {
        config.synth.count = v;
    }
    if let Some(v) = a.alphabet_size {
        config.synth.alphabet_size = v;
    }
    if let Some(r) = a.noise_rate {
        config.noise = crate::pipeline::NoiseRates::mixed(r);
    }
    let per = [
        (a.rate_transcription, NoiseCategory::Transcription),
        (a.rate_segmentation, NoiseCategory::Segmentation),
        (a.rate_orientation, NoiseCategory::Orientation),
        (a.rate_script_mismatch, NoiseCategory::ScriptMismatch),
        (a.rate_irrelevant, NoiseCategory::Irrelevant),
    ];
    for (rate, c) in per {
        if let Some(r) = rate {
            match c {
                NoiseCategory::Transcription => config.noise.transcription = r,
                NoiseCategory::Segmentation => config.noise.segmentation = r,
                NoiseCategory::Orientation => config.noise.orientation = r,
                NoiseCategory::ScriptMismatch => config.noise.script_mismatch = r,
                NoiseCategory::Irrelevant => config.noise.irrelevant = r,
            }
        }
    }
    config.synth.right_to_left |= a.right_to_left;
    config.noise.validate()?;
    let s = &config.synth;
    let clean = synth_dataset(&SynthConfig {
        count: s.count,
        alphabet_size: s.alphabet_size,
        min_len: s.min_len,
        max_len: s.max_len,
        lines_per_page: s.lines_per_page,
        seed: config.seed,
        glyph_seed: s.glyph_seed,
        render: RenderConfig {
            right_to_left: s.right_to_left,
            ..RenderConfig::default()
        },
        split: config.split,
    })?;
    let (noisy, report) = inject_noise(&clean, &config.noise, config.seed.wrapping_add(1000))?;
    let path = noisy.write(&a.out)?;
    config.paths.manifest = Some(path.clone());
    config.echo(&a.out)?;
    let counts: Map<String, Value> = report.counts.iter().map(|(c, n)| (c.to_string(), json!(n))).collect();
    println!(
        "{}",
        json!({ "manifest": path, "samples": noisy.manifest.len(), "injected": report.total, "per_category": counts })
    );
    Ok(())
}

fn cmd_train(config: &mut RunConfig, a: TrainArgs) -> Result<(), CliError> {
    let _lock = DirLock::acquire(&a.out)?;
    if a.manifest.is_some() {
        config.paths.manifest = a.manifest.clone();
    }
    let manifest_path = required(&config.paths.manifest, "manifest")?;
    if let Some(p) = a.preset {
        config.model.preset = p;
    }
    if let Some(v) = a.max_epochs {
        config.train.max_epochs = v;
    }
    if let Some(v) = a.patience {
        config.train.patience = v;
    }
    if let Some(v) = a.batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        config.train.learning_rate = v;
    }
    if a.no_augment {
        config.augment = crate::pipeline::AugmentConfig::none();
    }
    let manifest = Manifest::load(&manifest_path)?;
    for split in [Split::Train, Split::Val] {
        if manifest.split_count(split) == 0 {
            return Err(CliError::Data(format!("{} has no {split} samples", manifest_path.display())));
        }
    }
    let setup = TrainingSetup {
        model: config.model_config(manifest.alphabet.len()),
        train: config.train.clone(),
        augment: config.augment.clone(),
        preprocess: None,
    };
    let outcome = train_with_early_stopping(&manifest, &manifest, &setup, config.seed)?;
    let ckpt = a.out.join("checkpoint.bin");
    save_checkpoint(&outcome.model, &ckpt)?;
    write_json(&a.out.join("preprocess.json"), &outcome.preprocess)?;
    let history = json!({
        "t_conv": outcome.t_conv,
        "best_epoch": outcome.best_epoch,
        "best_val_cer": outcome.best_val_cer,
        "stopped_early": outcome.stopped_early,
        "history": outcome.history,
    });
    write_json(&a.out.join("history.json"), &history)?;
    config.paths.checkpoint = Some(ckpt.clone());
    config.echo(&a.out)?;
    println!(
        "{}",
        json!({ "checkpoint": ckpt, "t_conv": outcome.t_conv, "best_epoch": outcome.best_epoch, "best_val_cer": outcome.best_val_cer })
    );
    Ok(())
}

/// Checkpoint plus the preprocessing spec saved beside it.
fn load_model(path: &Path) -> Result<(crate::recognizer::Crnn, PreprocessSpec), CliError> {
    let model = load_checkpoint(path, None)?;
    let spec_path = path.with_file_name("preprocess.json");
    let text = std::fs::read_to_string(&spec_path)
        .map_err(|e| CliError::Data(format!("{}: {e} (written by `cerhv train`)", spec_path.display())))?;
    let spec = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", spec_path.display())))?;
    Ok((model, spec))
}

fn cmd_score(config: &mut RunConfig, a: ScoreArgs) -> Result<(), CliError> {
    let _lock = DirLock::acquire(&a.out)?;
    if a.checkpoint.is_some() {
        config.paths.checkpoint = a.checkpoint.clone();
    }
    if a.manifest.is_some() {
        config.paths.manifest = a.manifest.clone();
    }
    if let Some(t) = a.tau {
        config.detector.tau = t;
    }
    let (model, spec) = load_model(&required(&config.paths.checkpoint, "checkpoint")?)?;
    let manifest_path = required(&config.paths.manifest, "manifest")?;
    let manifest = Manifest::load(&manifest_path)?;
    if manifest.alphabet != *model.alphabet() {
        return Err(CliError::Data("manifest alphabet differs from the checkpoint's".into()));
    }
    let samples: Vec<_> = manifest.entries.iter().filter(|e| a.split.is_none_or(|s| e.split == s)).collect();
    let scoring = score_samples(&model, samples, &manifest, &spec)?;
    let tau = config.detector.tau;
    let scores_path = a.out.join("scores.jsonl");
    std::fs::write(&scores_path, write_score_report(&scoring.scores, tau)).map_err(runtime(&scores_path))?;
    let flags = select_flagged(&scoring.scores, tau);
    let flagged: Vec<&str> = flags.flagged.iter().map(|s| s.sample_id.as_str()).collect();
    write_json(&a.out.join("flagged.json"), &flagged)?;
    write_json(&a.out.join("failures.json"), &scoring.failures)?;
    config.paths.reports = Some(a.out.clone());
    config.echo(&a.out)?;
    println!(
        "{}",
        json!({ "scores": scores_path, "scored": scoring.scores.len(), "flagged": flagged.len(), "failures": scoring.failures.len(), "tau": tau })
    );
    Ok(())
}

fn cmd_eval(config: &mut RunConfig, a: EvalArgs) -> Result<(), CliError> {
    let _lock = a.out.as_deref().map(DirLock::acquire).transpose()?;
    if a.checkpoint.is_some() {
        config.paths.checkpoint = a.checkpoint.clone();
    }
    if a.manifest.is_some() {
        config.paths.manifest = a.manifest.clone();
    }
    let (model, spec) = load_model(&required(&config.paths.checkpoint, "checkpoint")?)?;
    let manifest = Manifest::load(required(&config.paths.manifest, "manifest")?)?;
    let n = manifest.split_count(a.split);
    if n == 0 {
        return Err(CliError::Data(format!("the {} split is empty", a.split)));
    }
    let cer = split_cer(&model, &manifest, &manifest, &spec, a.split)?;
    let result = json!({ "split": a.split, "samples": n, "mean_cer": cer });
    if let Some(out) = &a.out {
        write_json(&out.join("eval.json"), &result)?;
        config.echo(out)?;
    }
    println!("{result}");
    Ok(())
}

fn cmd_review_serve(config: &mut RunConfig, a: ReviewServeArgs) -> Result<(), CliError> {
    let _lock = DirLock::acquire(&a.root)?;
    let service = Arc::new(ReviewService::open(&a.root)?);
    if let (Some(m), Some(s)) = (&a.manifest, &a.scores) {
        let tau = a.tau.unwrap_or(config.detector.tau);
        let id = service.create_session(m, s, tau)?;
        let pending = service.with_session(&id, |s| Ok(s.pending_count()))?;
        println!("{}", json!({ "session_id": id, "pending": pending }));
    }
    config.paths.manifest = a.manifest.clone();
    config.echo(&a.root)?;
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| CliError::Runtime(format!("bind {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("{}", json!({ "listening": format!("http://{addr}") }));
        use std::io::Write;
        let _ = std::io::stdout().flush();
        crate::review::server::serve(listener, service)
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}

fn cmd_clean(config: &mut RunConfig, a: CleanArgs) -> Result<(), CliError> {
    let out_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let _lock = DirLock::acquire(if out_dir.as_os_str().is_empty() { Path::new(".") } else { &out_dir })?;
    let cleaned: CleanedManifest = if let Some(dir) = &a.session {
        ReviewSession::open(dir)?.cleaned_manifest(a.allow_partial)?
    } else {
        if a.manifest.is_some() {
            config.paths.manifest = a.manifest.clone();
        }
        if a.verdicts.is_some() {
            config.paths.verdicts = a.verdicts.clone();
        }
        let manifest = Manifest::load(required(&config.paths.manifest, "manifest")?)?;
        let log_path = required(&config.paths.verdicts, "verdicts")?;
        let text = std::fs::read_to_string(&log_path).map_err(runtime(&log_path))?;
        let mut log = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: Verdict = serde_json::from_str(line)
                .map_err(|e| CliError::Data(format!("{} line {}: {e}", log_path.display(), i + 1)))?;
            v.validate(&manifest.alphabet)?;
            log.push(v);
        }
        let flagged: Vec<String> = log.iter().map(|v| v.sample_id.clone()).collect();
        build_cleaned_manifest(&manifest, &log, &flagged, a.allow_partial)?
    };
    cleaned.save(&a.out)?;
    config.echo(if out_dir.as_os_str().is_empty() { Path::new(".") } else { &out_dir })?;
    println!("{}", json!({ "manifest": a.out, "summary": cleaned.summary }));
    Ok(())
}

fn cmd_noise_lab(config: &mut RunConfig, a: NoiseLabArgs) -> Result<(), CliError> {
    let _lock = DirLock::acquire(&a.out)?;
    if let Some(v) = a.count {
        config.synth.count = v;
    }
    if let Some(r) = a.noise_rate {
        config.noise = crate::pipeline::NoiseRates::mixed(r);
    } else if config.noise.total() == 0.0 {
        config.noise = crate::pipeline::NoiseRates::mixed(0.1);
    }
    if let Some(t) = a.tau {
        config.detector.tau = t;
    }
    if let Some(m) = a.max_epochs {
        config.train.max_epochs = m;
    }
    let seeds = a.seeds.unwrap_or_else(|| vec![config.seed, config.seed + 1, config.seed + 2]);
    let s = &config.synth;
    let lab = NoiseLabConfig {
        synth: SynthConfig {
            count: s.count,
            alphabet_size: s.alphabet_size,
            min_len: s.min_len,
            max_len: s.max_len,
            lines_per_page: s.lines_per_page,
            seed: config.seed,
            glyph_seed: s.glyph_seed,
            render: RenderConfig {
                right_to_left: s.right_to_left,
                ..RenderConfig::default()
            },
            split: config.split,
        },
        rates: config.noise,
        seeds,
        tau: config.detector.tau,
        setup: TrainingSetup {
            model: config.model_config(s.alphabet_size),
            train: config.train.clone(),
            augment: config.augment.clone(),
            preprocess: None,
        },
    };
    let report = run_noise_lab(&lab, |run| log::info!("seed {} finished at epoch {}", run.seed, run.outcome.t_conv))?;
    write_json(&a.out.join("noise_lab.json"), &report)?;
    let table = report.to_table();
    std::fs::write(a.out.join("noise_lab.txt"), &table).map_err(runtime(&a.out))?;
    config.echo(&a.out)?;
    print!("{table}");
    Ok(())
}

fn cmd_split(config: &mut RunConfig, a: SplitArgs) -> Result<(), CliError> {
    if a.manifest.is_some() {
        config.paths.manifest = a.manifest.clone();
    }
    if let Some(t) = a.threshold {
        config.split.similarity_threshold = t;
    }
    let out_dir = a.out.parent().map(Path::to_path_buf).filter(|p| !p.as_os_str().is_empty()).unwrap_or(".".into());
    let _lock = DirLock::acquire(&out_dir)?;
    let manifest = Manifest::load(required(&config.paths.manifest, "manifest")?)?;
    let pages = page_texts(&manifest);
    let split = split_pages(&pages, &crate::pipeline::SplitConfig { seed: config.seed, ..config.split })?;
    let audit = audit_split(&pages, &split, config.split.similarity_threshold);
    if !audit.violations.is_empty() {
        return Err(CliError::Data(format!("leakage audit failed: {:?}", audit.violations)));
    }
    let out = apply_page_split(&manifest, &split)?;
    let rebased = CleanedManifest {
        manifest: out,
        summary: Default::default(),
    };
    rebased.save(&a.out)?;
    config.echo(&out_dir)?;
    let counts: Map<String, Value> = Split::ALL.iter().map(|s| (s.to_string(), json!(split.pages_in(*s).count()))).collect();
    println!(
        "{}",
        json!({ "manifest": a.out, "pages": counts, "dropped_duplicates": split.dropped_duplicates, "conflicts": split.conflicts.len(), "audit": audit })
    );
    Ok(())
}

fn cmd_crop_lines(config: &mut RunConfig, a: CropArgs) -> Result<(), CliError> {
    let _lock = DirLock::acquire(&a.out)?;
    let page = load_gray(&a.page)?;
    let stem = a.page.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_else(|| "page".into());
    let mut written = Vec::new();
    for (k, mask_path) in a.masks.iter().enumerate() {
        let mask = load_gray(mask_path)?;
        let crop = crop_line_from_mask(&page, &mask)?;
        let path = a.out.join(format!("{stem}_{k:03}.png"));
        save_gray(&crop, &path)?;
        written.push(json!({ "image": path, "width": crop.width(), "height": crop.height() }));
    }
    config.echo(&a.out)?;
    println!("{}", json!({ "lines": written }));
    Ok(())
}

/// Entry point for the binary: parses, runs, and maps failures to exit codes.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
