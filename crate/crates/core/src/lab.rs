//! Synthetic experiments: learnability, detector precision under injected
//! noise, and the clean-then-retrain comparison.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detector::{
    evaluate_mean_cer, precision_at_k, prepare_sample, score_samples, select_flagged, train_with_early_stopping,
    write_score_report, DetectorError, PrecisionAtK, Scoring, TrainingOutcome, TrainingSetup, DEFAULT_TAU,
};
use crate::pipeline::{
    inject_noise, synth_dataset, AugmentConfig, ImageSource, Manifest, NoiseCategory, NoiseRates, NoiseReport,
    PipelineError, Split, SynthConfig, SynthDataset,
};
use crate::recognizer::{Crnn, ModelConfig, TrainConfig};
use crate::review::{Action, CleanSummary, ErrorCategory, ImageFix, ReviewError, ReviewSession, VerdictRequest};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Desk preset with the desk schedule and default augmentation.
pub fn desk_setup(alphabet_size: usize) -> TrainingSetup {
    TrainingSetup {
        model: ModelConfig::desk(0, alphabet_size),
        train: TrainConfig::desk(),
        augment: AugmentConfig::default(),
        preprocess: None,
    }
}

/// Mean CER of `model` over the samples of `split`.
pub fn split_cer<S: ImageSource>(
    model: &Crnn,
    manifest: &Manifest,
    source: &S,
    outcome_spec: &crate::pipeline::PreprocessSpec,
    split: Split,
) -> Result<f64, LabError> {
    let samples = manifest
        .split(split)
        .map(|s| Ok((prepare_sample(&source.image(s)?, outcome_spec, model.config())?, s.text.clone())))
        .collect::<Result<Vec<_>, LabError>>()?;
    Ok(evaluate_mean_cer(model, &samples)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnabilityResult {
    pub seed: u64,
    pub t_conv: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub val_cer: f64,
    pub test_cer: f64,
    pub seconds: f64,
}

/// Trains on clean synthetic lines and measures held-out CER.
pub fn run_learnability(synth: &SynthConfig, setup: &TrainingSetup, seed: u64) -> Result<LearnabilityResult, LabError> {
    let start = Instant::now();
    let data = synth_dataset(&SynthConfig { seed, ..synth.clone() })?;
    let outcome = train_with_early_stopping(&data.manifest, &data, setup, seed)?;
    let test_cer = split_cer(&outcome.model, &data.manifest, &data, &outcome.preprocess, Split::Test)?;
    Ok(LearnabilityResult {
        seed,
        t_conv: outcome.t_conv,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        val_cer: outcome.best_val_cer,
        test_cer,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseLabConfig {
    pub synth: SynthConfig,
    pub rates: NoiseRates,
    pub seeds: Vec<u64>,
    pub tau: f64,
    pub setup: TrainingSetup,
}

impl Default for NoiseLabConfig {
    fn default() -> Self {
        let synth = SynthConfig {
            count: 1000,
            ..SynthConfig::default()
        };
        Self {
            setup: desk_setup(synth.alphabet_size),
            synth,
            rates: NoiseRates::mixed(0.1),
            seeds: vec![0, 1, 2],
            tau: DEFAULT_TAU,
        }
    }
}

/// Everything produced by one seed of the noise lab.
#[derive(Debug, Clone)]
pub struct LabRun {
    pub seed: u64,
    pub clean: SynthDataset,
    pub noisy: SynthDataset,
    pub injected: NoiseReport,
    pub outcome: TrainingOutcome,
    /// All splits, ranked together.
    pub scoring: Scoring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub samples: usize,
    pub injected: usize,
    pub t_conv: usize,
    pub best_epoch: usize,
    pub best_val_cer: f64,
    pub flagged: usize,
    /// Precision over the top `injected` ranks; absent without injected noise.
    pub precision: Option<PrecisionAtK>,
    pub mean_cer_injected: Option<f64>,
    pub mean_cer_clean: Option<f64>,
    pub separation: Option<f64>,
    /// Fraction of each category's injected samples that were flagged.
    pub recall: BTreeMap<NoiseCategory, Option<f64>>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl LabRun {
    pub fn execute(config: &NoiseLabConfig, seed: u64) -> Result<Self, LabError> {
        let clean = synth_dataset(&SynthConfig {
            seed,
            ..config.synth.clone()
        })?;
        let (noisy, injected) = inject_noise(&clean, &config.rates, seed.wrapping_add(1000))?;
        let outcome = train_with_early_stopping(&noisy.manifest, &noisy, &config.setup, seed)?;
        let scoring = score_samples(&outcome.model, &noisy.manifest.entries, &noisy, &outcome.preprocess)?;
        Ok(Self {
            seed,
            clean,
            noisy,
            injected,
            outcome,
            scoring,
        })
    }

    fn truth(&self, id: &str) -> Option<NoiseCategory> {
        self.noisy.manifest.get(id).and_then(|e| e.noise.map(|n| n.category))
    }

    pub fn summary(&self, tau: f64) -> SeedSummary {
        let noise: BTreeMap<&str, NoiseCategory> = self
            .noisy
            .manifest
            .entries
            .iter()
            .filter_map(|e| e.noise.map(|n| (e.id.as_str(), n.category)))
            .collect();
        let scores = &self.scoring.scores;
        let (inj, cl): (Vec<_>, Vec<_>) = scores.iter().partition(|s| noise.contains_key(s.sample_id.as_str()));
        let inj: Vec<f64> = inj.iter().map(|s| s.cer.value()).collect();
        let cl: Vec<f64> = cl.iter().map(|s| s.cer.value()).collect();
        let flags = select_flagged(scores, tau);
        let flagged: std::collections::HashSet<&str> = flags.flagged.iter().map(|s| s.sample_id.as_str()).collect();
        let recall = NoiseCategory::ALL
            .iter()
            .map(|&c| {
                let members: Vec<&&str> = noise.iter().filter(|(_, &k)| k == c).map(|(id, _)| id).collect();
                let hit = members.iter().filter(|id| flagged.contains(**id)).count();
                (c, (!members.is_empty()).then(|| hit as f64 / members.len() as f64))
            })
            .collect();
        let (mi, mc) = (mean(&inj), mean(&cl));
        SeedSummary {
            seed: self.seed,
            samples: scores.len(),
            injected: noise.len(),
            t_conv: self.outcome.t_conv,
            best_epoch: self.outcome.best_epoch,
            best_val_cer: self.outcome.best_val_cer,
            flagged: flags.flagged.len(),
            precision: (!noise.is_empty())
                .then(|| precision_at_k(scores, |id| noise.contains_key(id), noise.len()).ok())
                .flatten(),
            mean_cer_injected: mi,
            mean_cer_clean: mc,
            separation: mi.zip(mc).map(|(a, b)| a - b),
            recall,
        }
    }

    /// The verdict a perfect reviewer gives each flagged sample: injected
    /// noise gets its true category, everything else is valid but hard.
    pub fn oracle_verdict(&self, sample_id: &str) -> VerdictRequest {
        let mut r = VerdictRequest {
            sample_id: sample_id.to_string(),
            category: ErrorCategory::ValidButHard,
            action: None,
            corrected_text: None,
            fix: None,
            reviewer: Some("oracle".into()),
        };
        if let Some(c) = self.truth(sample_id) {
            r.category = c.into();
            match c {
                NoiseCategory::Transcription => {
                    r.action = Some(Action::Relabel);
                    r.corrected_text = self.clean.manifest.get(sample_id).map(|e| e.text.as_str().to_string());
                }
                NoiseCategory::Orientation => {
                    r.action = Some(Action::FixImage);
                    r.fix = Some(ImageFix::Rotate180);
                }
                NoiseCategory::Segmentation => r.action = Some(Action::Remove),
                NoiseCategory::ScriptMismatch | NoiseCategory::Irrelevant => {}
            }
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLabReport {
    pub tau: f64,
    pub seeds: Vec<SeedSummary>,
    pub mean_precision: Option<f64>,
    pub mean_separation: Option<f64>,
}

impl NoiseLabReport {
    pub fn from_summaries(tau: f64, seeds: Vec<SeedSummary>) -> Self {
        let p: Vec<f64> = seeds.iter().filter_map(|s| s.precision.map(|p| p.precision)).collect();
        let sep: Vec<f64> = seeds.iter().filter_map(|s| s.separation).collect();
        Self {
            tau,
            mean_precision: mean(&p),
            mean_separation: mean(&sep),
            seeds,
        }
    }

    pub fn to_table(&self) -> String {
        let na = |v: Option<f64>| v.map_or("N/A".to_string(), |x| format!("{x:.3}"));
        let mut out = format!(
            "{:>6} {:>8} {:>8} {:>6} {:>8} {:>9} {:>10}  recall by category\n",
            "seed", "injected", "flagged", "t_conv", "val_cer", "precision", "separation"
        );
        for s in &self.seeds {
            let recall: Vec<String> = s.recall.iter().map(|(c, r)| format!("{c}={}", na(*r))).collect();
            out.push_str(&format!(
                "{:>6} {:>8} {:>8} {:>6} {:>8.4} {:>9} {:>10}  {}\n",
                s.seed,
                s.injected,
                s.flagged,
                s.t_conv,
                s.best_val_cer,
                na(s.precision.map(|p| p.precision)),
                na(s.separation),
                recall.join(" ")
            ));
        }
        out.push_str(&format!(
            "mean precision {}  mean separation {}\n",
            na(self.mean_precision),
            na(self.mean_separation)
        ));
        out
    }
}

/// Runs every configured seed; `on_seed` sees each run as it finishes.
pub fn run_noise_lab(config: &NoiseLabConfig, mut on_seed: impl FnMut(&LabRun)) -> Result<NoiseLabReport, LabError> {
    let mut summaries = Vec::new();
    for &seed in &config.seeds {
        let run = LabRun::execute(config, seed)?;
        on_seed(&run);
        summaries.push(run.summary(config.tau));
    }
    Ok(NoiseLabReport::from_summaries(config.tau, summaries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningOutcome {
    pub summary: CleanSummary,
    pub report_table: String,
    /// Raw-trained model on the noisy test split.
    pub raw_model_raw_test: f64,
    /// Raw-trained model on the cleaned test split.
    pub raw_model_cleaned_test: f64,
    /// Raw-trained model on the cleaned validation split.
    pub raw_model_cleaned_val: f64,
    /// Model retrained on the cleaned training split, on the cleaned
    /// validation split (best checkpoint).
    pub retrained_cleaned_val: f64,
    pub retrained_t_conv: usize,
    pub cleaned_manifest: PathBuf,
}

/// Writes the noisy data to `workdir`, reviews every flagged sample with
/// the oracle through a review session, builds D' and retrains on it.
pub fn run_cleaning(run: &LabRun, config: &NoiseLabConfig, workdir: &Path) -> Result<CleaningOutcome, LabError> {
    let manifest_path = run.noisy.write(&workdir.join("data"))?;
    let scores_path = workdir.join("scores.jsonl");
    std::fs::write(&scores_path, write_score_report(&run.scoring.scores, config.tau)).map_err(|e| LabError::Io {
        path: scores_path.clone(),
        source: e,
    })?;
    let mut session = ReviewSession::create(&workdir.join("review"), &manifest_path, &run.scoring.scores, config.tau)?;
    while let Some(next) = session.next_pending() {
        session.submit(run.oracle_verdict(&next.sample_id))?;
    }
    let (cleaned_path, cleaned) = session.write_cleaned_manifest(false)?;
    let cleaned_manifest = Manifest::load(&cleaned_path)?;
    let raw = &run.outcome;
    let spec = &raw.preprocess;
    let raw_model_raw_test = split_cer(&raw.model, &run.noisy.manifest, &run.noisy, spec, Split::Test)?;
    let raw_model_cleaned_test = split_cer(&raw.model, &cleaned_manifest, &cleaned_manifest, spec, Split::Test)?;
    let raw_model_cleaned_val = split_cer(&raw.model, &cleaned_manifest, &cleaned_manifest, spec, Split::Val)?;
    let retrained = train_with_early_stopping(&cleaned_manifest, &cleaned_manifest, &config.setup, run.seed)?;
    Ok(CleaningOutcome {
        summary: cleaned.summary,
        report_table: session.report().to_table(),
        raw_model_raw_test,
        raw_model_cleaned_test,
        raw_model_cleaned_val,
        retrained_cleaned_val: retrained.best_val_cer,
        retrained_t_conv: retrained.t_conv,
        cleaned_manifest: cleaned_path,
    })
}

