//! Trains the desk preset on clean synthetic lines and reports held-out CER.
//!
//! `cargo run --release --example train_synthetic -- [count] [seed]`

use std::time::Instant;

use cerhv::detector::{evaluate_mean_cer, prepare_sample, train_with_early_stopping, TrainingSetup};
use cerhv::pipeline::{synth_dataset, AugmentConfig, ImageSource, Split, SynthConfig};
use cerhv::recognizer::{ModelConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let count = args.first().map_or(Ok(500), |s| s.parse())?;
    let seed = args.get(1).map_or(Ok(0), |s| s.parse())?;
    let data = synth_dataset(&SynthConfig {
        count,
        seed,
        ..SynthConfig::default()
    })?;
    let setup = TrainingSetup {
        model: ModelConfig::desk(0, data.manifest.alphabet.len()),
        train: TrainConfig::desk(),
        augment: AugmentConfig::default(),
        preprocess: None,
    };
    let start = Instant::now();
    let outcome = train_with_early_stopping(&data.manifest, &data, &setup, seed)?;
    let test: Vec<_> = data
        .manifest
        .split(Split::Test)
        .map(|s| Ok((prepare_sample(&data.image(s)?, &outcome.preprocess, outcome.model.config())?, s.text.clone())))
        .collect::<Result<_, cerhv::detector::DetectorError>>()?;
    let test_cer = evaluate_mean_cer(&outcome.model, &test)?;
    println!(
        "stopped at epoch {} (best {}), val CER {:.4}, test CER {:.4}, {:.1}s",
        outcome.t_conv,
        outcome.best_epoch,
        outcome.best_val_cer,
        test_cer,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
