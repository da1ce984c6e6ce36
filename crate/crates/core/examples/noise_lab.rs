//! Injects mixed label noise into synthetic lines, trains the desk preset,
//! ranks every sample by CER and reports detector precision per seed.
//!
//! `cargo run --release --example noise_lab -- [count] [seed...]`

use cerhv::lab::{run_noise_lab, NoiseLabConfig, NoiseLabReport};
use cerhv::pipeline::SynthConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = NoiseLabConfig::default();
    if let Some(count) = args.first() {
        config.synth = SynthConfig {
            count: count.parse()?,
            ..config.synth
        };
    }
    if args.len() > 1 {
        config.seeds = args[1..].iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    }
    let report: NoiseLabReport = run_noise_lab(&config, |run| {
        let s = run.summary(config.tau);
        println!("seed {} done: {}", s.seed, serde_json::to_string(&s).unwrap());
        for score in run.scoring.scores.iter().take(5) {
            println!("  rank {} {} cer {:.2} pred {:?}", score.rank, score.sample_id, score.cer.value(), score.prediction.as_str());
        }
    })?;
    print!("{}", report.to_table());
    Ok(())
}
