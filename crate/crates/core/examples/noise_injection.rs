//! Builds a clean synthetic dataset, corrupts 10% of it across the five
//! noise categories and writes manifest plus images.
//!
//! `cargo run --example noise_injection -- [out_dir] [count]`

use std::path::PathBuf;

use cerhv::pipeline::{inject_noise, synth_dataset, NoiseRates, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "noisy_data".into()));
    let count = args.next().map(|c| c.parse()).transpose()?.unwrap_or(200);
    let clean = synth_dataset(&SynthConfig {
        count,
        ..SynthConfig::default()
    })?;
    let (noisy, report) = inject_noise(&clean, &NoiseRates::mixed(0.1), 42)?;
    let manifest = noisy.write(&out)?;
    println!("{} lines, {} corrupted -> {}", noisy.manifest.len(), report.total, manifest.display());
    for (category, n) in &report.counts {
        println!("  {category}: {n}");
    }
    for e in noisy.manifest.entries.iter().filter(|e| e.noise.is_some()).take(5) {
        let before = &clean.manifest.get(&e.id).unwrap().text;
        println!("  {} [{}] label {:?} (was {:?})", e.id, e.noise.unwrap().category, e.text.as_str(), before.as_str());
    }
    Ok(())
}
