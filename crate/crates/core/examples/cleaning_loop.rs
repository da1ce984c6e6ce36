//! Both stages end to end on one seed: train on noisy lines, flag by CER,
//! review every flagged line with the ground-truth oracle, build the cleaned
//! manifest, and retrain on it.
//!
//! `cargo run --release --example cleaning_loop -- [work_dir] [seed]`

use std::path::PathBuf;

use cerhv::lab::{run_cleaning, LabRun, NoiseLabConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let work = PathBuf::from(args.next().unwrap_or_else(|| "cleaning_demo".into()));
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let config = NoiseLabConfig::default();
    let run = LabRun::execute(&config, seed)?;
    println!("{}", serde_json::to_string_pretty(&run.summary(config.tau))?);
    let out = run_cleaning(&run, &config, &work)?;
    print!("{}", out.report_table);
    println!("cleaned: {:?}", out.summary);
    println!("raw model, test CER: raw {:.4} cleaned {:.4}", out.raw_model_raw_test, out.raw_model_cleaned_test);
    println!(
        "cleaned val CER: raw model {:.4} retrained {:.4} (stopped at epoch {})",
        out.raw_model_cleaned_val, out.retrained_cleaned_val, out.retrained_t_conv
    );
    Ok(())
}
