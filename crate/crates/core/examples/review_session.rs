//! A review session driven through the library: flag samples from a score
//! report, record verdicts, print the tally and write the cleaned manifest.
//!
//! `cargo run --example review_session -- [work_dir]`

use std::path::PathBuf;

use cerhv::detector::{rank_scores, SampleScore};
use cerhv::metrics::{cer, Transcript};
use cerhv::pipeline::{synth_dataset, SynthConfig};
use cerhv::review::{Action, ErrorCategory, ReviewSession, VerdictRequest};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "review_demo".into()));
    let data = synth_dataset(&SynthConfig {
        count: 50,
        ..SynthConfig::default()
    })?;
    let manifest = data.write(&work.join("data"))?;
    // pretend predictions: every fifth line loses half its characters
    let scores = rank_scores(
        data.manifest
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let chars = e.text.codepoints();
                let keep = if i % 5 == 0 { chars.len() / 2 } else { chars.len() };
                let prediction: Transcript = chars[..keep].iter().copied().collect();
                SampleScore {
                    sample_id: e.id.clone(),
                    cer: cer(&prediction, &e.text),
                    prediction,
                    rank: 0,
                }
            })
            .collect(),
    );
    let mut session = ReviewSession::create(&work.join("sessions"), &manifest, &scores, 0.25)?;
    println!("session {} with {} flagged samples", session.id(), session.pending_count());
    let mut k = 0;
    while let Some(next) = session.next_pending() {
        let request = match k % 3 {
            0 => VerdictRequest {
                action: Some(Action::Relabel),
                corrected_text: Some(next.prediction.clone()),
                ..VerdictRequest::new(&next.sample_id, ErrorCategory::Transcription)
            },
            1 => VerdictRequest::new(&next.sample_id, ErrorCategory::Irrelevant),
            _ => VerdictRequest::new(&next.sample_id, ErrorCategory::ValidButHard),
        };
        session.submit(request)?;
        k += 1;
    }
    print!("{}", session.report().to_table());
    let (path, cleaned) = session.write_cleaned_manifest(false)?;
    println!("cleaned manifest {} : {:?}", path.display(), cleaned.summary);
    Ok(())
}
