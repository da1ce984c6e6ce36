use serde::{Deserialize, Serialize};

use super::score::SampleScore;
use super::DetectorError;
use crate::metrics::{CerScore, Transcript};

/// One line of the score report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub id: String,
    pub pred: String,
    pub cer: f64,
    pub rank: usize,
    pub flagged: bool,
    pub edits: usize,
    pub ref_len: usize,
}

/// JSONL in rank order, one record per scored sample.
pub fn write_score_report(scores: &[SampleScore], tau: f64) -> String {
    let mut ranked: Vec<&SampleScore> = scores.iter().collect();
    ranked.sort_by_key(|s| s.rank);
    let mut out = String::new();
    for s in ranked {
        let rec = ScoreRecord {
            id: s.sample_id.clone(),
            pred: s.prediction.as_str().to_string(),
            cer: s.cer.value(),
            rank: s.rank,
            flagged: s.cer.value() > tau,
            edits: s.cer.edits,
            ref_len: s.cer.ref_len,
        };
        out.push_str(&serde_json::to_string(&rec).expect("score record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_score_report(text: &str) -> Result<Vec<SampleScore>, DetectorError> {
    let mut scores = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoreRecord = serde_json::from_str(line)
            .map_err(|e| DetectorError::Invalid(format!("score report line {}: {e}", i + 1)))?;
        scores.push(SampleScore {
            sample_id: rec.id,
            prediction: Transcript::new(rec.pred),
            cer: CerScore::new(rec.edits, rec.ref_len),
            rank: rec.rank,
        });
    }
    let mut ranks: Vec<usize> = scores.iter().map(|s| s.rank).collect();
    ranks.sort_unstable();
    if ranks.iter().enumerate().any(|(i, &r)| r != i + 1) {
        return Err(DetectorError::Invalid("score report ranks are not a permutation of 1..n".into()));
    }
    Ok(scores)
}
