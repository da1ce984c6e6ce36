use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::train::prepare_sample;
use super::DetectorError;
use crate::metrics::{cer, CerScore, Transcript};
use crate::pipeline::{ImageSource, LineSample, PreprocessSpec};
use crate::recognizer::{Crnn, ImageTensor};

pub const DEFAULT_TAU: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub prediction: Transcript,
    pub cer: CerScore,
    /// 1-based position in the ranking.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFailure {
    pub sample_id: String,
    pub message: String,
}

/// Ranked scores plus the samples that could not be scored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scoring {
    pub scores: Vec<SampleScore>,
    pub failures: Vec<ScoreFailure>,
}

/// Sorts by CER descending, then id ascending, and assigns ranks from 1.
pub fn rank_scores(mut scores: Vec<SampleScore>) -> Vec<SampleScore> {
    scores.sort_by(|a, b| match b.cer.cmp_value(&a.cer) {
        Ordering::Equal => a.sample_id.cmp(&b.sample_id),
        o => o,
    });
    for (i, s) in scores.iter_mut().enumerate() {
        s.rank = i + 1;
    }
    scores
}

/// Predicts every sample from its raw preprocessed image and ranks by CER
/// against the stored label. Unreadable images are reported, not ranked.
pub fn score_samples<'a, S: ImageSource>(
    model: &Crnn,
    samples: impl IntoIterator<Item = &'a LineSample>,
    source: &S,
    spec: &PreprocessSpec,
) -> Result<Scoring, DetectorError> {
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for sample in samples {
        let tensor = match source.image(sample) {
            Ok(img) => prepare_sample(&img, spec, model.config())?,
            Err(e) => {
                log::warn!("skipping {}: {e}", sample.id);
                failures.push(ScoreFailure {
                    sample_id: sample.id.clone(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let prediction = model.predict(&tensor)?;
        let score = cer(&prediction, &sample.text);
        scores.push(SampleScore {
            sample_id: sample.id.clone(),
            prediction,
            cer: score,
            rank: 0,
        });
    }
    if !failures.is_empty() {
        log::warn!("{} samples excluded from ranking", failures.len());
    }
    Ok(Scoring {
        scores: rank_scores(scores),
        failures,
    })
}

/// Mean per-sample CER of greedy predictions.
pub fn evaluate_mean_cer(model: &Crnn, samples: &[(ImageTensor, Transcript)]) -> Result<f64, DetectorError> {
    if samples.is_empty() {
        return Err(DetectorError::Invalid("cannot evaluate an empty sample set".into()));
    }
    let mut total = 0.0;
    for (image, text) in samples {
        total += cer(&model.predict(image)?, text).value();
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagSet {
    pub threshold: f64,
    pub flagged: Vec<SampleScore>,
}

/// Samples whose CER strictly exceeds `tau`, in rank order.
pub fn select_flagged(scores: &[SampleScore], tau: f64) -> FlagSet {
    FlagSet {
        threshold: tau,
        flagged: scores.iter().filter(|s| s.cer.value() > tau).cloned().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtK {
    pub k_requested: usize,
    /// `min(k, scored samples)`.
    pub k_used: usize,
    pub hits: usize,
    pub precision: f64,
    /// The request exceeded the number of scored samples.
    pub truncated: bool,
}

/// Fraction of the `k` highest-ranked samples that are genuinely noisy.
pub fn precision_at_k(
    scores: &[SampleScore],
    is_noisy: impl Fn(&str) -> bool,
    k: usize,
) -> Result<PrecisionAtK, DetectorError> {
    if k == 0 {
        return Err(DetectorError::Invalid("k must be at least 1".into()));
    }
    if scores.is_empty() {
        return Err(DetectorError::Invalid("no scored samples".into()));
    }
    let k_used = k.min(scores.len());
    let mut ranked: Vec<&SampleScore> = scores.iter().collect();
    ranked.sort_by_key(|s| s.rank);
    let hits = ranked[..k_used].iter().filter(|s| is_noisy(&s.sample_id)).count();
    Ok(PrecisionAtK {
        k_requested: k,
        k_used,
        hits,
        precision: hits as f64 / k_used as f64,
        truncated: k_used < k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn score(id: &str, edits: usize, len: usize) -> SampleScore {
        SampleScore {
            sample_id: id.into(),
            prediction: Transcript::empty(),
            cer: CerScore::new(edits, len),
            rank: 0,
        }
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let ranked = rank_scores(vec![score("b", 1, 4), score("a", 2, 8), score("c", 0, 3), score("d", 3, 4)]);
        let ids: Vec<&str> = ranked.iter().map(|s| s.sample_id.as_str()).collect();
        assert_eq!(ids, ["d", "a", "b", "c"]);
        assert_eq!(ranked.iter().map(|s| s.rank).collect::<Vec<_>>(), [1, 2, 3, 4]);
    }

    #[test]
    fn threshold_is_strict() {
        let ranked = rank_scores(vec![score("a", 30, 100), score("b", 26, 100), score("c", 25, 100), score("d", 20, 100)]);
        let f = select_flagged(&ranked, 0.25);
        assert_eq!(f.flagged.iter().map(|s| s.sample_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        let zero = rank_scores(vec![score("a", 0, 4), score("b", 1, 4)]);
        assert_eq!(select_flagged(&zero, 0.0).flagged.len(), 1);
    }

    #[test]
    fn precision_truncates() {
        let ranked = rank_scores(vec![score("n1", 4, 4), score("n2", 3, 4), score("c", 0, 4)]);
        let p = precision_at_k(&ranked, |id| id.starts_with('n'), 2).unwrap();
        assert_eq!((p.hits, p.precision, p.truncated), (2, 1.0, false));
        let p = precision_at_k(&ranked, |id| id.starts_with('n'), 10).unwrap();
        assert_eq!((p.k_used, p.hits, p.truncated), (3, 2, true));
        assert!(precision_at_k(&ranked, |_| true, 0).is_err());
    }

    proptest! {
        #[test]
        fn flag_sets_shrink_as_tau_grows(
            cers in prop::collection::vec((0usize..12, 0usize..10), 0..40),
            t1 in 0.0f64..1.5,
            dt in 0.0f64..1.0,
        ) {
            let scores: Vec<SampleScore> = cers.iter().enumerate().map(|(i, &(e, l))| score(&format!("s{i:02}"), e, l)).collect();
            let ranked = rank_scores(scores);
            let lo = select_flagged(&ranked, t1);
            let hi = select_flagged(&ranked, t1 + dt);
            for s in &hi.flagged {
                prop_assert!(s.cer.value() > t1 + dt);
                prop_assert!(lo.flagged.contains(s));
            }
            prop_assert!(lo.flagged.windows(2).all(|w| w[0].rank < w[1].rank));
        }
    }
}
