use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::session::ReviewSession;
use super::verdict::ErrorCategory;
use crate::pipeline::Split;

/// Verdict tallies for one split (or all of them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTally {
    pub split_size: usize,
    pub flagged: usize,
    pub reviewed: usize,
    pub counts: BTreeMap<ErrorCategory, usize>,
    /// Percent of reviewed samples per category.
    pub percentages: BTreeMap<ErrorCategory, f64>,
    /// Confirmed label errors (every category but `valid_but_hard`).
    pub errors: usize,
    pub errors_percent_of_split: f64,
    /// `errors / reviewed`; absent before anything is reviewed.
    pub precision: Option<f64>,
}

impl SplitTally {
    pub fn from_counts(counts: BTreeMap<ErrorCategory, usize>, flagged: usize, split_size: usize) -> Self {
        let mut full: BTreeMap<ErrorCategory, usize> = ErrorCategory::ALL.iter().map(|&c| (c, 0)).collect();
        full.extend(counts);
        let reviewed: usize = full.values().sum();
        let errors: usize = full.iter().filter(|(c, _)| c.is_error()).map(|(_, n)| n).sum();
        let pct = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
        Self {
            split_size,
            flagged,
            reviewed,
            percentages: full.iter().map(|(&c, &n)| (c, pct(n, reviewed))).collect(),
            counts: full,
            errors,
            errors_percent_of_split: pct(errors, split_size),
            precision: (reviewed > 0).then(|| errors as f64 / reviewed as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub session_id: String,
    pub threshold: f64,
    pub pending: usize,
    pub splits: BTreeMap<Split, SplitTally>,
    pub overall: SplitTally,
}

impl ReviewReport {
    pub fn build(session: &ReviewSession) -> Self {
        let manifest = session.manifest();
        let mut per: BTreeMap<Split, BTreeMap<ErrorCategory, usize>> = BTreeMap::new();
        let mut flagged: BTreeMap<Split, usize> = BTreeMap::new();
        for f in &session.meta().flagged {
            *flagged.entry(f.split).or_default() += 1;
            if let Some(v) = session.effective(&f.sample_id) {
                *per.entry(f.split).or_default().entry(v.category).or_default() += 1;
            }
        }
        let splits = Split::ALL
            .iter()
            .map(|&s| {
                let t = SplitTally::from_counts(
                    per.get(&s).cloned().unwrap_or_default(),
                    flagged.get(&s).copied().unwrap_or(0),
                    manifest.split_count(s),
                );
                (s, t)
            })
            .collect();
        Self {
            session_id: session.id().to_string(),
            threshold: session.meta().threshold,
            pending: session.pending_count(),
            splits,
            overall: SplitTally::from_counts(session.counters(), session.meta().flagged.len(), manifest.len()),
        }
    }

    /// Aligned text table, one row per split plus a total row.
    pub fn to_table(&self) -> String {
        let mut header = vec!["split".to_string()];
        header.extend(ErrorCategory::ALL.iter().map(|c| c.as_str().to_string()));
        header.extend(["errors", "% of split", "precision"].map(String::from));
        let row = |name: &str, t: &SplitTally| {
            let mut r = vec![name.to_string()];
            r.extend(t.counts.values().map(|n| n.to_string()));
            r.push(t.errors.to_string());
            r.push(format!("{:.2}", t.errors_percent_of_split));
            r.push(t.precision.map_or("n/a".into(), |p| format!("{p:.3}")));
            r
        };
        let mut rows = vec![header];
        for (s, t) in &self.splits {
            rows.push(row(s.as_str(), t));
        }
        rows.push(row("total", &self.overall));
        let widths: Vec<usize> = (0..rows[0].len()).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).expect("write to string");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_four_shaped_row() {
        let counts = BTreeMap::from([
            (ErrorCategory::Transcription, 9),
            (ErrorCategory::Segmentation, 23),
            (ErrorCategory::Orientation, 7),
            (ErrorCategory::ScriptMismatch, 70),
            (ErrorCategory::Irrelevant, 17),
        ]);
        let t = SplitTally::from_counts(counts, 126, 1340);
        assert_eq!(t.errors, 126);
        assert_eq!(t.reviewed, 126);
        assert_eq!(t.precision, Some(1.0));
        assert!((t.errors_percent_of_split - 9.4).abs() < 0.01);
    }

    #[test]
    fn all_valid_but_hard_has_zero_precision() {
        let t = SplitTally::from_counts(BTreeMap::from([(ErrorCategory::ValidButHard, 5)]), 5, 50);
        assert_eq!(t.precision, Some(0.0));
        assert_eq!(SplitTally::from_counts(BTreeMap::new(), 0, 5).precision, None);
    }

    proptest! {
        #[test]
        fn counts_are_conserved(raw in prop::collection::vec(0usize..40, 6)) {
            let counts: BTreeMap<ErrorCategory, usize> = ErrorCategory::ALL.iter().copied().zip(raw.iter().copied()).collect();
            let t = SplitTally::from_counts(counts.clone(), 300, 1000);
            prop_assert_eq!(t.counts.values().sum::<usize>(), t.reviewed);
            prop_assert_eq!(&t.counts, &counts);
            prop_assert_eq!(t.errors, t.reviewed - counts[&ErrorCategory::ValidButHard]);
            if t.reviewed > 0 {
                prop_assert!((t.percentages.values().sum::<f64>() - 100.0).abs() < 1e-9);
            }
        }
    }
}
