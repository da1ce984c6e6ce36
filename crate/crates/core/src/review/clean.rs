use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::verdict::{Action, Verdict};
use super::ReviewError;
use crate::pipeline::{Manifest, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CleanSummary {
    pub source_entries: usize,
    pub entries: usize,
    pub removed: usize,
    pub relabeled: usize,
    pub fixed: usize,
    pub kept: usize,
    /// Flagged samples without a verdict, carried over unchanged.
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanedManifest {
    pub manifest: Manifest,
    pub summary: CleanSummary,
}

impl CleanedManifest {
    /// Writes the manifest; relative image paths are made absolute when the
    /// file lands outside the source manifest's directory.
    pub fn save(&self, path: &Path) -> Result<(), ReviewError> {
        let abs = |p: &Path| std::path::absolute(p).map_err(|e| ReviewError::io(p, e));
        let target_dir = abs(path.parent().unwrap_or(Path::new(".")))?;
        let base = abs(&self.manifest.base_dir)?;
        let mut out = self.manifest.clone();
        if target_dir != base {
            for e in &mut out.entries {
                if e.image.is_relative() {
                    e.image = base.join(&e.image);
                }
            }
            out.base_dir = target_dir;
        }
        out.save(path)?;
        Ok(())
    }
}

/// Applies the effective (last) verdict per sample to a copy of `manifest`.
/// Pending flagged samples are an error unless `allow_partial`.
pub fn build_cleaned_manifest(
    manifest: &Manifest,
    log: &[Verdict],
    flagged: &[String],
    allow_partial: bool,
) -> Result<CleanedManifest, ReviewError> {
    let mut effective: HashMap<&str, &Verdict> = HashMap::new();
    for v in log {
        effective.insert(v.sample_id.as_str(), v);
    }
    for id in effective.keys() {
        if manifest.get(id).is_none() {
            return Err(ReviewError::NotFound {
                kind: "sample in manifest",
                id: id.to_string(),
            });
        }
    }
    let pending: Vec<String> = flagged.iter().filter(|id| !effective.contains_key(id.as_str())).cloned().collect();
    if !pending.is_empty() && !allow_partial {
        return Err(ReviewError::Pending(pending));
    }
    let mut out = manifest.clone();
    out.entries.clear();
    out.stats = None;
    let mut summary = CleanSummary {
        source_entries: manifest.len(),
        pending: pending.len(),
        ..CleanSummary::default()
    };
    for e in &manifest.entries {
        let mut e = e.clone();
        match effective.get(e.id.as_str()) {
            None => {}
            Some(v) => match v.action {
                Action::Remove => {
                    summary.removed += 1;
                    continue;
                }
                Action::Relabel => {
                    e.text = v.corrected_text.clone().expect("validated relabel carries text");
                    summary.relabeled += 1;
                }
                Action::FixImage => {
                    e.image = v.corrected_image.clone().expect("validated fix carries an image");
                    if let Some(t) = &v.corrected_text {
                        e.text = t.clone();
                    }
                    summary.fixed += 1;
                }
                Action::Keep => summary.kept += 1,
            },
        }
        out.entries.push(e);
    }
    summary.entries = out.entries.len();
    out.validate().map_err(|e: PipelineError| ReviewError::Invalid(e.to_string()))?;
    Ok(CleanedManifest { manifest: out, summary })
}
