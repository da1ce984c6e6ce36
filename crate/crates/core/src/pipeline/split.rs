use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Split};
use super::PipelineError;
use crate::metrics::{page_similarity, Transcript};

/// All line transcripts of one page, concatenated in reading order.
#[derive(Debug, Clone, PartialEq)]
pub struct PageText {
    pub page_id: String,
    pub text: Transcript,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub similarity_threshold: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            similarity_threshold: 0.85,
            seed: 0,
        }
    }
}

/// Similar pair above the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub a: String,
    pub b: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSplit {
    pub assignments: BTreeMap<String, Split>,
    /// `(dropped, kept)` exact duplicates.
    pub dropped_duplicates: Vec<(String, String)>,
    /// Pages similar to some other page; these only ever train.
    pub conflicts: Vec<Conflict>,
}

impl PageSplit {
    pub fn pages_in(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignments.iter().filter(move |(_, &s)| s == split).map(|(p, _)| p.as_str())
    }
}

fn similarity_matrix(pages: &[&PageText]) -> Vec<Vec<f64>> {
    let n = pages.len();
    let mut sim = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = page_similarity(&pages[i].text, &pages[j].text);
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    sim
}

/// Page-level split in which evaluation pages are drawn only from pages whose
/// similarity to every other surviving page is at most the threshold.
pub fn split_pages(pages: &[PageText], config: &SplitConfig) -> Result<PageSplit, PipelineError> {
    if pages.len() < 3 {
        return Err(PipelineError::Invalid("page split needs at least 3 pages".into()));
    }
    let ratios = [config.train, config.val, config.test];
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(PipelineError::Invalid("split ratios must be in [0,1] and sum to 1".into()));
    }
    let mut ids = HashSet::new();
    let mut seen: HashMap<&str, &str> = HashMap::new();
    let mut dropped = Vec::new();
    let mut survivors: Vec<&PageText> = Vec::new();
    for p in pages {
        if !ids.insert(p.page_id.as_str()) {
            return Err(PipelineError::Invalid(format!("duplicate page id {:?}", p.page_id)));
        }
        if let Some(&kept) = seen.get(p.text.as_str()) {
            dropped.push((p.page_id.clone(), kept.to_string()));
        } else {
            seen.insert(p.text.as_str(), p.page_id.as_str());
            survivors.push(p);
        }
    }
    let n = survivors.len();
    let sim = similarity_matrix(&survivors);
    let mut conflicts = Vec::new();
    let mut isolated = Vec::new();
    for i in 0..n {
        let mut alone = true;
        for j in 0..n {
            if i != j && sim[i][j] > config.similarity_threshold {
                alone = false;
                if i < j {
                    conflicts.push(Conflict {
                        a: survivors[i].page_id.clone(),
                        b: survivors[j].page_id.clone(),
                        similarity: sim[i][j],
                    });
                }
            }
        }
        if alone {
            isolated.push(i);
        }
    }
    let n_val = (n as f64 * config.val).round() as usize;
    let n_test = (n as f64 * config.test).round() as usize;
    if n_val + n_test > isolated.len() {
        let graph: Vec<String> = conflicts
            .iter()
            .map(|c| format!("{} -- {} ({:.3})", c.a, c.b, c.similarity))
            .collect();
        return Err(PipelineError::InsufficientPages {
            needed: n_val + n_test,
            available: isolated.len(),
            conflicts: graph,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    isolated.shuffle(&mut rng);
    let mut assignments: BTreeMap<String, Split> =
        survivors.iter().map(|p| (p.page_id.clone(), Split::Train)).collect();
    for (k, &i) in isolated.iter().take(n_val + n_test).enumerate() {
        let split = if k < n_val { Split::Val } else { Split::Test };
        assignments.insert(survivors[i].page_id.clone(), split);
    }
    Ok(PageSplit {
        assignments,
        dropped_duplicates: dropped,
        conflicts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub pairs_checked: usize,
    pub max_similarity: f64,
    pub violations: Vec<Conflict>,
}

/// Independent post-hoc check of every (val or test page, train page) pair.
pub fn audit_split(pages: &[PageText], split: &PageSplit, threshold: f64) -> LeakageAudit {
    let by_id: HashMap<&str, &PageText> = pages.iter().map(|p| (p.page_id.as_str(), p)).collect();
    let train: Vec<&PageText> = split.pages_in(Split::Train).filter_map(|p| by_id.get(p).copied()).collect();
    let mut audit = LeakageAudit {
        pairs_checked: 0,
        max_similarity: 0.0,
        violations: Vec::new(),
    };
    for eval_id in split.pages_in(Split::Val).chain(split.pages_in(Split::Test)) {
        let Some(eval) = by_id.get(eval_id) else { continue };
        for t in &train {
            let s = page_similarity(&eval.text, &t.text);
            audit.pairs_checked += 1;
            audit.max_similarity = audit.max_similarity.max(s);
            if s > threshold {
                audit.violations.push(Conflict {
                    a: eval.page_id.clone(),
                    b: t.page_id.clone(),
                    similarity: s,
                });
            }
        }
    }
    audit
}

/// Concatenated transcripts per page, pages ordered by first appearance.
pub fn page_texts(manifest: &Manifest) -> Vec<PageText> {
    let mut order: Vec<String> = Vec::new();
    let mut texts: HashMap<String, String> = HashMap::new();
    for e in &manifest.entries {
        let Some(page) = &e.page else { continue };
        texts
            .entry(page.clone())
            .or_insert_with(|| {
                order.push(page.clone());
                String::new()
            })
            .push_str(e.text.as_str());
    }
    order
        .into_iter()
        .map(|p| {
            let text = Transcript::new(&texts[&p]);
            PageText { page_id: p, text }
        })
        .collect()
}

/// Tags every line with its page's split; lines of dropped duplicate pages
/// are removed. Lines without a page are an error.
pub fn apply_page_split(manifest: &Manifest, split: &PageSplit) -> Result<Manifest, PipelineError> {
    let mut out = manifest.clone();
    out.entries.clear();
    for e in &manifest.entries {
        let page = e
            .page
            .as_ref()
            .ok_or_else(|| PipelineError::Invalid(format!("sample {:?} has no page id", e.id)))?;
        if let Some(&s) = split.assignments.get(page) {
            let mut e = e.clone();
            e.split = s;
            out.entries.push(e);
        }
    }
    Ok(out)
}
