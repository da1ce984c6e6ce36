use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::clean::{build_cleaned_manifest, CleanedManifest};
use super::report::ReviewReport;
use super::verdict::{ErrorCategory, Verdict, VerdictRequest};
use super::ReviewError;
use crate::detector::{select_flagged, SampleScore};
use crate::pipeline::{save_gray, Manifest, Split};

pub const SESSION_FILE: &str = "session.json";
pub const VERDICT_LOG: &str = "verdicts.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedSample {
    pub sample_id: String,
    pub rank: usize,
    pub split: Split,
    pub label: String,
    pub prediction: String,
    pub cer: f64,
}

/// Persisted part of a session; everything else is replayed from the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionMeta {
    pub session_id: String,
    pub manifest: PathBuf,
    pub threshold: f64,
    /// In detector rank order.
    pub flagged: Vec<FlaggedSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleStatus {
    Pending,
    Done,
}

/// What a reviewer sees for one flagged sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBundle {
    pub sample_id: String,
    pub rank: usize,
    pub split: Split,
    pub label: String,
    pub prediction: String,
    pub cer: f64,
    pub status: SampleStatus,
    pub image_url: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub accepted: bool,
    /// The submission repeated the sample's effective decision.
    pub duplicate: bool,
    pub pending: usize,
}

/// Open review session: metadata, source manifest and the replayed log.
#[derive(Debug)]
pub struct ReviewSession {
    dir: PathBuf,
    meta: SessionMeta,
    manifest: Manifest,
    index: HashMap<String, usize>,
    log: Vec<Verdict>,
    effective: HashMap<String, Verdict>,
    writer: File,
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn file_stem_for(id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{clean}-{:08x}", fnv1a(id.as_bytes(), 0xcbf2_9ce4_8422_2325) as u32)
}

impl ReviewSession {
    /// Creates the session for `(manifest, scores, tau)` under `root`, or
    /// reopens it when those inputs were already turned into a session.
    pub fn create(root: &Path, manifest_path: &Path, scores: &[SampleScore], tau: f64) -> Result<Self, ReviewError> {
        let manifest_path = std::path::absolute(manifest_path).map_err(|e| ReviewError::io(manifest_path, e))?;
        let manifest = Manifest::load(&manifest_path)?;
        let by_id: HashMap<&str, Split> = manifest.entries.iter().map(|e| (e.id.as_str(), e.split)).collect();
        let labels: HashMap<&str, &str> = manifest.entries.iter().map(|e| (e.id.as_str(), e.text.as_str())).collect();
        let flags = select_flagged(scores, tau);
        let mut flagged = Vec::with_capacity(flags.flagged.len());
        for s in &flags.flagged {
            let split = *by_id.get(s.sample_id.as_str()).ok_or_else(|| ReviewError::NotFound {
                kind: "sample in manifest",
                id: s.sample_id.clone(),
            })?;
            flagged.push(FlaggedSample {
                sample_id: s.sample_id.clone(),
                rank: s.rank,
                split,
                label: labels[s.sample_id.as_str()].to_string(),
                prediction: s.prediction.as_str().to_string(),
                cer: s.cer.value(),
            });
        }
        let mut h = fnv1a(manifest_path.to_string_lossy().as_bytes(), 0xcbf2_9ce4_8422_2325);
        h = fnv1a(&tau.to_bits().to_le_bytes(), h);
        for f in &flagged {
            h = fnv1a(f.sample_id.as_bytes(), h);
            h = fnv1a(&f.cer.to_bits().to_le_bytes(), h);
        }
        let session_id = format!("{h:016x}");
        let dir = root.join(&session_id);
        if dir.join(SESSION_FILE).exists() {
            return Self::open(&dir);
        }
        fs::create_dir_all(&dir).map_err(|e| ReviewError::io(&dir, e))?;
        let meta = SessionMeta {
            session_id,
            manifest: manifest_path,
            threshold: tau,
            flagged,
        };
        let path = dir.join(SESSION_FILE);
        let tmp = dir.join("session.json.tmp");
        let json = serde_json::to_vec_pretty(&meta).expect("session metadata serializes");
        {
            let mut f = File::create(&tmp).map_err(|e| ReviewError::io(&tmp, e))?;
            f.write_all(&json).and_then(|_| f.sync_all()).map_err(|e| ReviewError::io(&tmp, e))?;
        }
        fs::rename(&tmp, &path).map_err(|e| ReviewError::io(&path, e))?;
        Self::open(&dir)
    }

    /// Reopens a persisted session, replaying its verdict log. A partial
    /// trailing line (a write cut short by a crash) is discarded.
    pub fn open(dir: &Path) -> Result<Self, ReviewError> {
        let meta_path = dir.join(SESSION_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| ReviewError::io(&meta_path, e))?;
        let meta: SessionMeta = serde_json::from_str(&text).map_err(|e| ReviewError::CorruptLog {
            line: 0,
            message: format!("{}: {e}", meta_path.display()),
        })?;
        let manifest = Manifest::load(&meta.manifest)?;
        let index = meta.flagged.iter().enumerate().map(|(i, f)| (f.sample_id.clone(), i)).collect();
        let log_path = dir.join(VERDICT_LOG);
        let bytes = match fs::read(&log_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(ReviewError::io(&log_path, e)),
        };
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        if complete < bytes.len() {
            log::warn!("discarding {} bytes of an unfinished verdict", bytes.len() - complete);
        }
        let mut log = Vec::new();
        for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let v: Verdict = serde_json::from_slice(line).map_err(|e| ReviewError::CorruptLog {
                line: i + 1,
                message: e.to_string(),
            })?;
            log.push(v);
        }
        let writer = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(false)
            .open(&log_path)
            .map_err(|e| ReviewError::io(&log_path, e))?;
        writer.set_len(complete as u64).map_err(|e| ReviewError::io(&log_path, e))?;
        let mut session = Self {
            dir: dir.to_path_buf(),
            meta,
            manifest,
            index,
            log: Vec::new(),
            effective: HashMap::new(),
            writer,
        };
        for v in log {
            session.record(v);
        }
        use std::io::Seek;
        session
            .writer
            .seek(std::io::SeekFrom::End(0))
            .map_err(|e| ReviewError::io(&log_path, e))?;
        Ok(session)
    }

    fn record(&mut self, v: Verdict) {
        self.effective.insert(v.sample_id.clone(), v.clone());
        self.log.push(v);
    }

    pub fn id(&self) -> &str {
        &self.meta.session_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Every verdict in log order, superseded ones included.
    pub fn log(&self) -> &[Verdict] {
        &self.log
    }

    pub fn effective(&self, sample_id: &str) -> Option<&Verdict> {
        self.effective.get(sample_id)
    }

    pub fn effective_count(&self) -> usize {
        self.effective.len()
    }

    pub fn pending_count(&self) -> usize {
        self.meta.flagged.len() - self.effective.len()
    }

    /// Pending sample ids in rank order.
    pub fn pending_ids(&self) -> Vec<&str> {
        self.meta
            .flagged
            .iter()
            .filter(|f| !self.effective.contains_key(&f.sample_id))
            .map(|f| f.sample_id.as_str())
            .collect()
    }

    /// Effective verdicts per category.
    pub fn counters(&self) -> BTreeMap<ErrorCategory, usize> {
        let mut c: BTreeMap<ErrorCategory, usize> = ErrorCategory::ALL.iter().map(|&k| (k, 0)).collect();
        for v in self.effective.values() {
            *c.get_mut(&v.category).expect("all categories present") += 1;
        }
        c
    }

    fn bundle(&self, f: &FlaggedSample) -> SampleBundle {
        let verdict = self.effective.get(&f.sample_id).cloned();
        SampleBundle {
            sample_id: f.sample_id.clone(),
            rank: f.rank,
            split: f.split,
            label: f.label.clone(),
            prediction: f.prediction.clone(),
            cer: f.cer,
            status: if verdict.is_some() { SampleStatus::Done } else { SampleStatus::Pending },
            image_url: format!("/images/{}?session={}", f.sample_id, self.meta.session_id),
            verdict,
        }
    }

    /// Highest-ranked sample without an effective verdict.
    pub fn next_pending(&self) -> Option<SampleBundle> {
        self.meta
            .flagged
            .iter()
            .find(|f| !self.effective.contains_key(&f.sample_id))
            .map(|f| self.bundle(f))
    }

    /// Rank-ordered page of samples, optionally filtered by status, and the
    /// filtered total.
    pub fn samples(&self, status: Option<SampleStatus>, offset: usize, limit: usize) -> (Vec<SampleBundle>, usize) {
        let all: Vec<SampleBundle> = self
            .meta
            .flagged
            .iter()
            .map(|f| self.bundle(f))
            .filter(|b| status.is_none_or(|s| b.status == s))
            .collect();
        let total = all.len();
        (all.into_iter().skip(offset).take(limit).collect(), total)
    }

    pub fn is_flagged(&self, sample_id: &str) -> bool {
        self.index.contains_key(sample_id)
    }

    /// Validates, applies any fix tool, and appends the verdict durably
    /// before returning.
    pub fn submit(&mut self, request: VerdictRequest) -> Result<SubmitOutcome, ReviewError> {
        if !self.is_flagged(&request.sample_id) {
            return Err(ReviewError::NotFound {
                kind: "flagged sample",
                id: request.sample_id,
            });
        }
        let mut verdict = request.into_verdict(now())?;
        verdict.validate(&self.manifest.alphabet)?;
        if let Some(prev) = self.effective.get(&verdict.sample_id) {
            if prev.same_decision(&verdict) {
                return Ok(SubmitOutcome {
                    accepted: true,
                    duplicate: true,
                    pending: self.pending_count(),
                });
            }
        }
        if let Some(fix) = verdict.fix {
            let sample = self.manifest.get(&verdict.sample_id).expect("flagged samples are in the manifest");
            let fixed = fix.apply(&self.manifest.load_image(sample)?)?;
            let path = self
                .dir
                .join("fixed")
                .join(format!("{}-{}.png", file_stem_for(&verdict.sample_id), self.log.len()));
            save_gray(&fixed, &path)?;
            verdict.corrected_image = Some(path);
        }
        let mut line = serde_json::to_vec(&verdict).expect("verdict serializes");
        line.push(b'\n');
        let log_path = self.dir.join(VERDICT_LOG);
        self.writer
            .write_all(&line)
            .and_then(|_| self.writer.sync_data())
            .map_err(|e| ReviewError::io(&log_path, e))?;
        self.record(verdict);
        Ok(SubmitOutcome {
            accepted: true,
            duplicate: false,
            pending: self.pending_count(),
        })
    }

    pub fn report(&self) -> ReviewReport {
        ReviewReport::build(self)
    }

    pub fn cleaned_manifest(&self, allow_partial: bool) -> Result<CleanedManifest, ReviewError> {
        let flagged: Vec<String> = self.meta.flagged.iter().map(|f| f.sample_id.clone()).collect();
        build_cleaned_manifest(&self.manifest, &self.log, &flagged, allow_partial)
    }

    /// Builds D' and writes it into the session directory.
    pub fn write_cleaned_manifest(&self, allow_partial: bool) -> Result<(PathBuf, CleanedManifest), ReviewError> {
        let cleaned = self.cleaned_manifest(allow_partial)?;
        let path = self.dir.join("cleaned.jsonl");
        cleaned.save(&path)?;
        Ok((path, cleaned))
    }
}
