use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::ctc::Alphabet;
use crate::metrics::Transcript;

pub const MANIFEST_FORMAT: &str = "cerhv-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

/// Injected corruption kinds. `valid_but_hard` is a review outcome, never an
/// injected one, so it is absent here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCategory {
    Transcription,
    Segmentation,
    Orientation,
    ScriptMismatch,
    Irrelevant,
}

impl NoiseCategory {
    pub const ALL: [NoiseCategory; 5] = [
        NoiseCategory::Transcription,
        NoiseCategory::Segmentation,
        NoiseCategory::Orientation,
        NoiseCategory::ScriptMismatch,
        NoiseCategory::Irrelevant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseCategory::Transcription => "transcription",
            NoiseCategory::Segmentation => "segmentation",
            NoiseCategory::Orientation => "orientation",
            NoiseCategory::ScriptMismatch => "script_mismatch",
            NoiseCategory::Irrelevant => "irrelevant",
        }
    }
}

impl fmt::Display for NoiseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseTruth {
    pub category: NoiseCategory,
}

/// One text-line image with its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSample {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub image: PathBuf,
    pub text: Transcript,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseTruth>,
}

impl LineSample {
    pub fn is_noisy(&self) -> bool {
        self.noise.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestStats {
    pub avg_width: f64,
    pub avg_height: f64,
    pub max_text_len: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    alphabet: Alphabet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stats: Option<ManifestStats>,
}

/// A dataset: alphabet plus line samples. Image paths resolve against
/// `base_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub alphabet: Alphabet,
    pub entries: Vec<LineSample>,
    pub stats: Option<ManifestStats>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(alphabet: Alphabet, entries: Vec<LineSample>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            alphabet,
            entries,
            stats: None,
            base_dir: base_dir.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LineSample> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn get(&self, id: &str) -> Option<&LineSample> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn image_path(&self, sample: &LineSample) -> PathBuf {
        if sample.image.is_absolute() {
            sample.image.clone()
        } else {
            self.base_dir.join(&sample.image)
        }
    }

    pub fn load_image(&self, sample: &LineSample) -> Result<GrayImage, PipelineError> {
        load_gray(&self.image_path(sample))
    }

    /// Unique ids and every transcript codepoint in the alphabet.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(PipelineError::Invalid(format!("duplicate sample id {:?}", e.id)));
            }
            if let Some(c) = e.text.chars().find(|&c| !self.alphabet.contains(c)) {
                return Err(PipelineError::Invalid(format!(
                    "sample {:?}: codepoint {c:?} is not in the alphabet",
                    e.id
                )));
            }
        }
        Ok(())
    }

    /// Reads every image and records mean dimensions and the longest label.
    pub fn refresh_stats(&mut self) -> Result<ManifestStats, PipelineError> {
        let mut w = 0f64;
        let mut h = 0f64;
        for e in &self.entries {
            let (iw, ih) = image_dims(&self.image_path(e))?;
            w += iw as f64;
            h += ih as f64;
        }
        let n = self.entries.len().max(1) as f64;
        let stats = ManifestStats {
            avg_width: w / n,
            avg_height: h / n,
            max_text_len: self.entries.iter().map(|e| e.text.len()).max().unwrap_or(0),
            count: self.entries.len(),
        };
        self.stats = Some(stats);
        Ok(stats)
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            alphabet: self.alphabet.clone(),
            stats: self.stats,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        Self::from_lines(text.lines().map(|l| Ok(l.to_string())), base_dir.into())
    }

    fn from_lines(
        lines: impl Iterator<Item = std::io::Result<String>>,
        base_dir: PathBuf,
    ) -> Result<Self, PipelineError> {
        let mut header: Option<Header> = None;
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| PipelineError::io(&base_dir, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| PipelineError::Parse {
                line: i + 1,
                message: e.to_string(),
            };
            if header.is_none() {
                let h: Header = serde_json::from_str(&line).map_err(parse_err)?;
                if h.format != MANIFEST_FORMAT || h.version != MANIFEST_VERSION {
                    return Err(PipelineError::Parse {
                        line: i + 1,
                        message: format!("unsupported manifest {} v{}", h.format, h.version),
                    });
                }
                header = Some(h);
            } else {
                entries.push(serde_json::from_str::<LineSample>(&line).map_err(parse_err)?);
            }
        }
        let header = header.ok_or(PipelineError::Parse {
            line: 1,
            message: "missing header line".into(),
        })?;
        let manifest = Manifest {
            alphabet: header.alphabet,
            entries,
            stats: header.stats,
            base_dir,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_lines(BufReader::new(file).lines(), base)
    }

    /// Writes the manifest atomically (temp file then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        let tmp = path.with_extension("jsonl.tmp");
        let io = |e| PipelineError::io(path, e);
        {
            let mut f = std::fs::File::create(&tmp).map_err(io)?;
            f.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        std::fs::rename(&tmp, path).map_err(io)
    }
}

pub fn load_gray(path: &Path) -> Result<GrayImage, PipelineError> {
    let img = image::open(path).map_err(|e| PipelineError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_luma8())
}

pub fn save_gray(image: &GrayImage, path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    image.save(path).map_err(|e| PipelineError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn image_dims(path: &Path) -> Result<(u32, u32), PipelineError> {
    image::image_dimensions(path).map_err(|e| PipelineError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
