use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use image::imageops;
use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::ReviewError;
use crate::ctc::Alphabet;
use crate::metrics::Transcript;
use crate::pipeline::NoiseCategory;

/// The five label-error types plus the "valid but hard" outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Transcription,
    Segmentation,
    Orientation,
    ScriptMismatch,
    Irrelevant,
    ValidButHard,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 6] = [
        ErrorCategory::Transcription,
        ErrorCategory::Segmentation,
        ErrorCategory::Orientation,
        ErrorCategory::ScriptMismatch,
        ErrorCategory::Irrelevant,
        ErrorCategory::ValidButHard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Transcription => "transcription",
            ErrorCategory::Segmentation => "segmentation",
            ErrorCategory::Orientation => "orientation",
            ErrorCategory::ScriptMismatch => "script_mismatch",
            ErrorCategory::Irrelevant => "irrelevant",
            ErrorCategory::ValidButHard => "valid_but_hard",
        }
    }

    pub fn is_error(self) -> bool {
        self != ErrorCategory::ValidButHard
    }

    /// Action taken when a request names none.
    pub fn default_action(self) -> Option<Action> {
        match self {
            ErrorCategory::ScriptMismatch | ErrorCategory::Irrelevant => Some(Action::Remove),
            ErrorCategory::ValidButHard => Some(Action::Keep),
            _ => None,
        }
    }
}

impl From<NoiseCategory> for ErrorCategory {
    fn from(c: NoiseCategory) -> Self {
        match c {
            NoiseCategory::Transcription => ErrorCategory::Transcription,
            NoiseCategory::Segmentation => ErrorCategory::Segmentation,
            NoiseCategory::Orientation => ErrorCategory::Orientation,
            NoiseCategory::ScriptMismatch => ErrorCategory::ScriptMismatch,
            NoiseCategory::Irrelevant => ErrorCategory::Irrelevant,
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Relabel,
    FixImage,
    Remove,
    Keep,
}

/// Built-in image repair tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tool", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageFix {
    Rotate180,
    /// Keeps rows `top..bottom`.
    CropBand { top: u32, bottom: u32 },
}

impl ImageFix {
    pub fn apply(&self, image: &GrayImage) -> Result<GrayImage, ReviewError> {
        match *self {
            ImageFix::Rotate180 => Ok(imageops::rotate180(image)),
            ImageFix::CropBand { top, bottom } => {
                if top >= bottom || bottom > image.height() {
                    return Err(ReviewError::Invalid(format!(
                        "crop band {top}..{bottom} is outside 0..{}",
                        image.height()
                    )));
                }
                Ok(imageops::crop_imm(image, 0, top, image.width(), bottom - top).to_image())
            }
        }
    }
}

/// A verdict as submitted by a reviewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRequest {
    pub sample_id: String,
    pub category: ErrorCategory,
    #[serde(default)]
    pub action: Option<Action>,
    #[serde(default)]
    pub corrected_text: Option<String>,
    #[serde(default)]
    pub fix: Option<ImageFix>,
    #[serde(default)]
    pub reviewer: Option<String>,
}

/// One entry of the verdict log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub sample_id: String,
    pub category: ErrorCategory,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_text: Option<Transcript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fix: Option<ImageFix>,
    pub reviewer: String,
    /// Unix seconds.
    pub timestamp: u64,
}

impl Verdict {
    /// Same decision, ignoring who made it and when.
    pub fn same_decision(&self, other: &Verdict) -> bool {
        self.sample_id == other.sample_id
            && self.category == other.category
            && self.action == other.action
            && self.corrected_text == other.corrected_text
            && self.fix == other.fix
    }

    /// Type invariants of a verdict.
    pub fn validate(&self, alphabet: &Alphabet) -> Result<(), ReviewError> {
        let bad = |m: String| Err(ReviewError::Invalid(m));
        if self.category == ErrorCategory::ValidButHard && self.action != Action::Keep {
            return bad("valid_but_hard samples must be kept".into());
        }
        match self.action {
            Action::Relabel => match &self.corrected_text {
                None => return bad("relabel requires corrected_text".into()),
                Some(t) if t.is_empty() => return bad("relabel requires a non-empty corrected_text".into()),
                _ => {}
            },
            Action::FixImage => {
                if self.corrected_image.is_none() && self.fix.is_none() {
                    return bad("fix_image requires a fix tool or corrected image".into());
                }
            }
            Action::Remove | Action::Keep => {
                if self.corrected_text.is_some() || self.fix.is_some() || self.corrected_image.is_some() {
                    return bad(format!("{:?} takes no corrections", self.action).to_lowercase());
                }
            }
        }
        if self.action != Action::FixImage && self.fix.is_some() {
            return bad("fix tools only apply to fix_image".into());
        }
        if let Some(t) = &self.corrected_text {
            if let Some(c) = t.chars().find(|&c| !alphabet.contains(c)) {
                return bad(format!("corrected_text contains {c:?}, which is not in the alphabet"));
            }
        }
        Ok(())
    }
}

impl VerdictRequest {
    /// Category only; the action falls back to the category default.
    pub fn new(sample_id: impl Into<String>, category: ErrorCategory) -> Self {
        Self {
            sample_id: sample_id.into(),
            category,
            action: None,
            corrected_text: None,
            fix: None,
            reviewer: None,
        }
    }

    /// Resolves the default action and stamps reviewer and time. Does not
    /// validate.
    pub fn into_verdict(self, timestamp: u64) -> Result<Verdict, ReviewError> {
        let action = match self.action.or_else(|| self.category.default_action()) {
            Some(a) => a,
            None => {
                return Err(ReviewError::Invalid(format!("category {} needs an explicit action", self.category)));
            }
        };
        Ok(Verdict {
            sample_id: self.sample_id,
            category: self.category,
            action,
            corrected_text: self.corrected_text.map(Transcript::new),
            corrected_image: None,
            fix: self.fix,
            reviewer: self.reviewer.unwrap_or_default(),
            timestamp,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alphabet() -> Alphabet {
        Alphabet::new("abc".chars()).unwrap()
    }

    fn request(category: ErrorCategory, action: Option<Action>, text: Option<&str>) -> VerdictRequest {
        VerdictRequest {
            sample_id: "s".into(),
            category,
            action,
            corrected_text: text.map(str::to_string),
            fix: None,
            reviewer: None,
        }
    }

    fn check(r: VerdictRequest) -> Result<Verdict, ReviewError> {
        let v = r.into_verdict(0)?;
        v.validate(&alphabet())?;
        Ok(v)
    }

    #[test]
    fn invariants() {
        assert!(check(request(ErrorCategory::Transcription, Some(Action::Relabel), Some("ab"))).is_ok());
        assert!(check(request(ErrorCategory::Transcription, Some(Action::Relabel), None)).is_err());
        assert!(check(request(ErrorCategory::Transcription, Some(Action::Relabel), Some(""))).is_err());
        assert!(check(request(ErrorCategory::Transcription, Some(Action::Relabel), Some("xyz"))).is_err());
        assert!(check(request(ErrorCategory::ValidButHard, Some(Action::Remove), None)).is_err());
        assert!(check(request(ErrorCategory::Orientation, Some(Action::FixImage), None)).is_err());
        assert!(check(request(ErrorCategory::Orientation, None, None)).is_err());
        assert!(check(request(ErrorCategory::Segmentation, Some(Action::Remove), Some("a"))).is_err());
    }

    #[test]
    fn defaults() {
        assert_eq!(check(request(ErrorCategory::Irrelevant, None, None)).unwrap().action, Action::Remove);
        assert_eq!(check(request(ErrorCategory::ScriptMismatch, None, None)).unwrap().action, Action::Remove);
        assert_eq!(check(request(ErrorCategory::ValidButHard, None, None)).unwrap().action, Action::Keep);
        assert_eq!(
            check(request(ErrorCategory::Irrelevant, Some(Action::Keep), None)).unwrap().action,
            Action::Keep
        );
    }

    #[test]
    fn tokens_are_lowercase() {
        assert_eq!(serde_json::to_string(&ErrorCategory::ValidButHard).unwrap(), "\"valid_but_hard\"");
        assert_eq!(serde_json::to_string(&Action::FixImage).unwrap(), "\"fix_image\"");
        let fix: ImageFix = serde_json::from_str(r#"{"tool":"crop_band","top":2,"bottom":9}"#).unwrap();
        assert_eq!(fix, ImageFix::CropBand { top: 2, bottom: 9 });
        for c in ErrorCategory::ALL {
            assert_eq!(c.as_str().parse::<ErrorCategory>().unwrap(), c);
        }
    }

    #[test]
    fn fix_tools() {
        let img = GrayImage::from_fn(6, 4, |x, y| image::Luma([(x * 10 + y) as u8]));
        assert_eq!(ImageFix::Rotate180.apply(&ImageFix::Rotate180.apply(&img).unwrap()).unwrap(), img);
        let band = ImageFix::CropBand { top: 1, bottom: 3 }.apply(&img).unwrap();
        assert_eq!(band.dimensions(), (6, 2));
        assert_eq!(band.get_pixel(2, 0).0[0], 21);
        assert!(ImageFix::CropBand { top: 3, bottom: 3 }.apply(&img).is_err());
    }
}
