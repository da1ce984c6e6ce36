//! Character-level edit distance, CER and page-level textual similarity.
//!
//! All comparisons operate on Unicode scalar values after canonical
//! composition (NFC). Diacritics are ordinary codepoints.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::{is_nfc, UnicodeNormalization};

/// A transcription: a sequence of Unicode scalar values in logical order.
///
/// Rust strings cannot hold unpaired surrogates, so that invariant is carried
/// by the type. [`Transcript::new`] composes the text canonically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct Transcript {
    text: String,
    normalized: bool,
}

impl Transcript {
    /// Builds a canonically composed transcript.
    pub fn new(text: impl AsRef<str>) -> Self {
        Self::raw(text).normalize()
    }

    /// Wraps text without normalizing it.
    pub fn raw(text: impl AsRef<str>) -> Self {
        Self {
            text: text.as_ref().to_owned(),
            normalized: false,
        }
    }

    pub fn empty() -> Self {
        Self {
            text: String::new(),
            normalized: true,
        }
    }

    pub fn normalize(self) -> Self {
        if self.normalized {
            return self;
        }
        let text = if is_nfc(&self.text) {
            self.text
        } else {
            self.text.nfc().collect()
        };
        Self {
            text,
            normalized: true,
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.text.chars()
    }

    /// Number of codepoints.
    pub fn len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn codepoints(&self) -> Vec<char> {
        self.text.chars().collect()
    }
}

impl From<String> for Transcript {
    fn from(text: String) -> Self {
        Transcript::new(text)
    }
}

impl From<&str> for Transcript {
    fn from(text: &str) -> Self {
        Transcript::new(text)
    }
}

impl From<Transcript> for String {
    fn from(t: Transcript) -> Self {
        t.text
    }
}

impl FromIterator<char> for Transcript {
    fn from_iter<I: IntoIterator<Item = char>>(iter: I) -> Self {
        Transcript::new(iter.into_iter().collect::<String>())
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Character error rate of a prediction against a reference.
///
/// `value = edits / max(1, ref_len)`; it can exceed 1 when the prediction is
/// much longer than the reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CerScore {
    pub edits: usize,
    pub ref_len: usize,
}

impl CerScore {
    pub fn new(edits: usize, ref_len: usize) -> Self {
        Self { edits, ref_len }
    }

    fn denominator(&self) -> usize {
        self.ref_len.max(1)
    }

    pub fn value(&self) -> f64 {
        self.edits as f64 / self.denominator() as f64
    }

    pub fn is_perfect(&self) -> bool {
        self.edits == 0
    }

    /// Exact rational comparison by value; `1/4` and `2/8` compare equal.
    pub fn cmp_value(&self, other: &Self) -> Ordering {
        let lhs = self.edits as u128 * other.denominator() as u128;
        let rhs = other.edits as u128 * self.denominator() as u128;
        lhs.cmp(&rhs)
    }
}

/// Levenshtein distance over codepoints with unit costs.
pub fn edit_distance(a: &Transcript, b: &Transcript) -> usize {
    levenshtein(&a.codepoints(), &b.codepoints())
}

/// Levenshtein distance over arbitrary symbol slices (two-row DP).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            let deletion = prev[j + 1] + 1;
            let insertion = curr[j] + 1;
            curr[j + 1] = substitution.min(deletion).min(insertion);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// CER of `pred` measured against `reference`.
pub fn cer(pred: &Transcript, reference: &Transcript) -> CerScore {
    CerScore::new(edit_distance(pred, reference), reference.len())
}

/// `1 - edit_distance / max(1, max(|a|, |b|))`, in `[0, 1]`.
pub fn page_similarity(a: &Transcript, b: &Transcript) -> f64 {
    let a = a.codepoints();
    let b = b.codepoints();
    let longest = a.len().max(b.len()).max(1);
    1.0 - levenshtein(&a, &b) as f64 / longest as f64
}
