//! Connectionist temporal classification.
//!
//! The extended alphabet places the blank at index 0 and symbol `i` of the
//! alphabet at index `i + 1`. Likelihoods are computed in log space with the
//! standard forward recursion over the blank-interleaved target; gradients
//! come from forward-backward posteriors.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::metrics::Transcript;

pub const BLANK: usize = 0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CtcError {
    #[error("codepoint {0:?} is not in the alphabet")]
    OutOfAlphabet(char),
    #[error("duplicate symbol {0:?} in alphabet")]
    DuplicateSymbol(char),
    #[error("target needs at least {required} frames but only {frames} are available")]
    Infeasible { required: usize, frames: usize },
    #[error("expected {expected} classes per frame, got {got}")]
    ClassMismatch { expected: usize, got: usize },
    #[error("matrix of {frames}x{classes} cannot hold {len} values")]
    Shape {
        frames: usize,
        classes: usize,
        len: usize,
    },
    #[error("frame {frame} is not a log-distribution (probabilities sum to {sum})")]
    NotNormalized { frame: usize, sum: f64 },
    #[error("path entry {entry} at frame {frame} is outside the extended alphabet")]
    InvalidPath { frame: usize, entry: usize },
    #[error("brute-force enumeration needs T <= 8 and at most 4 classes (got T={frames}, {classes} classes)")]
    EnumerationBound { frames: usize, classes: usize },
}

/// Ordered target symbols plus the implicit blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<char>", into = "Vec<char>")]
pub struct Alphabet {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl Alphabet {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self, CtcError> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if index.insert(c, i + 1).is_some() {
                return Err(CtcError::DuplicateSymbol(c));
            }
        }
        Ok(Self { symbols, index })
    }

    /// Sorted set of every codepoint appearing in `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a Transcript>) -> Self {
        let mut set: Vec<char> = texts.into_iter().flat_map(|t| t.codepoints()).collect();
        set.sort_unstable();
        set.dedup();
        Self::new(set).expect("deduplicated")
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    /// Number of target symbols, excluding the blank.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// `|Σ| + 1`.
    pub fn extended_size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    /// Extended index of `c`.
    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Symbol at an extended index; `None` for the blank or out of range.
    pub fn symbol(&self, extended_index: usize) -> Option<char> {
        extended_index
            .checked_sub(1)
            .and_then(|i| self.symbols.get(i))
            .copied()
    }

    pub fn encode(&self, text: &Transcript) -> Result<Vec<usize>, CtcError> {
        text.chars()
            .map(|c| self.index_of(c).ok_or(CtcError::OutOfAlphabet(c)))
            .collect()
    }

    /// Maps extended indices to text, skipping blanks.
    pub fn decode(&self, labels: &[usize]) -> Transcript {
        labels.iter().filter_map(|&i| self.symbol(i)).collect()
    }

    pub fn check(&self, text: &Transcript) -> Result<(), CtcError> {
        match text.chars().find(|c| !self.contains(*c)) {
            Some(c) => Err(CtcError::OutOfAlphabet(c)),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<char>> for Alphabet {
    type Error = CtcError;

    fn try_from(symbols: Vec<char>) -> Result<Self, Self::Error> {
        Alphabet::new(symbols)
    }
}

impl From<Alphabet> for Vec<char> {
    fn from(a: Alphabet) -> Self {
        a.symbols
    }
}

/// Row-major `frames x classes` matrix of reals (logits or gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    frames: usize,
    classes: usize,
    values: Vec<f64>,
}

impl FrameMatrix {
    pub fn new(frames: usize, classes: usize, values: Vec<f64>) -> Result<Self, CtcError> {
        if values.len() != frames * classes {
            return Err(CtcError::Shape {
                frames,
                classes,
                len: values.len(),
            });
        }
        Ok(Self {
            frames,
            classes,
            values,
        })
    }

    pub fn zeros(frames: usize, classes: usize) -> Self {
        Self {
            frames,
            classes,
            values: vec![0.0; frames * classes],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.classes + k]
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&self) -> FrameLogProbs {
        let mut values = self.values.clone();
        for row in values.chunks_mut(self.classes) {
            log_softmax_in_place(row);
        }
        FrameLogProbs {
            frames: self.frames,
            classes: self.classes,
            values,
        }
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

/// Per-frame log-probabilities over the extended alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLogProbs {
    frames: usize,
    classes: usize,
    values: Vec<f64>,
}

impl FrameLogProbs {
    const ROW_TOLERANCE: f64 = 1e-6;

    pub fn new(frames: usize, classes: usize, values: Vec<f64>) -> Result<Self, CtcError> {
        if frames == 0 || classes == 0 || values.len() != frames * classes {
            return Err(CtcError::Shape {
                frames,
                classes,
                len: values.len(),
            });
        }
        for (frame, row) in values.chunks(classes).enumerate() {
            let sum: f64 = row.iter().map(|v| v.exp()).sum();
            if !((sum - 1.0).abs() <= Self::ROW_TOLERANCE) {
                return Err(CtcError::NotNormalized { frame, sum });
            }
        }
        Ok(Self {
            frames,
            classes,
            values,
        })
    }

    /// Builds from linear probabilities (rows must sum to one).
    pub fn from_probs(frames: usize, classes: usize, probs: &[f64]) -> Result<Self, CtcError> {
        Self::new(frames, classes, probs.iter().map(|p| p.ln()).collect())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.classes + k]
    }

    /// Per-frame argmax; ties go to the lowest class index.
    pub fn argmax_path(&self) -> Path {
        let entries = self
            .values
            .chunks(self.classes)
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        Path { entries }
    }

    fn check_classes(&self, alphabet: &Alphabet) -> Result<(), CtcError> {
        if self.classes != alphabet.extended_size() {
            return Err(CtcError::ClassMismatch {
                expected: alphabet.extended_size(),
                got: self.classes,
            });
        }
        Ok(())
    }
}

/// An alignment path over the extended alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    pub entries: Vec<usize>,
}

impl Path {
    pub fn new(entries: Vec<usize>) -> Self {
        Self { entries }
    }

    pub fn validate(&self, alphabet: &Alphabet) -> Result<(), CtcError> {
        match self
            .entries
            .iter()
            .position(|&e| e >= alphabet.extended_size())
        {
            Some(frame) => Err(CtcError::InvalidPath {
                frame,
                entry: self.entries[frame],
            }),
            None => Ok(()),
        }
    }
}

/// Merge adjacent repeats, then drop blanks.
pub fn collapse_labels(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// The collapse function B mapping a path to its transcript.
pub fn collapse(path: &Path, alphabet: &Alphabet) -> Result<Transcript, CtcError> {
    path.validate(alphabet)?;
    Ok(alphabet.decode(&collapse_labels(&path.entries)))
}

/// Minimum number of frames any path collapsing to `labels` needs.
pub fn required_frames(labels: &[usize]) -> usize {
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    labels.len() + repeats
}

/// Result of a likelihood query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CtcLikelihood {
    LogProb(f64),
    /// The target cannot be emitted within the available frames.
    NoValidPath,
}

impl CtcLikelihood {
    pub fn log_prob(&self) -> f64 {
        match *self {
            CtcLikelihood::LogProb(v) => v,
            CtcLikelihood::NoValidPath => f64::NEG_INFINITY,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, CtcLikelihood::LogProb(_))
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn interleave_blanks(labels: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK);
    for &l in labels {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

/// Whether state `s` may be entered directly from `s - 2`.
fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

/// Forward variables: `alpha[t][s]` is the log-probability of all path
/// prefixes over frames `0..=t` that end in state `s`.
fn forward(log_probs: &[f64], classes: usize, ext: &[usize]) -> Vec<f64> {
    let frames = log_probs.len() / classes;
    let states = ext.len();
    let mut alpha = vec![f64::NEG_INFINITY; frames * states];
    alpha[0] = log_probs[ext[0]];
    if states > 1 {
        alpha[1] = log_probs[ext[1]];
    }
    for t in 1..frames {
        let emit = &log_probs[t * classes..(t + 1) * classes];
        let (prev, cur) = alpha.split_at_mut(t * states);
        let prev = &prev[(t - 1) * states..];
        for s in 0..states {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(ext, s) {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == f64::NEG_INFINITY {
                acc
            } else {
                acc + emit[ext[s]]
            };
        }
    }
    alpha
}

/// Backward variables: `beta[t][s]` is the log-probability of completing a
/// valid path over frames `t+1..T` given state `s` at frame `t` (emission at
/// `t` excluded).
fn backward(log_probs: &[f64], classes: usize, ext: &[usize]) -> Vec<f64> {
    let frames = log_probs.len() / classes;
    let states = ext.len();
    let mut beta = vec![f64::NEG_INFINITY; frames * states];
    let last = (frames - 1) * states;
    beta[last + states - 1] = 0.0;
    if states > 1 {
        beta[last + states - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        let emit = &log_probs[(t + 1) * classes..(t + 2) * classes];
        let (cur, next) = beta.split_at_mut((t + 1) * states);
        let cur = &mut cur[t * states..];
        for s in 0..states {
            let mut acc = next[s] + emit[ext[s]];
            if s + 1 < states {
                acc = log_add(acc, next[s + 1] + emit[ext[s + 1]]);
            }
            if s + 2 < states && can_skip(ext, s + 2) {
                acc = log_add(acc, next[s + 2] + emit[ext[s + 2]]);
            }
            cur[s] = acc;
        }
    }
    beta
}

fn final_log_prob(alpha: &[f64], frames: usize, states: usize) -> f64 {
    let last = &alpha[(frames - 1) * states..];
    if states > 1 {
        log_add(last[states - 1], last[states - 2])
    } else {
        last[0]
    }
}

/// Log-likelihood of an encoded label sequence; `None` when infeasible.
pub fn label_log_likelihood(log_probs: &FrameLogProbs, labels: &[usize]) -> Option<f64> {
    if required_frames(labels) > log_probs.frames {
        return None;
    }
    let ext = interleave_blanks(labels);
    let alpha = forward(&log_probs.values, log_probs.classes, &ext);
    Some(final_log_prob(&alpha, log_probs.frames, ext.len()))
}

/// `log P(target | x)`, summed over every alignment path collapsing to the
/// target.
pub fn ctc_log_likelihood(
    probs: &FrameLogProbs,
    target: &Transcript,
    alphabet: &Alphabet,
) -> Result<CtcLikelihood, CtcError> {
    probs.check_classes(alphabet)?;
    let labels = alphabet.encode(target)?;
    Ok(match label_log_likelihood(probs, &labels) {
        Some(lp) if lp > f64::NEG_INFINITY => CtcLikelihood::LogProb(lp),
        _ => CtcLikelihood::NoValidPath,
    })
}

/// Loss and gradient of `-log P(labels | x)` with respect to the logits that
/// produced `log_probs` through a row-wise softmax.
///
/// `log_probs` is a row-major `T x C` matrix of log-softmax outputs.
pub fn loss_and_logit_gradient(
    log_probs: &[f64],
    classes: usize,
    labels: &[usize],
) -> Result<(f64, Vec<f64>), CtcError> {
    let frames = log_probs.len() / classes;
    let required = required_frames(labels);
    if frames == 0 || required > frames {
        return Err(CtcError::Infeasible { required, frames });
    }
    let ext = interleave_blanks(labels);
    let states = ext.len();
    let alpha = forward(log_probs, classes, &ext);
    let beta = backward(log_probs, classes, &ext);
    let log_p = final_log_prob(&alpha, frames, states);
    if !log_p.is_finite() {
        return Err(CtcError::Infeasible { required, frames });
    }

    let mut grad: Vec<f64> = log_probs.iter().map(|v| v.exp()).collect();
    for t in 0..frames {
        let row = &mut grad[t * classes..(t + 1) * classes];
        for s in 0..states {
            let a = alpha[t * states + s];
            let b = beta[t * states + s];
            if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                continue;
            }
            row[ext[s]] -= (a + b - log_p).exp();
        }
    }
    Ok((-log_p, grad))
}

/// Negative log-likelihood together with its logit gradient.
#[derive(Debug, Clone)]
pub struct CtcGradient {
    pub loss: f64,
    pub grad: FrameMatrix,
}

/// `d(-log P(target | x)) / d logits`, where the frame distributions are the
/// row-wise softmax of `logits`.
pub fn ctc_gradient(
    logits: &FrameMatrix,
    target: &Transcript,
    alphabet: &Alphabet,
) -> Result<CtcGradient, CtcError> {
    if logits.classes != alphabet.extended_size() {
        return Err(CtcError::ClassMismatch {
            expected: alphabet.extended_size(),
            got: logits.classes,
        });
    }
    let labels = alphabet.encode(target)?;
    let log_probs = logits.log_softmax();
    let (loss, grad) = loss_and_logit_gradient(&log_probs.values, logits.classes, &labels)?;
    Ok(CtcGradient {
        loss,
        grad: FrameMatrix::new(logits.frames, logits.classes, grad)?,
    })
}

/// Best-path decoding: per-frame argmax, then collapse.
pub fn greedy_decode(probs: &FrameLogProbs, alphabet: &Alphabet) -> Result<Transcript, CtcError> {
    probs.check_classes(alphabet)?;
    collapse(&probs.argmax_path(), alphabet)
}

const MAX_ENUM_FRAMES: usize = 8;
const MAX_ENUM_CLASSES: usize = 4;

fn enumerate_paths(probs: &FrameLogProbs, mut visit: impl FnMut(&[usize], f64)) {
    let (frames, classes) = (probs.frames, probs.classes);
    let linear: Vec<f64> = probs.values.iter().map(|v| v.exp()).collect();
    let mut path = vec![0usize; frames];
    loop {
        let p: f64 = path
            .iter()
            .enumerate()
            .map(|(t, &k)| linear[t * classes + k])
            .product();
        visit(&path, p);
        // odometer increment
        let mut t = frames;
        loop {
            if t == 0 {
                return;
            }
            t -= 1;
            path[t] += 1;
            if path[t] < classes {
                break;
            }
            path[t] = 0;
        }
    }
}

fn check_enumeration_bound(probs: &FrameLogProbs) -> Result<(), CtcError> {
    if probs.frames > MAX_ENUM_FRAMES || probs.classes > MAX_ENUM_CLASSES {
        return Err(CtcError::EnumerationBound {
            frames: probs.frames,
            classes: probs.classes,
        });
    }
    Ok(())
}

/// Exhaustive `P(target | x)`: sums the probability of every path in
/// `(Σ')^T` that collapses to the target. Limited to `T <= 8`, `|Σ'| <= 4`.
pub fn brute_force_ctc(
    probs: &FrameLogProbs,
    target: &Transcript,
    alphabet: &Alphabet,
) -> Result<f64, CtcError> {
    check_enumeration_bound(probs)?;
    probs.check_classes(alphabet)?;
    let labels = alphabet.encode(target)?;
    let mut total = 0.0;
    enumerate_paths(probs, |path, p| {
        if collapse_labels(path) == labels {
            total += p;
        }
    });
    Ok(total)
}

/// Exhaustive distribution over every emitted label sequence, grouping
/// paths by their collapsed form.
pub fn brute_force_label_distribution(
    probs: &FrameLogProbs,
) -> Result<BTreeMap<Vec<usize>, f64>, CtcError> {
    check_enumeration_bound(probs)?;
    let mut dist = BTreeMap::new();
    enumerate_paths(probs, |path, p| {
        *dist.entry(collapse_labels(path)).or_insert(0.0) += p;
    });
    Ok(dist)
}
