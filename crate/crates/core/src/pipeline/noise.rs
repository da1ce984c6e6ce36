use std::collections::BTreeMap;

use image::imageops::{self, rotate180};
use image::{GrayImage, Luma};
use imageproc::drawing::{draw_filled_ellipse_mut, draw_filled_rect_mut};
use imageproc::rect::Rect;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{NoiseCategory, NoiseTruth};
use super::preprocess::median_value;
use super::synth::{render_synthetic_line, GlyphBank, SynthDataset};
use super::PipelineError;
use crate::metrics::Transcript;

/// Fraction of the manifest to corrupt per category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseRates {
    pub transcription: f64,
    pub segmentation: f64,
    pub orientation: f64,
    pub script_mismatch: f64,
    pub irrelevant: f64,
}

impl NoiseRates {
    /// `total` split evenly over the five categories.
    pub fn mixed(total: f64) -> Self {
        let r = total / 5.0;
        Self {
            transcription: r,
            segmentation: r,
            orientation: r,
            script_mismatch: r,
            irrelevant: r,
        }
    }

    pub fn only(category: NoiseCategory, rate: f64) -> Self {
        let mut r = Self::default();
        *r.rate_mut(category) = rate;
        r
    }

    pub fn rate(&self, category: NoiseCategory) -> f64 {
        match category {
            NoiseCategory::Transcription => self.transcription,
            NoiseCategory::Segmentation => self.segmentation,
            NoiseCategory::Orientation => self.orientation,
            NoiseCategory::ScriptMismatch => self.script_mismatch,
            NoiseCategory::Irrelevant => self.irrelevant,
        }
    }

    fn rate_mut(&mut self, category: NoiseCategory) -> &mut f64 {
        match category {
            NoiseCategory::Transcription => &mut self.transcription,
            NoiseCategory::Segmentation => &mut self.segmentation,
            NoiseCategory::Orientation => &mut self.orientation,
            NoiseCategory::ScriptMismatch => &mut self.script_mismatch,
            NoiseCategory::Irrelevant => &mut self.irrelevant,
        }
    }

    pub fn total(&self) -> f64 {
        NoiseCategory::ALL.iter().map(|&c| self.rate(c)).sum()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for c in NoiseCategory::ALL {
            let r = self.rate(c);
            if !(0.0..=1.0).contains(&r) {
                return Err(PipelineError::Invalid(format!("{c} rate {r} is outside [0, 1]")));
            }
        }
        if self.total() > 1.0 + 1e-9 {
            return Err(PipelineError::Invalid(format!("noise rates sum to {} > 1", self.total())));
        }
        Ok(())
    }

    /// `round(rate * n)` per category.
    pub fn counts(&self, n: usize) -> BTreeMap<NoiseCategory, usize> {
        NoiseCategory::ALL
            .iter()
            .map(|&c| (c, (self.rate(c) * n as f64).round() as usize))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub counts: BTreeMap<NoiseCategory, usize>,
    pub total: usize,
}

/// Glyph seed of a foreign bank for script-mismatch lines. Every corrupted
/// line gets its own `draw`, so no single foreign script is learnable from
/// the corrupted training lines.
pub fn foreign_glyph_seed(glyph_seed: u64, draw: u64) -> u64 {
    (glyph_seed ^ 0xa5a5_5a5a_f00d_cafe).wrapping_add(draw.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Corrupts disjoint, seeded subsets of a clean synthetic dataset and records
/// the category on each corrupted line.
pub fn inject_noise(
    dataset: &SynthDataset,
    rates: &NoiseRates,
    seed: u64,
) -> Result<(SynthDataset, NoiseReport), PipelineError> {
    rates.validate()?;
    if dataset.manifest.entries.iter().any(|e| e.noise.is_some()) {
        return Err(PipelineError::Invalid("manifest already carries injected noise".into()));
    }
    let mut out = dataset.clone();
    let n = out.manifest.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut report = NoiseReport::default();
    let mut cursor = 0;
    for (category, want) in rates.counts(n) {
        let take = want.min(n - cursor);
        for &i in &order[cursor..cursor + take] {
            corrupt(&mut out, dataset, i, category, &mut rng)?;
            out.manifest.entries[i].noise = Some(NoiseTruth { category });
        }
        cursor += take;
        report.counts.insert(category, take);
        report.total += take;
    }
    Ok((out, report))
}

fn corrupt(
    out: &mut SynthDataset,
    clean: &SynthDataset,
    i: usize,
    category: NoiseCategory,
    rng: &mut ChaCha8Rng,
) -> Result<(), PipelineError> {
    let id = out.manifest.entries[i].id.clone();
    let image = clean.images.get(&id).ok_or_else(|| PipelineError::MissingImage(id.clone()))?;
    match category {
        NoiseCategory::Transcription => {
            let symbols = out.manifest.alphabet.symbols().to_vec();
            let text = &mut out.manifest.entries[i].text;
            *text = corrupt_text(text, &symbols, rng);
        }
        NoiseCategory::Segmentation => {
            let corrupted = if rng.gen_bool(0.5) && clean.manifest.len() > 1 {
                let mut j = rng.gen_range(0..clean.manifest.len() - 1);
                if j >= i {
                    j += 1;
                }
                let other = &clean.images[&clean.manifest.entries[j].id];
                stack_vertically(image, other)
            } else {
                truncate_right(image, 0.4)
            };
            out.images.insert(id, corrupted);
        }
        NoiseCategory::Orientation => {
            out.images.insert(id, rotate180(image));
        }
        NoiseCategory::ScriptMismatch => {
            let text = out.manifest.entries[i].text.clone();
            let mut seed = foreign_glyph_seed(clean.glyph_seed, rng.gen());
            if seed == clean.glyph_seed {
                seed = !seed;
            }
            let foreign = GlyphBank::new(&out.manifest.alphabet, seed);
            let img = render_synthetic_line(&text, &foreign, rng.gen(), &clean.render)?;
            out.images.insert(id, img);
        }
        NoiseCategory::Irrelevant => {
            out.images.insert(id, blob(image.width(), image.height(), rng));
        }
    }
    Ok(())
}

/// Replaces about half the codepoints, or shuffles the whole label; the
/// result always differs from the input when the alphabet allows it.
pub fn corrupt_text<R: Rng>(text: &Transcript, symbols: &[char], rng: &mut R) -> Transcript {
    let mut chars = text.codepoints();
    if chars.is_empty() {
        return (0..3).map(|_| symbols[rng.gen_range(0..symbols.len())]).collect::<String>().into();
    }
    let original = chars.clone();
    if chars.len() >= 2 && rng.gen_bool(0.3) {
        chars.shuffle(rng);
        if chars != original {
            return chars.into_iter().collect::<String>().into();
        }
    }
    if symbols.len() < 2 {
        return original.into_iter().collect::<String>().into();
    }
    let k = chars.len().div_ceil(2);
    let mut positions: Vec<usize> = (0..chars.len()).collect();
    positions.shuffle(rng);
    for &p in &positions[..k] {
        let mut c = chars[p];
        while c == chars[p] {
            c = symbols[rng.gen_range(0..symbols.len())];
        }
        chars[p] = c;
    }
    chars.into_iter().collect::<String>().into()
}

pub fn stack_vertically(top: &GrayImage, bottom: &GrayImage) -> GrayImage {
    let w = top.width().max(bottom.width());
    let mut out = GrayImage::from_pixel(w, top.height() + bottom.height(), Luma([median_value(top)]));
    imageops::replace(&mut out, top, 0, 0);
    imageops::replace(&mut out, bottom, 0, top.height() as i64);
    out
}

/// Drops the rightmost `fraction` of the columns.
pub fn truncate_right(image: &GrayImage, fraction: f64) -> GrayImage {
    let keep = ((image.width() as f64 * (1.0 - fraction)).round() as u32).max(1);
    imageops::crop_imm(image, 0, 0, keep, image.height()).to_image()
}

/// Structured non-text content: overlapping ellipses and bars.
pub fn blob<R: Rng>(width: u32, height: u32, rng: &mut R) -> GrayImage {
    let mut img = GrayImage::from_pixel(width, height, Luma([rng.gen_range(200..245)]));
    let (w, h) = (width.max(1) as i32, height.max(1) as i32);
    for _ in 0..rng.gen_range(3..7) {
        let tone = Luma([rng.gen_range(20..180)]);
        if rng.gen_bool(0.5) {
            let center = (rng.gen_range(0..w), rng.gen_range(0..h));
            draw_filled_ellipse_mut(&mut img, center, rng.gen_range(4..=h.max(5)), rng.gen_range(3..=(h / 2).max(4)), tone);
        } else {
            let rw = rng.gen_range(6..=(w / 2).max(7)) as u32;
            let rh = rng.gen_range(3..=(h / 3).max(4)) as u32;
            draw_filled_rect_mut(&mut img, Rect::at(rng.gen_range(0..w), rng.gen_range(0..h)).of_size(rw, rh), tone);
        }
    }
    img
}
