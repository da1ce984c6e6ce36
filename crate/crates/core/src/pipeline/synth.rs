//! Deterministic pseudo-handwriting for desk-scale experiments.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{save_gray, LineSample, Manifest, Split};
use super::split::{apply_page_split, page_texts, split_pages, SplitConfig};
use super::{ImageSource, PipelineError};
use crate::ctc::Alphabet;
use crate::metrics::Transcript;

pub const GLYPH_SIZE: usize = 24;

/// Symbols used for generated alphabets, in order.
pub const SYMBOL_POOL: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Ink coverage in `[0, 1]`, row-major `GLYPH_SIZE x GLYPH_SIZE`.
pub type Glyph = Vec<f32>;

/// Stroke pattern for `(glyph_seed, codepoint)`: three quadratic curves and
/// an optional dot.
pub fn glyph_bitmap(glyph_seed: u64, c: char) -> Glyph {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(glyph_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ c as u64));
    let n = GLYPH_SIZE;
    let mut g = vec![0f32; n * n];
    let lo = 3.0;
    let hi = (n - 3) as f32;
    let pt = |rng: &mut ChaCha8Rng| (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
    let stamp = |g: &mut [f32], x: f32, y: f32, r: f32| {
        let (x0, x1) = ((x - r).floor().max(0.0) as usize, ((x + r).ceil() as usize).min(n - 1));
        let (y0, y1) = ((y - r).floor().max(0.0) as usize, ((y + r).ceil() as usize).min(n - 1));
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                let d = ((xx as f32 - x).powi(2) + (yy as f32 - y).powi(2)).sqrt();
                let v = (r + 0.5 - d).clamp(0.0, 1.0);
                let cell = &mut g[yy * n + xx];
                *cell = cell.max(v);
            }
        }
    };
    let strokes = rng.gen_range(2..=3);
    for _ in 0..strokes {
        let (a, b, c) = (pt(&mut rng), pt(&mut rng), pt(&mut rng));
        let r = rng.gen_range(1.0..1.6);
        for s in 0..=40 {
            let t = s as f32 / 40.0;
            let u = 1.0 - t;
            let x = u * u * a.0 + 2.0 * u * t * b.0 + t * t * c.0;
            let y = u * u * a.1 + 2.0 * u * t * b.1 + t * t * c.1;
            stamp(&mut g, x, y, r);
        }
    }
    if rng.gen_bool(0.4) {
        let (x, y) = pt(&mut rng);
        stamp(&mut g, x, y, 2.0);
    }
    g
}

/// Pearson correlation of two glyph bitmaps.
pub fn glyph_correlation(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt().max(1e-12)
}

/// Glyphs for one alphabet under one glyph seed.
#[derive(Debug, Clone)]
pub struct GlyphBank {
    glyph_seed: u64,
    glyphs: HashMap<char, Glyph>,
}

impl GlyphBank {
    pub fn new(alphabet: &Alphabet, glyph_seed: u64) -> Self {
        let glyphs = alphabet.symbols().iter().map(|&c| (c, glyph_bitmap(glyph_seed, c))).collect();
        Self { glyph_seed, glyphs }
    }

    pub fn glyph_seed(&self) -> u64 {
        self.glyph_seed
    }

    pub fn glyph(&self, c: char) -> Option<&Glyph> {
        self.glyphs.get(&c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub height: u32,
    pub right_to_left: bool,
    /// Gaussian pixel noise, in gray levels.
    pub noise_sigma: f64,
    pub margin: u32,
    pub min_width: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            height: 32,
            right_to_left: false,
            noise_sigma: 6.0,
            margin: 6,
            min_width: 32,
        }
    }
}

/// Composes glyphs horizontally with seeded jitter, spacing and ink tone.
pub fn render_synthetic_line(
    text: &Transcript,
    bank: &GlyphBank,
    style_seed: u64,
    config: &RenderConfig,
) -> Result<GrayImage, PipelineError> {
    let glyphs: Vec<&Glyph> = text
        .chars()
        .map(|c| bank.glyph(c).ok_or(PipelineError::OutOfAlphabet(c)))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(style_seed ^ 0x5157_1e5e_ed00_0001));
    let n = GLYPH_SIZE as i64;
    let gaps: Vec<i64> = (0..glyphs.len()).map(|_| rng.gen_range(-3..=3)).collect();
    let content: i64 = glyphs.len() as i64 * n + gaps.iter().skip(1).sum::<i64>();
    let width = ((2 * config.margin as i64 + content.max(0)) as u32).max(config.min_width);
    let height = config.height.max(GLYPH_SIZE as u32);
    let paper = rng.gen_range(215.0..245.0f32);
    let ink = rng.gen_range(15.0..70.0f32);
    let mut canvas = vec![0f32; (width * height) as usize];
    let base_y = (height as i64 - n) / 2;
    let mut x = config.margin as i64;
    for (k, g) in glyphs.iter().enumerate() {
        if k > 0 {
            x += gaps[k];
        }
        let dy = base_y + rng.gen_range(-2..=2);
        let strength = rng.gen_range(0.8..1.0f32);
        let left = if config.right_to_left { width as i64 - x - n } else { x };
        for gy in 0..n {
            for gx in 0..n {
                let (px, py) = (left + gx, dy + gy);
                if px < 0 || py < 0 || px >= width as i64 || py >= height as i64 {
                    continue;
                }
                let cell = &mut canvas[(py as u32 * width + px as u32) as usize];
                *cell = cell.max(g[(gy * n + gx) as usize] * strength);
            }
        }
        x += n;
    }
    let noise = Normal::new(0.0, config.noise_sigma.max(1e-9)).expect("finite sigma");
    let pixels = canvas
        .iter()
        .map(|&c| {
            let v = paper + (ink - paper) * c + noise.sample(&mut rng) as f32;
            v.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Ok(GrayImage::from_raw(width, height, pixels).expect("buffer size"))
}

/// First `size` symbols of [`SYMBOL_POOL`].
pub fn synthetic_alphabet(size: usize) -> Result<Alphabet, PipelineError> {
    if size == 0 || size > SYMBOL_POOL.chars().count() {
        return Err(PipelineError::Invalid(format!(
            "alphabet size must be in 1..={}",
            SYMBOL_POOL.chars().count()
        )));
    }
    Alphabet::new(SYMBOL_POOL.chars().take(size)).map_err(|e| PipelineError::Invalid(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    pub alphabet_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub lines_per_page: usize,
    pub seed: u64,
    pub glyph_seed: u64,
    pub render: RenderConfig,
    pub split: SplitConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 500,
            alphabet_size: 10,
            min_len: 4,
            max_len: 8,
            lines_per_page: 10,
            seed: 0,
            glyph_seed: 1,
            render: RenderConfig::default(),
            split: SplitConfig::default(),
        }
    }
}

/// Manifest plus in-memory images and the generator settings needed to
/// re-render lines (script-mismatch corruption does this).
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: Manifest,
    pub images: BTreeMap<String, GrayImage>,
    pub glyph_seed: u64,
    pub render: RenderConfig,
}

impl ImageSource for SynthDataset {
    fn image(&self, sample: &LineSample) -> Result<GrayImage, PipelineError> {
        self.images
            .get(&sample.id)
            .cloned()
            .ok_or_else(|| PipelineError::MissingImage(sample.id.clone()))
    }
}

impl SynthDataset {
    /// Writes `images/<id>.png` and `manifest.jsonl` under `dir`, returning
    /// the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let mut manifest = self.manifest.clone();
        manifest.base_dir = dir.to_path_buf();
        for e in &mut manifest.entries {
            e.image = PathBuf::from("images").join(format!("{}.png", e.id));
            let img = self.images.get(&e.id).ok_or_else(|| PipelineError::MissingImage(e.id.clone()))?;
            save_gray(img, &dir.join(&e.image))?;
        }
        manifest.refresh_stats()?;
        let path = dir.join("manifest.jsonl");
        manifest.save(&path)?;
        Ok(path)
    }
}

/// Random-text lines grouped into pages and split by page.
pub fn synth_dataset(config: &SynthConfig) -> Result<SynthDataset, PipelineError> {
    if config.min_len == 0 || config.min_len > config.max_len {
        return Err(PipelineError::Invalid("need 1 <= min_len <= max_len".into()));
    }
    if config.lines_per_page == 0 {
        return Err(PipelineError::Invalid("lines_per_page must be positive".into()));
    }
    let alphabet = synthetic_alphabet(config.alphabet_size)?;
    let bank = GlyphBank::new(&alphabet, config.glyph_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut entries = Vec::with_capacity(config.count);
    let mut images = BTreeMap::new();
    let width = (config.count.max(1) - 1).to_string().len();
    for i in 0..config.count {
        let len = rng.gen_range(config.min_len..=config.max_len);
        let text: Transcript = (0..len)
            .map(|_| alphabet.symbols()[rng.gen_range(0..alphabet.len())])
            .collect::<String>()
            .into();
        let id = format!("line{i:0width$}");
        let image = render_synthetic_line(&text, &bank, rng.gen(), &config.render)?;
        images.insert(id.clone(), image);
        entries.push(LineSample {
            image: PathBuf::from(format!("images/{id}.png")),
            id,
            text,
            split: Split::Train,
            page: Some(format!("page{:0width$}", i / config.lines_per_page)),
            noise: None,
        });
    }
    let mut manifest = Manifest::new(alphabet, entries, ".");
    let pages = page_texts(&manifest);
    if pages.len() >= 3 {
        let split = split_pages(&pages, &SplitConfig { seed: config.seed, ..config.split })?;
        manifest = apply_page_split(&manifest, &split)?;
        images.retain(|id, _| manifest.entries.iter().any(|e| &e.id == id));
    }
    Ok(SynthDataset {
        manifest,
        images,
        glyph_seed: config.glyph_seed,
        render: config.render,
    })
}
