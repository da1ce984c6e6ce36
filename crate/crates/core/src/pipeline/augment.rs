use image::{GrayImage, ImageBuffer, Luma};
use imageproc::filter::gaussian_blur_f32;
use imageproc::geometric_transformations::{warp_with, Interpolation};
use imageproc::morphology::{grayscale_dilate, grayscale_erode, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::preprocess::median_value;

/// Per-transform probabilities and magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub p_affine: f64,
    pub max_rotation_deg: f32,
    pub max_shear_deg: f32,
    pub p_grid: f64,
    /// Control-point spacing of the grid distortion, pixels.
    pub grid_step: u32,
    pub grid_magnitude: f32,
    pub p_elastic: f64,
    pub elastic_alpha: f32,
    pub elastic_sigma: f32,
    pub p_noise: f64,
    /// Standard deviation as a fraction of the 0..255 range.
    pub noise_sigma: f64,
    pub p_jitter: f64,
    pub max_brightness: f32,
    pub max_contrast: f32,
    pub p_morphology: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_affine: 0.5,
            max_rotation_deg: 2.0,
            max_shear_deg: 5.0,
            p_grid: 0.2,
            grid_step: 16,
            grid_magnitude: 1.5,
            p_elastic: 0.2,
            elastic_alpha: 4.0,
            elastic_sigma: 4.0,
            p_noise: 0.3,
            noise_sigma: 0.02,
            p_jitter: 0.3,
            max_brightness: 0.1,
            max_contrast: 0.15,
            p_morphology: 0.2,
        }
    }
}

impl AugmentConfig {
    /// Every probability zero: augmentation is the identity.
    pub fn none() -> Self {
        Self {
            p_affine: 0.0,
            p_grid: 0.0,
            p_elastic: 0.0,
            p_noise: 0.0,
            p_jitter: 0.0,
            p_morphology: 0.0,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        [self.p_affine, self.p_grid, self.p_elastic, self.p_noise, self.p_jitter, self.p_morphology]
            .iter()
            .all(|&p| p <= 0.0)
    }
}

/// Seeded random subset of the configured transforms. Dimensions never
/// change and rotation stays within `max_rotation_deg`.
pub fn augment(image: &GrayImage, seed: u64, config: &AugmentConfig) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    if config.is_identity() || image.width() == 0 || image.height() == 0 {
        return out;
    }
    let fill = Luma([median_value(image)]);
    if rng.gen_bool(config.p_affine.clamp(0.0, 1.0)) {
        let rot = rng.gen_range(-1.0..=1.0) * config.max_rotation_deg.to_radians();
        let shear = rng.gen_range(-1.0..=1.0) * config.max_shear_deg.to_radians();
        out = affine(&out, rot, shear, fill);
    }
    if rng.gen_bool(config.p_grid.clamp(0.0, 1.0)) {
        out = grid_distort(&out, config.grid_step.max(2), config.grid_magnitude, &mut rng, fill);
    }
    if rng.gen_bool(config.p_elastic.clamp(0.0, 1.0)) {
        out = elastic(&out, config.elastic_alpha, config.elastic_sigma, &mut rng, fill);
    }
    if rng.gen_bool(config.p_morphology.clamp(0.0, 1.0)) {
        // dark ink on light paper: local minimum thickens strokes
        out = if rng.gen_bool(0.5) {
            grayscale_erode(&out, &Mask::square(1))
        } else {
            grayscale_dilate(&out, &Mask::square(1))
        };
    }
    if rng.gen_bool(config.p_jitter.clamp(0.0, 1.0)) {
        let b = rng.gen_range(-1.0..=1.0) * config.max_brightness * 255.0;
        let c = 1.0 + rng.gen_range(-1.0..=1.0) * config.max_contrast;
        for p in out.pixels_mut() {
            let v = (p.0[0] as f32 - 128.0) * c + 128.0 + b;
            p.0[0] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    if rng.gen_bool(config.p_noise.clamp(0.0, 1.0)) {
        let noise_seed = rng.gen();
        imageproc::noise::gaussian_noise_mut(&mut out, 0.0, config.noise_sigma * 255.0, noise_seed);
    }
    out
}

fn affine(image: &GrayImage, rot: f32, shear: f32, fill: Luma<u8>) -> GrayImage {
    let cx = image.width() as f32 / 2.0;
    let cy = image.height() as f32 / 2.0;
    let (s, c) = rot.sin_cos();
    let k = shear.tan();
    // inverse map: output pixel -> source location
    warp_with(
        image,
        move |x, y| {
            let (dx, dy) = (x - cx, y - cy);
            let rx = c * dx + s * dy;
            let ry = -s * dx + c * dy;
            (rx - k * ry + cx, ry + cy)
        },
        Interpolation::Bilinear,
        fill,
    )
}

fn grid_distort<R: Rng>(image: &GrayImage, step: u32, magnitude: f32, rng: &mut R, fill: Luma<u8>) -> GrayImage {
    let gw = image.width().div_ceil(step) as usize + 1;
    let gh = image.height().div_ceil(step) as usize + 1;
    let offsets: Vec<(f32, f32)> = (0..gw * gh)
        .map(|_| (rng.gen_range(-magnitude..=magnitude), rng.gen_range(-magnitude..=magnitude)))
        .collect();
    let step = step as f32;
    warp_with(
        image,
        move |x, y| {
            let gx = (x / step).clamp(0.0, (gw - 1) as f32 - 1e-3);
            let gy = (y / step).clamp(0.0, (gh - 1) as f32 - 1e-3);
            let (ix, iy) = (gx as usize, gy as usize);
            let (fx, fy) = (gx - ix as f32, gy - iy as f32);
            let at = |i: usize, j: usize| offsets[j * gw + i];
            let lerp = |a: (f32, f32), b: (f32, f32), t: f32| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
            let top = lerp(at(ix, iy), at(ix + 1, iy), fx);
            let bottom = lerp(at(ix, iy + 1), at(ix + 1, iy + 1), fx);
            let (dx, dy) = lerp(top, bottom, fy);
            (x + dx, y + dy)
        },
        Interpolation::Bilinear,
        fill,
    )
}

fn elastic<R: Rng>(image: &GrayImage, alpha: f32, sigma: f32, rng: &mut R, fill: Luma<u8>) -> GrayImage {
    let (w, h) = image.dimensions();
    let field = |rng: &mut R| {
        let raw: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_fn(w, h, |_, _| Luma([rng.gen_range(-1.0..=1.0)]));
        let smooth = gaussian_blur_f32(&raw, sigma.max(0.5));
        // rescale so the peak displacement is alpha regardless of sigma
        let peak = smooth.iter().fold(1e-6f32, |m, v| m.max(v.abs()));
        smooth.into_raw().into_iter().map(|v| v / peak * alpha).collect::<Vec<f32>>()
    };
    let fx = field(rng);
    let fy = field(rng);
    warp_with(
        image,
        move |x, y| {
            let i = (y as u32).min(h - 1) as usize * w as usize + (x as u32).min(w - 1) as usize;
            (x + fx[i], y + fy[i])
        },
        Interpolation::Bilinear,
        fill,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> GrayImage {
        GrayImage::from_fn(120, 32, |x, y| Luma([if (x / 6 + y / 8) % 3 == 0 { 20 } else { 230 }]))
    }

    #[test]
    fn zero_probability_is_identity() {
        let img = line();
        assert_eq!(augment(&img, 5, &AugmentConfig::none()), img);
    }

    #[test]
    fn seeded_and_shape_preserving() {
        let img = line();
        let all = AugmentConfig {
            p_affine: 1.0,
            p_grid: 1.0,
            p_elastic: 1.0,
            p_noise: 1.0,
            p_jitter: 1.0,
            p_morphology: 1.0,
            ..AugmentConfig::default()
        };
        let a = augment(&img, 9, &all);
        assert_eq!(a, augment(&img, 9, &all));
        assert_eq!(a.dimensions(), img.dimensions());
        assert_ne!(a, augment(&img, 10, &all));
    }

    #[test]
    fn never_turns_the_line_upside_down() {
        // a line dark only in its top half must stay top-heavy
        let img = GrayImage::from_fn(200, 32, |_, y| Luma([if y < 16 { 0 } else { 255 }]));
        let cfg = AugmentConfig {
            p_affine: 1.0,
            p_grid: 1.0,
            p_elastic: 1.0,
            ..AugmentConfig::none()
        };
        for seed in 0..20 {
            let out = augment(&img, seed, &cfg);
            let top: u64 = out.rows().take(16).flatten().map(|p| p.0[0] as u64).sum();
            let bottom: u64 = out.rows().skip(16).flatten().map(|p| p.0[0] as u64).sum();
            assert!(top < bottom, "seed {seed}");
        }
    }
}
