use image::imageops::{self, FilterType};
use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::recognizer::ImageTensor;

pub const DEFAULT_HORIZONTAL_PAD: u32 = 64;

/// Target canvas for every line image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSpec {
    pub target_width: u32,
    pub target_height: u32,
    /// Added on each side after centering.
    pub horizontal_pad: u32,
}

impl PreprocessSpec {
    pub fn new(target_width: u32, target_height: u32) -> Self {
        Self {
            target_width,
            target_height,
            horizontal_pad: DEFAULT_HORIZONTAL_PAD,
        }
    }

    /// `(width, height)` produced by [`resize_pad`].
    pub fn output_dims(&self) -> (u32, u32) {
        (self.target_width + 2 * self.horizontal_pad, self.target_height)
    }

    /// Output dims rounded up to multiples of `multiple` for the encoder.
    pub fn model_dims(&self, multiple: u32) -> (u32, u32) {
        let (w, h) = self.output_dims();
        (w.div_ceil(multiple) * multiple, h.div_ceil(multiple) * multiple)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.target_width == 0 || self.target_height == 0 {
            return Err(PipelineError::Invalid("preprocess targets must be positive".into()));
        }
        Ok(())
    }
}

/// Mean `(width, height)` of the training images, rounded.
pub fn compute_targets(dims: &[(u32, u32)]) -> Result<PreprocessSpec, PipelineError> {
    if dims.is_empty() {
        return Err(PipelineError::Invalid("cannot compute targets from an empty training split".into()));
    }
    let n = dims.len() as f64;
    let w = dims.iter().map(|d| d.0 as f64).sum::<f64>() / n;
    let h = dims.iter().map(|d| d.1 as f64).sum::<f64>() / n;
    Ok(PreprocessSpec::new(w.round() as u32, h.round() as u32))
}

/// Lower median of the pixel values.
pub fn median_value(image: &GrayImage) -> u8 {
    let mut hist = [0usize; 256];
    for p in image.as_raw() {
        hist[*p as usize] += 1;
    }
    let half = (image.as_raw().len().max(1) - 1) / 2;
    let mut acc = 0;
    for (v, &c) in hist.iter().enumerate() {
        acc += c;
        if acc > half {
            return v as u8;
        }
    }
    0
}

/// Downscale to fit (never upscale), center on the target canvas filled with
/// the image's median, then extend both sides by the horizontal pad.
pub fn resize_pad(image: &GrayImage, spec: &PreprocessSpec) -> Result<GrayImage, PipelineError> {
    spec.validate()?;
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(PipelineError::ZeroArea);
    }
    let fill = median_value(image);
    let (tw, th) = (spec.target_width, spec.target_height);
    let scaled;
    let content = if w > tw || h > th {
        let scale = (tw as f64 / w as f64).min(th as f64 / h as f64);
        let nw = ((w as f64 * scale).round() as u32).clamp(1, tw);
        let nh = ((h as f64 * scale).round() as u32).clamp(1, th);
        scaled = imageops::resize(image, nw, nh, FilterType::Triangle);
        &scaled
    } else {
        image
    };
    let (out_w, out_h) = spec.output_dims();
    let mut out = GrayImage::from_pixel(out_w, out_h, Luma([fill]));
    let x = spec.horizontal_pad + (tw - content.width()) / 2;
    let y = (th - content.height()) / 2;
    imageops::replace(&mut out, content, x as i64, y as i64);
    Ok(out)
}

/// Extends a preprocessed image to `(width, height)` on the right and bottom
/// with its median and converts it to ink intensity `1 - p/255`.
pub fn to_tensor(image: &GrayImage, width: u32, height: u32) -> ImageTensor {
    let fill = median_value(image);
    let mut data = vec![1.0 - fill as f32 / 255.0; (width * height) as usize];
    for (x, y, p) in image.enumerate_pixels() {
        if x < width && y < height {
            data[(y * width + x) as usize] = 1.0 - p.0[0] as f32 / 255.0;
        }
    }
    ImageTensor::new(1, height as usize, width as usize, data)
}

/// `resize_pad` followed by alignment to the encoder's downsampling factor.
pub fn prepare(image: &GrayImage, spec: &PreprocessSpec, multiple: u32) -> Result<ImageTensor, PipelineError> {
    let padded = resize_pad(image, spec)?;
    let (w, h) = spec.model_dims(multiple);
    Ok(to_tensor(&padded, w, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: u32, h: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| Luma([((x * 7 + y * 3) % 200) as u8]))
    }

    #[test]
    fn targets_are_rounded_means() {
        assert_eq!(compute_targets(&[(100, 20), (200, 40)]).unwrap(), PreprocessSpec::new(150, 30));
        assert_eq!(compute_targets(&[(37, 11)]).unwrap(), PreprocessSpec::new(37, 11));
        assert_eq!(compute_targets(&[(2074, 199), (2076, 201)]).unwrap(), PreprocessSpec::new(2075, 200));
        assert!(compute_targets(&[]).is_err());
    }

    #[test]
    fn no_resize_path_keeps_content() {
        let img = gradient(150, 30);
        let spec = PreprocessSpec::new(150, 30);
        let out = resize_pad(&img, &spec).unwrap();
        assert_eq!(out.dimensions(), (278, 30));
        let fill = median_value(&img);
        for y in 0..30 {
            for x in 0..278 {
                let expected = if (64..214).contains(&x) { img.get_pixel(x - 64, y).0[0] } else { fill };
                assert_eq!(out.get_pixel(x, y).0[0], expected);
            }
        }
    }

    #[test]
    fn downscale_path() {
        let img = GrayImage::from_fn(300, 30, |x, _| Luma([if x < 150 { 0 } else { 255 }]));
        let out = resize_pad(&img, &PreprocessSpec::new(150, 30)).unwrap();
        assert_eq!(out.dimensions(), (278, 30));
        // content shrinks to 150x15 and is vertically centered
        assert_eq!(out.get_pixel(64 + 10, 15).0[0], 0);
        assert_eq!(out.get_pixel(64 + 140, 15).0[0], 255);
        assert_eq!(out.get_pixel(64 + 10, 2).0[0], median_value(&img));
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = GrayImage::from_pixel(40, 9, Luma([77]));
        let out = resize_pad(&img, &PreprocessSpec::new(100, 20)).unwrap();
        assert!(out.pixels().all(|p| p.0[0] == 77));
        assert!(matches!(resize_pad(&GrayImage::new(0, 5), &PreprocessSpec::new(10, 10)), Err(PipelineError::ZeroArea)));
    }

    #[test]
    fn tensor_alignment() {
        let spec = PreprocessSpec::new(150, 30);
        assert_eq!(spec.model_dims(8), (280, 32));
        let t = prepare(&gradient(90, 20), &spec, 8).unwrap();
        assert_eq!((t.channels, t.height, t.width), (1, 32, 280));
        assert!(t.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    proptest! {
        #[test]
        fn output_dims_are_exact(w in 1u32..400, h in 1u32..80, tw in 1u32..200, th in 1u32..50) {
            let spec = PreprocessSpec::new(tw, th);
            let out = resize_pad(&gradient(w, h), &spec).unwrap();
            prop_assert_eq!(out.dimensions(), (tw + 128, th));
        }
    }
}
