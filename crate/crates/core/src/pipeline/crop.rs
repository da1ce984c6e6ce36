use image::{GrayImage, Luma};

use super::preprocess::median_value;
use super::PipelineError;

pub const CROP_PADDING: u32 = 5;

/// Crops the mask's bounding box grown by [`CROP_PADDING`] (clamped to the
/// page). Pixels outside the mask become the page median, so ink from
/// neighbouring lines never leaks into the crop.
pub fn crop_line_from_mask(page: &GrayImage, mask: &GrayImage) -> Result<GrayImage, PipelineError> {
    if page.dimensions() != mask.dimensions() {
        return Err(PipelineError::Invalid(format!(
            "mask is {:?} but page is {:?}",
            mask.dimensions(),
            page.dimensions()
        )));
    }
    let mut bbox: Option<(u32, u32, u32, u32)> = None;
    for (x, y, p) in mask.enumerate_pixels() {
        if p.0[0] != 0 {
            bbox = Some(match bbox {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
    }
    let (x0, y0, x1, y1) = bbox.ok_or(PipelineError::EmptyMask)?;
    let (w, h) = page.dimensions();
    let x0 = x0.saturating_sub(CROP_PADDING);
    let y0 = y0.saturating_sub(CROP_PADDING);
    let x1 = (x1 + CROP_PADDING).min(w - 1);
    let y1 = (y1 + CROP_PADDING).min(h - 1);
    let background = median_value(page);
    Ok(GrayImage::from_fn(x1 - x0 + 1, y1 - y0 + 1, |cx, cy| {
        let (px, py) = (x0 + cx, y0 + cy);
        if mask.get_pixel(px, py).0[0] != 0 {
            *page.get_pixel(px, py)
        } else {
            Luma([background])
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_page_mask_returns_page() {
        let page = GrayImage::from_fn(30, 20, |x, y| Luma([(x + y) as u8]));
        let mask = GrayImage::from_pixel(30, 20, Luma([255]));
        assert_eq!(crop_line_from_mask(&page, &mask).unwrap(), page);
    }

    #[test]
    fn single_pixel_gives_eleven_square() {
        let page = GrayImage::from_pixel(40, 40, Luma([200]));
        let mut mask = GrayImage::new(40, 40);
        mask.put_pixel(10, 10, Luma([1]));
        let crop = crop_line_from_mask(&page, &mask).unwrap();
        assert_eq!(crop.dimensions(), (11, 11));
        let mut corner = GrayImage::new(40, 40);
        corner.put_pixel(2, 1, Luma([1]));
        assert_eq!(crop_line_from_mask(&page, &corner).unwrap().dimensions(), (8, 7));
    }

    #[test]
    fn empty_or_mismatched_mask() {
        let page = GrayImage::new(10, 10);
        assert!(matches!(crop_line_from_mask(&page, &GrayImage::new(10, 10)), Err(PipelineError::EmptyMask)));
        assert!(crop_line_from_mask(&page, &GrayImage::new(9, 10)).is_err());
    }

    #[test]
    fn overlapping_lines_keep_only_their_ink() {
        // two slanted lines whose bounding boxes overlap; ink 10 and 60
        let (w, h) = (80, 40);
        let mut page = GrayImage::from_pixel(w, h, Luma([250]));
        let mut m1 = GrayImage::new(w, h);
        let mut m2 = GrayImage::new(w, h);
        for x in 5..75 {
            let y1 = 8 + x / 10;
            let y2 = 16 + x / 10;
            for dy in 0..3 {
                page.put_pixel(x, y1 + dy, Luma([10]));
                m1.put_pixel(x, y1 + dy, Luma([255]));
                page.put_pixel(x, y2 + dy, Luma([60]));
                m2.put_pixel(x, y2 + dy, Luma([255]));
            }
        }
        let bg = median_value(&page);
        let c1 = crop_line_from_mask(&page, &m1).unwrap();
        let c2 = crop_line_from_mask(&page, &m2).unwrap();
        assert!(c1.pixels().all(|p| p.0[0] == 10 || p.0[0] == bg));
        assert!(c2.pixels().all(|p| p.0[0] == 60 || p.0[0] == bg));
        assert!(c1.pixels().any(|p| p.0[0] == 10));
    }
}
