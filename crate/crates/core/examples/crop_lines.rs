//! Crops two overlapping slanted lines from a page using one mask each;
//! pixels outside a line's mask become background.
//!
//! `cargo run --example crop_lines -- [out_dir]`

use std::path::PathBuf;

use cerhv::pipeline::{crop_line_from_mask, save_gray};
use image::{GrayImage, Luma};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crops".into()));
    std::fs::create_dir_all(&out)?;
    let (w, h) = (240, 80);
    let mut page = GrayImage::from_pixel(w, h, Luma([235]));
    let mut masks = vec![GrayImage::new(w, h), GrayImage::new(w, h)];
    for x in 10..230 {
        for (k, base) in [(0, 12), (1, 30)] {
            let y = base + x / 12;
            for dy in 0..6 {
                page.put_pixel(x, y + dy, Luma([30 + 60 * k as u8]));
                masks[k].put_pixel(x, y + dy, Luma([255]));
            }
        }
    }
    save_gray(&page, &out.join("page.png"))?;
    for (k, mask) in masks.iter().enumerate() {
        let line = crop_line_from_mask(&page, mask)?;
        println!("line {k}: {}x{}", line.width(), line.height());
        save_gray(&line, &out.join(format!("line_{k}.png")))?;
    }
    Ok(())
}
