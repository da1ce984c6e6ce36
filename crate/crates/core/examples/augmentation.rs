//! Renders one synthetic line and writes several augmented variants.
//!
//! `cargo run --example augmentation -- [out_dir]`

use std::path::PathBuf;

use cerhv::pipeline::{augment, render_synthetic_line, save_gray, synthetic_alphabet, AugmentConfig, GlyphBank, RenderConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "augmented".into()));
    std::fs::create_dir_all(&out)?;
    let alphabet = synthetic_alphabet(10)?;
    let bank = GlyphBank::new(&alphabet, 1);
    let line = render_synthetic_line(&"abcdefgh".into(), &bank, 7, &RenderConfig::default())?;
    save_gray(&line, &out.join("original.png"))?;
    let config = AugmentConfig {
        p_affine: 1.0,
        p_elastic: 0.5,
        p_grid: 0.5,
        ..AugmentConfig::default()
    };
    for seed in 0..6 {
        let img = augment(&line, seed, &config);
        assert_eq!(img.dimensions(), line.dimensions());
        save_gray(&img, &out.join(format!("aug_{seed}.png")))?;
    }
    println!("wrote 7 images of {}x{} to {}", line.width(), line.height(), out.display());
    Ok(())
}
