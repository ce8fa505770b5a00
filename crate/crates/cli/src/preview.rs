//! 8-bit grayscale PNG previews. Images are flipped so +y points up.

use std::path::Path;

use anyhow::{Context, Result};
use image::{GrayImage, Luma};
use motionct_core::{Image, Sinogram};

fn save(path: &Path, width: usize, height: usize, value: impl Fn(usize, usize) -> f64) -> Result<()> {
    let mut out = GrayImage::new(width as u32, height as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let v = value(y as usize, x as usize);
        *px = Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8]);
    }
    out.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Densities shown on the fixed range [0, 1].
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let n = img.size();
    save(path, n, n, |r, c| img.get(n - 1 - r, c))
}

/// Signed difference, mid-gray at zero, saturating at `+-range`.
pub fn save_difference(path: &Path, x: &Image, reference: &Image, range: f64) -> Result<()> {
    let n = x.size();
    save(path, n, n, |r, c| {
        let (row, col) = (n - 1 - r, c);
        0.5 + 0.5 * (x.get(row, col) - reference.get(row, col)) / range
    })
}

/// One row per angle, stretched to the row range of the data.
pub fn save_sinogram(path: &Path, y: &Sinogram) -> Result<()> {
    let (lo, hi) = y
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    save(path, y.num_detectors(), y.num_angles(), |k, l| (y.get(k, l) - lo) / span)
}
