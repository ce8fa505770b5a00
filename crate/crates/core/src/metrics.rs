//! PSNR and SSIM.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5), `K1 = 0.01`, `K2 = 0.03`
//! and a dynamic range of 1, averaged over every window position that lies
//! fully inside the image.

use crate::error::{Error, Result};
use crate::geometry::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 1.0;

fn check(a: &Image, b: &Image) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::shape(
            format!("{0}x{0} image", a.size()),
            format!("{0}x{0}", b.size()),
        ));
    }
    Ok(())
}

pub fn mse(reference: &Image, x: &Image) -> Result<f64> {
    check(reference, x)?;
    let n = reference.data().len() as f64;
    Ok(reference
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical images.
pub fn psnr(reference: &Image, x: &Image, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::InvalidParameter(format!("data range {data_range}")));
    }
    let err = mse(reference, x)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / err).log10())
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable "valid" filtering of an n x n field; output is m x m with
/// m = n - 10.
fn filter_valid(src: &[f64], n: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let m = n + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; n * m];
    for r in 0..n {
        for c in 0..m {
            let mut acc = 0.0;
            for (t, w) in taps.iter().enumerate() {
                acc += w * src[r * n + c + t];
            }
            rows[r * m + c] = acc;
        }
    }
    let mut out = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            let mut acc = 0.0;
            for (t, w) in taps.iter().enumerate() {
                acc += w * rows[(r + t) * m + c];
            }
            out[r * m + c] = acc;
        }
    }
    out
}

/// Mean structural similarity.
pub fn ssim(reference: &Image, x: &Image) -> Result<f64> {
    check(reference, x)?;
    let n = reference.size();
    if n < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "SSIM needs images of at least {SSIM_WINDOW} pixels per side, got {n}"
        )));
    }
    let taps = gaussian_taps();
    let a = reference.data();
    let b = x.data();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(p, q)| p * q).collect();

    let mu_a = filter_valid(a, n, &taps);
    let mu_b = filter_valid(b, n, &taps);
    let e_aa = filter_valid(&aa, n, &taps);
    let e_bb = filter_valid(&bb, n, &taps);
    let e_ab = filter_valid(&ab, n, &taps);

    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Mean and (population) standard deviation, as reported in result tables.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
