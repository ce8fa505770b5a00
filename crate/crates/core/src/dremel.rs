//! Kaczmarz with interleaved per-angle detector-shift correction.
//!
//! After the Kaczmarz step of angle `k`, the forward projection of the
//! pre-step iterate is cross-correlated with the measured row and the model
//! shift of that angle is moved by the estimated offset. Shifts live in
//! object-plane detector units, so the `spacing / m` conversion reduces to
//! the object-plane detector spacing.

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Image};
use crate::kaczmarz::{angle_step, check_omega, AngleOrder};
use crate::projector::{angle_footprints, Sinogram};

/// Largest lag (as a fraction of the upsampled length) that still gets the
/// overlap-count boost.
const OVERLAP_CAP: f64 = 0.9;

/// Compensation for the shrinking overlap of zero-padded signals at large
/// lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LagWeighting {
    /// Divide by the root energies of both signals over the overlap, which
    /// makes `z = y` peak at lag zero.
    #[default]
    OverlapEnergy,
    /// Multiply by `n / (n - |lag|)`, capped at lag `0.9 n`.
    OverlapCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DremelParams {
    pub omega: f64,
    pub lambda: f64,
    pub f_sr: usize,
    pub max_iters: usize,
    pub warmup_sweeps: usize,
    pub normalized: bool,
    pub weighting: LagWeighting,
    pub order: AngleOrder,
}

impl Default for DremelParams {
    fn default() -> Self {
        Self {
            omega: 1.0,
            lambda: 1.0,
            f_sr: 2,
            max_iters: 32,
            warmup_sweeps: 0,
            normalized: true,
            weighting: LagWeighting::OverlapEnergy,
            order: AngleOrder::default(),
        }
    }
}

impl DremelParams {
    pub fn validate(&self) -> Result<()> {
        check_omega(self.omega)?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParameter(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.f_sr == 0 {
            return Err(Error::InvalidParameter("f_sr must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DremelResult {
    pub image: Image,
    /// Final per-angle detector shifts, object-plane units.
    pub shifts: Vec<f64>,
    /// Data residual norm accumulated over each sweep, measured before the
    /// angle's step.
    pub residual_history: Vec<f64>,
}

/// Cross-correlation shift estimator with FFT plans for one signal length.
pub struct ShiftEstimator {
    n: usize,
    f_sr: usize,
    weighting: LagWeighting,
    fwd_n: Arc<dyn Fft<f64>>,
    inv_up: Arc<dyn Fft<f64>>,
    fwd_pad: Arc<dyn Fft<f64>>,
    inv_pad: Arc<dyn Fft<f64>>,
}

impl ShiftEstimator {
    pub fn new(n: usize, f_sr: usize) -> Result<Self> {
        Self::with_weighting(n, f_sr, LagWeighting::default())
    }

    pub fn with_weighting(n: usize, f_sr: usize, weighting: LagWeighting) -> Result<Self> {
        if n == 0 || f_sr == 0 {
            return Err(Error::InvalidParameter(format!("length {n}, f_sr {f_sr}")));
        }
        let up = n * f_sr;
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            f_sr,
            weighting,
            fwd_n: planner.plan_fft_forward(n),
            inv_up: planner.plan_fft_inverse(up),
            fwd_pad: planner.plan_fft_forward(2 * up),
            inv_pad: planner.plan_fft_inverse(2 * up),
        })
    }

    /// Band-limited upsampling by spectrum zero insertion.
    pub fn upsample(&self, x: &[f64]) -> Vec<f64> {
        let (n, up) = (self.n, self.n * self.f_sr);
        let mut spec: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fwd_n.process(&mut spec);
        let mut wide = vec![Complex::new(0.0, 0.0); up];
        let half = (n - 1) / 2;
        wide[..=half].copy_from_slice(&spec[..=half]);
        for j in 1..=half {
            wide[up - j] = spec[n - j];
        }
        if n % 2 == 0 {
            let nyq = spec[n / 2];
            if self.f_sr == 1 {
                wide[n / 2] = nyq;
            } else {
                wide[n / 2] = nyq * 0.5;
                wide[up - n / 2] = nyq * 0.5;
            }
        }
        self.inv_up.process(&mut wide);
        wide.iter().map(|c| c.re / n as f64).collect()
    }

    fn mean_free(x: &[f64]) -> Vec<f64> {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| v - mean).collect()
    }

    fn padded_spectrum(&self, x: &[f64]) -> Vec<Complex<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); 2 * x.len()];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.fwd_pad.process(&mut buf);
        buf
    }

    /// Weighted correlation over the cropped lags, indexed circularly so
    /// entry `i` holds lag `i` for `i < up - up/2` and `i - up` otherwise.
    pub fn correlation(&self, z: &[f64], y: &[f64]) -> Vec<f64> {
        let up = self.n * self.f_sr;
        let zs = Self::mean_free(&self.upsample(z));
        let ys = Self::mean_free(&self.upsample(y));
        let fz = self.padded_spectrum(&zs);
        let fy = self.padded_spectrum(&ys);
        let mut c: Vec<Complex<f64>> = fy.iter().zip(&fz).map(|(a, b)| a.conj() * b).collect();
        self.inv_pad.process(&mut c);
        let pad = 2 * up;
        // Prefix sums of squares for the overlap energies.
        let cumsum = |v: &[f64]| {
            let mut acc = vec![0.0; v.len() + 1];
            for (i, x) in v.iter().enumerate() {
                acc[i + 1] = acc[i] + x * x;
            }
            acc
        };
        let (ey, ez) = (cumsum(&ys), cumsum(&zs));
        (0..up)
            .map(|i| {
                let lag = lag_of(i, up);
                let src = lag.rem_euclid(pad as i64) as usize;
                let raw = c[src].re / pad as f64;
                match self.weighting {
                    LagWeighting::OverlapCount => raw * overlap_weight(lag, up),
                    LagWeighting::OverlapEnergy => {
                        // Overlap pairs y[i] with z[i + lag].
                        let a = lag.unsigned_abs() as usize;
                        let (y_lo, z_lo) = if lag >= 0 { (0, a) } else { (a, 0) };
                        let len = up - a;
                        let energy = (ey[y_lo + len] - ey[y_lo]) * (ez[z_lo + len] - ez[z_lo]);
                        if energy > 0.0 {
                            raw / energy.sqrt()
                        } else {
                            0.0
                        }
                    }
                }
            })
            .collect()
    }

    /// Shift of `z` relative to `y` in original sample units; positive when
    /// `z` lies to the right of `y`.
    pub fn estimate(&self, z: &[f64], y: &[f64]) -> Result<f64> {
        if z.len() != self.n || y.len() != self.n {
            return Err(Error::shape(self.n, if z.len() != self.n { z.len() } else { y.len() }));
        }
        if is_constant(z) || is_constant(y) {
            return Ok(0.0);
        }
        let up = self.n * self.f_sr;
        let corr = self.correlation(z, y);
        Ok(lag_to_shift(argmax_smallest_lag(&corr, up), up, self.f_sr))
    }
}

#[inline]
fn lag_of(index: usize, up: usize) -> i64 {
    let i = index as i64;
    if index < up - up / 2 {
        i
    } else {
        i - up as i64
    }
}

#[inline]
fn overlap_weight(lag: i64, up: usize) -> f64 {
    let cap = OVERLAP_CAP * up as f64;
    let a = (lag.unsigned_abs() as f64).min(cap);
    up as f64 / (up as f64 - a)
}

fn is_constant(x: &[f64]) -> bool {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = lo.abs().max(hi.abs());
    hi - lo <= 1e-12 * scale
}

/// Argmax over circularly indexed lags; ties go to the smallest `|lag|`.
fn argmax_smallest_lag(corr: &[f64], up: usize) -> usize {
    let mut best = 0;
    for i in 1..corr.len() {
        let better = corr[i] > corr[best]
            || (corr[i] == corr[best] && lag_of(i, up).abs() < lag_of(best, up).abs());
        if better {
            best = i;
        }
    }
    best
}

/// Center-and-wrap index arithmetic turning an argmax index into a shift.
fn lag_to_shift(index: usize, up: usize, f_sr: usize) -> f64 {
    let half = (up / 2) as i64;
    let wrapped = (half + index as i64).rem_euclid(up as i64);
    (wrapped - half) as f64 / f_sr as f64
}

/// One-shot form of [`ShiftEstimator::estimate`].
pub fn shift_cross_corr(z: &[f64], y: &[f64], f_sr: usize) -> Result<f64> {
    if z.len() != y.len() {
        return Err(Error::shape(z.len(), y.len()));
    }
    ShiftEstimator::new(z.len(), f_sr)?.estimate(z, y)
}

/// [`shift_cross_corr`] with an explicit lag weighting.
pub fn shift_cross_corr_with(z: &[f64], y: &[f64], f_sr: usize, weighting: LagWeighting) -> Result<f64> {
    if z.len() != y.len() {
        return Err(Error::shape(z.len(), y.len()));
    }
    ShiftEstimator::with_weighting(z.len(), f_sr, weighting)?.estimate(z, y)
}

/// Runs Dremel from `x0 = 0`.
pub fn dremel_reconstruct(y: &Sinogram, g: &Geometry, p: &DremelParams) -> Result<DremelResult> {
    dremel_reconstruct_from(y, g, p, Image::zeros(g.image_size()))
}

/// Runs Dremel from a given starting image. A known reference image fixes
/// the translation that data alone cannot determine.
pub fn dremel_reconstruct_from(y: &Sinogram, g: &Geometry, p: &DremelParams, x0: Image) -> Result<DremelResult> {
    p.validate()?;
    y.check_matches(g)?;
    if x0.size() != g.image_size() {
        return Err(Error::shape(g.image_size(), x0.size()));
    }
    let (num_angles, num_det) = (g.num_angles(), g.num_detectors());
    let h = g.pixel_width();
    let area = h * h;
    let spacing = g.detector_spacing();
    let estimator = ShiftEstimator::with_weighting(num_det, p.f_sr, p.weighting)?;

    let order = p.order.permutation(num_angles);
    let mut x = x0;
    let mut shifts = g.per_angle_detector_shift().to_vec();
    let mut history = Vec::with_capacity(p.max_iters);
    let mut fps = Vec::new();
    let mut forward = vec![0.0; num_det];

    for sweep in 0..p.max_iters {
        let correct = p.lambda != 0.0 && sweep >= p.warmup_sweeps;
        let mut res2 = 0.0;
        for &k in &order {
            angle_footprints(g, k, shifts[k], &mut fps);
            angle_step(x.data_mut(), &fps, y.row(k), p.omega, p.normalized, area, &mut forward);
            res2 += forward.iter().zip(y.row(k)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            if correct {
                let s = estimator.estimate(&forward, y.row(k))?;
                shifts[k] -= p.lambda * spacing * s;
            }
        }
        history.push(res2.sqrt());
    }
    Ok(DremelResult {
        image: x,
        shifts,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_geometry, GeometryKind};
    use crate::kaczmarz::{kaczmarz_reconstruct, KaczmarzParams};
    use crate::metrics::psnr;
    use crate::projector::project_full;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Trigonometric interpolation evaluated directly from the DFT sum.
    fn upsample_oracle(x: &[f64], f: usize) -> Vec<f64> {
        let n = x.len();
        let spec: Vec<(f64, f64)> = (0..n)
            .map(|j| {
                x.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, &v)| {
                    let a = -2.0 * PI * (i * j) as f64 / n as f64;
                    (re + v * a.cos(), im + v * a.sin())
                })
            })
            .collect();
        (0..n * f)
            .map(|m| {
                let t = m as f64 / f as f64;
                let mut acc = 0.0;
                for (j, &(re, im)) in spec.iter().enumerate() {
                    let freq = if 2 * j < n {
                        j as f64
                    } else if 2 * j > n {
                        j as f64 - n as f64
                    } else {
                        // Nyquist bin of an even length, split over +-n/2.
                        let a = 2.0 * PI * j as f64 * t / n as f64;
                        acc += re * a.cos();
                        continue;
                    };
                    let a = 2.0 * PI * freq * t / n as f64;
                    acc += re * a.cos() - im * a.sin();
                }
                acc / n as f64
            })
            .collect()
    }

    /// Brute force: direct circular correlation of the mean-free, zero-padded
    /// upsampled signals, cropped, weighted and searched.
    fn shift_oracle(z: &[f64], y: &[f64], f: usize, weighting: LagWeighting) -> f64 {
        let zu = upsample_oracle(z, f);
        let yu = upsample_oracle(y, f);
        let up = zu.len();
        let prep = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / up as f64;
            let mut out: Vec<f64> = v.iter().map(|a| a - m).collect();
            out.resize(2 * up, 0.0);
            out
        };
        let (zp, yp) = (prep(&zu), prep(&yu));
        let half = up / 2;
        let mut best: Option<(f64, i64)> = None;
        for lag in -(half as i64)..(up - half) as i64 {
            let c: f64 = (0..2 * up)
                .map(|i| yp[i] * zp[(i as i64 + lag).rem_euclid(2 * up as i64) as usize])
                .sum();
            let v = match weighting {
                LagWeighting::OverlapCount => {
                    c * up as f64 / (up as f64 - (lag.abs() as f64).min(0.9 * up as f64))
                }
                LagWeighting::OverlapEnergy => {
                    let (mut e_y, mut e_z) = (0.0, 0.0);
                    for i in 0..up as i64 {
                        let j = i + lag;
                        if (0..up as i64).contains(&j) {
                            e_y += yp[i as usize].powi(2);
                            e_z += zp[j as usize].powi(2);
                        }
                    }
                    c / (e_y * e_z).sqrt()
                }
            };
            best = match best {
                None => Some((v, lag)),
                Some((bv, _)) if v > bv + 1e-9 * bv.abs().max(1e-300) => Some((v, lag)),
                Some((bv, bl)) if (v - bv).abs() <= 1e-9 * bv.abs() && lag.abs() < bl.abs() => {
                    Some((v, lag))
                }
                keep => keep,
            };
        }
        best.unwrap().1 as f64 / f as f64
    }

    fn impulse(n: usize, at: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        v
    }

    fn bump(n: usize, center: f64, width: f64) -> Vec<f64> {
        (0..n).map(|i| (-((i as f64 - center) / width).powi(2)).exp()).collect()
    }

    #[test]
    fn impulse_example() {
        let s = shift_cross_corr(&impulse(31, 14), &impulse(31, 10), 2).unwrap();
        assert_eq!(s, 4.0);
        for w in [LagWeighting::OverlapEnergy, LagWeighting::OverlapCount] {
            assert_eq!(shift_cross_corr_with(&impulse(31, 14), &impulse(31, 10), 2, w).unwrap(), 4.0);
            assert_eq!(shift_oracle(&impulse(31, 14), &impulse(31, 10), 2, w), 4.0);
        }
    }

    #[test]
    fn identical_and_constant_inputs() {
        let y = bump(31, 12.3, 3.0);
        assert_eq!(shift_cross_corr(&y, &y, 2).unwrap(), 0.0);
        assert_eq!(shift_cross_corr(&[2.0; 31], &y, 2).unwrap(), 0.0);
        assert_eq!(shift_cross_corr(&y, &[0.0; 31], 2).unwrap(), 0.0);
        assert!(shift_cross_corr(&y, &y[..30], 2).is_err());
        assert!(shift_cross_corr(&y, &y, 0).is_err());
    }

    #[test]
    fn upsampling_matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (n, f) in [(31, 2), (30, 2), (9, 3), (8, 1)] {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let est = ShiftEstimator::new(n, f).unwrap();
            let got = est.upsample(&x);
            let want = upsample_oracle(&x, f);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "n={n} f={f}");
            }
            // Original samples are interpolated exactly.
            for i in 0..n {
                assert!((got[i * f] - x[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn integer_shifts_recovered() {
        let n = 31;
        for s in -10i64..=10 {
            let y = impulse(n, 15);
            let z = impulse(n, (15 + s) as usize);
            assert!((shift_cross_corr(&z, &y, 2).unwrap() - s as f64).abs() <= 0.5, "impulse {s}");
            let y = bump(n, 15.0, 2.5);
            let z = bump(n, 15.0 + s as f64, 2.5);
            assert!((shift_cross_corr(&z, &y, 2).unwrap() - s as f64).abs() <= 0.5, "bump {s}");
        }
        // Circular shift by +3.
        let y = bump(n, 10.0, 2.0);
        let z: Vec<f64> = (0..n).map(|i| y[(i + n - 3) % n]).collect();
        assert!((shift_cross_corr(&z, &y, 2).unwrap() - 3.0).abs() <= 0.5);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for w in [LagWeighting::OverlapEnergy, LagWeighting::OverlapCount] {
            for _ in 0..50 {
                let z: Vec<f64> = (0..31).map(|_| rng.random_range(0.0..1.0)).collect();
                let y: Vec<f64> = (0..31).map(|_| rng.random_range(0.0..1.0)).collect();
                assert_eq!(shift_cross_corr_with(&z, &y, 2, w).unwrap(), shift_oracle(&z, &y, 2, w));
            }
        }
    }

    #[test]
    fn self_correlation_peaks_at_zero_for_projection_rows() {
        let n = 48;
        let g = make_geometry(GeometryKind::Parallel, 36, 69, None, n).unwrap();
        let x = Image::from_fn(n, |x, y| if (x / 0.7).powi(2) + (y / 0.5).powi(2) <= 1.0 { 0.6 } else { 0.0 });
        let y = project_full(&x, &g).unwrap();
        for k in 0..36 {
            assert_eq!(shift_cross_corr(y.row(k), y.row(k), 2).unwrap(), 0.0, "angle {k}");
        }
    }

    #[test]
    fn antisymmetric_for_impulses() {
        for (a, b) in [(3, 20), (15, 15), (7, 9), (25, 5)] {
            let (za, yb) = (impulse(31, a), impulse(31, b));
            let fwd = shift_cross_corr(&za, &yb, 2).unwrap();
            let back = shift_cross_corr(&yb, &za, 2).unwrap();
            assert!((fwd + back).abs() <= 0.5, "{a} {b}: {fwd} {back}");
        }
    }

    #[test]
    fn zero_lambda_is_plain_kaczmarz() {
        let n = 24;
        let g = make_geometry(GeometryKind::Parallel, 30, 35, None, n).unwrap();
        let x = Image::from_fn(n, |x, y| if x * x + 2.0 * y * y < 0.5 { 0.7 } else { 0.0 });
        let y = project_full(&x, &g).unwrap();
        let d = dremel_reconstruct(&y, &g, &DremelParams { lambda: 0.0, max_iters: 5, ..Default::default() }).unwrap();
        let k = kaczmarz_reconstruct(&y, &g, &KaczmarzParams { sweeps: 5, ..Default::default() }).unwrap();
        assert_eq!(d.image.data(), k.data());
        assert!(d.shifts.iter().all(|&s| s == 0.0));
        assert_eq!(d.residual_history.len(), 5);
    }

    #[test]
    fn clean_data_keeps_shifts_small() {
        let n = 48;
        let g = make_geometry(GeometryKind::Parallel, 72, 69, None, n).unwrap();
        let x = Image::from_fn(n, |x, y| {
            let mut v = 0.0;
            if (x / 0.7).powi(2) + (y / 0.5).powi(2) <= 1.0 {
                v = 0.6;
            }
            if (x - 0.2).powi(2) + (y + 0.1).powi(2) <= 0.04 {
                v = 1.0;
            }
            v
        });
        let y = project_full(&x, &g).unwrap();
        let p = DremelParams { max_iters: 10, ..Default::default() };
        let d = dremel_reconstruct(&y, &g, &p).unwrap();
        let k = kaczmarz_reconstruct(&y, &g, &KaczmarzParams { sweeps: 10, ..Default::default() }).unwrap();
        let max_px = d.shifts.iter().map(|s| s.abs()).fold(0.0, f64::max) / g.detector_spacing();
        assert!(max_px <= 0.5, "max shift {max_px} px");
        let (pd, pk) = (psnr(&x, &d.image, 1.0).unwrap(), psnr(&x, &k, 1.0).unwrap());
        assert!((pd - pk).abs() <= 0.5, "{pd} vs {pk}");
    }
}
