//! Rigid per-angle object motion: a deterministic sum of damped sinusoids
//! plus Gaussian jitter in translation and rotation, and the image warp that
//! applies one such motion.
//!
//! For angle `phi` the object seen by the scanner is
//! `x_perturbed(r) = x(R(rot) r + shift)` where `shift = eps(phi) + xi_r(phi)`
//! (pixels) and `rot = xi_rot(phi)` (degrees).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, GeometryKind, Image};

/// Number of superposed sinusoids used for each geometry kind.
pub fn sinusoid_count(kind: GeometryKind) -> usize {
    match kind {
        GeometryKind::Parallel => 38,
        GeometryKind::Fan => 9,
    }
}

/// One damped sinusoid `a exp(-d u) sin(w u)` for `u >= 0`, zero before its
/// start. `u` is the angular distance from `start` as a fraction of the full
/// sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidParams {
    /// Start angle in radians.
    pub start: f64,
    /// Amplitude per component, pixels.
    pub amplitude: [f64; 2],
    /// Angular frequency, radians per full sweep.
    pub frequency: f64,
    /// Damping rate per full sweep.
    pub damping: f64,
}

impl SinusoidParams {
    pub fn eval(&self, phi: f64, sweep: f64) -> [f64; 2] {
        if phi < self.start {
            return [0.0, 0.0];
        }
        let u = (phi - self.start) / sweep;
        let v = (-self.damping * u).exp() * (self.frequency * u).sin();
        [self.amplitude[0] * v, self.amplitude[1] * v]
    }
}

/// Standard deviations of the per-angle jitter, drawn once per trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterStd {
    pub r1: f64,
    pub r2: f64,
    /// Degrees.
    pub rot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationParams {
    /// Overrides the geometry-dependent sinusoid count.
    pub sinusoids: Option<usize>,
    pub amplitude: (f64, f64),
    pub frequency: (f64, f64),
    pub damping: (f64, f64),
    /// Clip bound on each component of the sinusoid part, pixels.
    pub max_shift: f64,
    pub jitter_std_mean: f64,
    pub jitter_std_std: f64,
}

impl Default for PerturbationParams {
    fn default() -> Self {
        Self {
            sinusoids: None,
            amplitude: (0.1, 1.2),
            frequency: (2.0, 40.0),
            damping: (0.5, 6.0),
            max_shift: 2.0,
            jitter_std_mean: 0.127,
            jitter_std_std: 0.0254,
        }
    }
}

/// Rigid motion applied to the object at one angle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Motion {
    pub rot_deg: f64,
    pub shift_px: [f64; 2],
}

impl Motion {
    pub fn is_identity(&self) -> bool {
        self.rot_deg == 0.0 && self.shift_px == [0.0, 0.0]
    }

    /// The motion that undoes `self` under [`warp_image`].
    pub fn inverse(&self) -> Motion {
        let (s, c) = self.rot_deg.to_radians().sin_cos();
        let [a, b] = self.shift_px;
        // r -> R r + t is inverted by r -> R^T r - R^T t.
        Motion {
            rot_deg: -self.rot_deg,
            shift_px: [-(c * a + s * b), -(-s * a + c * b)],
        }
    }
}

/// Per-angle motion of one simulated scan. All arrays have length K and hold
/// `f32`-representable values so that the on-disk copy is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationTrajectory {
    pub eps_r: Vec<[f64; 2]>,
    pub xi_r: Vec<[f64; 2]>,
    pub xi_rot: Vec<f64>,
    pub sinusoids: Vec<SinusoidParams>,
    pub jitter_std: JitterStd,
    pub seed: u64,
}

impl PerturbationTrajectory {
    /// The trajectory without any motion.
    pub fn zero(num_angles: usize) -> Self {
        Self {
            eps_r: vec![[0.0; 2]; num_angles],
            xi_r: vec![[0.0; 2]; num_angles],
            xi_rot: vec![0.0; num_angles],
            sinusoids: Vec::new(),
            jitter_std: JitterStd {
                r1: 0.0,
                r2: 0.0,
                rot: 0.0,
            },
            seed: 0,
        }
    }

    /// Same global translation (pixels) at every angle.
    pub fn constant_shift(num_angles: usize, shift_px: [f64; 2]) -> Self {
        Self {
            eps_r: vec![shift_px; num_angles],
            ..Self::zero(num_angles)
        }
    }

    pub fn len(&self) -> usize {
        self.xi_rot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi_rot.is_empty()
    }

    pub fn motion(&self, k: usize) -> Motion {
        Motion {
            rot_deg: self.xi_rot[k],
            shift_px: [
                self.eps_r[k][0] + self.xi_r[k][0],
                self.eps_r[k][1] + self.xi_r[k][1],
            ],
        }
    }

    /// Multiplies every motion component by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let scale2 = |v: &Vec<[f64; 2]>| v.iter().map(|p| [alpha * p[0], alpha * p[1]]).collect();
        Self {
            eps_r: scale2(&self.eps_r),
            xi_r: scale2(&self.xi_r),
            xi_rot: self.xi_rot.iter().map(|v| alpha * v).collect(),
            ..self.clone()
        }
    }

    /// Rows of `[eps_r1, eps_r2, xi_r1, xi_r2, xi_rot]`.
    pub fn to_columns(&self) -> Vec<[f64; 5]> {
        (0..self.len())
            .map(|k| {
                [
                    self.eps_r[k][0],
                    self.eps_r[k][1],
                    self.xi_r[k][0],
                    self.xi_r[k][1],
                    self.xi_rot[k],
                ]
            })
            .collect()
    }

    pub fn from_columns(
        rows: &[[f64; 5]],
        sinusoids: Vec<SinusoidParams>,
        jitter_std: JitterStd,
        seed: u64,
    ) -> Self {
        Self {
            eps_r: rows.iter().map(|r| [r[0], r[1]]).collect(),
            xi_r: rows.iter().map(|r| [r[2], r[3]]).collect(),
            xi_rot: rows.iter().map(|r| r[4]).collect(),
            sinusoids,
            jitter_std,
            seed,
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws from `N(mean, std^2)` conditioned on a non-negative result.
fn truncated_normal(rng: &mut impl Rng, normal: &Normal<f64>) -> f64 {
    loop {
        let v = normal.sample(rng);
        if v >= 0.0 {
            return v;
        }
    }
}

fn angular_sweep(g: &Geometry) -> f64 {
    match g.kind() {
        GeometryKind::Parallel => std::f64::consts::PI,
        GeometryKind::Fan => std::f64::consts::TAU,
    }
}

/// Deterministic trajectory for `seed` with explicit parameters.
pub fn generate_trajectory_with(
    seed: u64,
    g: &Geometry,
    params: &PerturbationParams,
) -> Result<PerturbationTrajectory> {
    let std_dist = Normal::new(params.jitter_std_mean, params.jitter_std_std)
        .map_err(|e| Error::InvalidParameter(format!("jitter std distribution: {e}")))?;
    if !(params.max_shift >= 0.0) {
        return Err(Error::InvalidParameter("max_shift must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let jitter_std = JitterStd {
        r1: truncated_normal(&mut rng, &std_dist),
        r2: truncated_normal(&mut rng, &std_dist),
        rot: truncated_normal(&mut rng, &std_dist),
    };

    let sweep = angular_sweep(g);
    let count = params.sinusoids.unwrap_or_else(|| sinusoid_count(g.kind()));
    let sinusoids: Vec<SinusoidParams> = (0..count)
        .map(|_| {
            let mut amp = || {
                let a = uniform(&mut rng, params.amplitude);
                if rng.random_bool(0.5) {
                    a
                } else {
                    -a
                }
            };
            let amplitude = [amp(), amp()];
            SinusoidParams {
                start: rng.random_range(0.0..sweep),
                amplitude,
                frequency: uniform(&mut rng, params.frequency),
                damping: uniform(&mut rng, params.damping),
            }
        })
        .collect();

    let q = |v: f64| v as f32 as f64;
    let clip = params.max_shift;
    let eps_r = g
        .angles()
        .iter()
        .map(|&phi| {
            let mut e = [0.0; 2];
            for s in &sinusoids {
                let v = s.eval(phi, sweep);
                e[0] += v[0];
                e[1] += v[1];
            }
            [q(e[0].clamp(-clip, clip)), q(e[1].clamp(-clip, clip))]
        })
        .collect();

    let k = g.num_angles();
    let mut xi_r = Vec::with_capacity(k);
    let mut xi_rot = Vec::with_capacity(k);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for _ in 0..k {
        let a = jitter_std.r1 * unit.sample(&mut rng);
        let b = jitter_std.r2 * unit.sample(&mut rng);
        let c = jitter_std.rot * unit.sample(&mut rng);
        xi_r.push([q(a), q(b)]);
        xi_rot.push(q(c));
    }

    Ok(PerturbationTrajectory {
        eps_r,
        xi_r,
        xi_rot,
        sinusoids,
        jitter_std,
        seed,
    })
}

/// Deterministic trajectory for `seed`: 38 sinusoids for parallel beam, 9
/// for fan beam, jitter stds from `N(0.127, 0.0254^2)`.
pub fn generate_trajectory(seed: u64, g: &Geometry) -> Result<PerturbationTrajectory> {
    generate_trajectory_with(seed, g, &PerturbationParams::default())
}

/// `out(r) = x(R(rot) r + shift * h)` with bilinear interpolation and zero
/// outside the image.
pub fn warp_image(x: &Image, motion: Motion) -> Image {
    if motion.is_identity() {
        return x.clone();
    }
    let n = x.size();
    let c = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = motion.rot_deg.to_radians().sin_cos();
    let [tx, ty] = motion.shift_px;
    let src = x.data();
    let fetch = |row: isize, col: isize| -> f64 {
        if row < 0 || col < 0 || row >= n as isize || col >= n as isize {
            0.0
        } else {
            src[row as usize * n + col as usize]
        }
    };

    let mut out = Image::zeros(n);
    let dst = out.data_mut();
    for row in 0..n {
        let py = row as f64 - c;
        for col in 0..n {
            let px = col as f64 - c;
            let sx = cos * px - sin * py + tx + c;
            let sy = sin * px + cos * py + ty + c;
            if !(sx > -1.0 && sy > -1.0 && sx < n as f64 && sy < n as f64) {
                continue;
            }
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (c0, r0) = (x0 as isize, y0 as isize);
            let mut acc = 0.0;
            for (dr, wy) in [(0, 1.0 - fy), (1, fy)] {
                if wy == 0.0 {
                    continue;
                }
                for (dc, wx) in [(0, 1.0 - fx), (1, fx)] {
                    if wx == 0.0 {
                        continue;
                    }
                    acc += wy * wx * fetch(r0 + dr, c0 + dc);
                }
            }
            dst[row * n + col] = acc;
        }
    }
    out
}
