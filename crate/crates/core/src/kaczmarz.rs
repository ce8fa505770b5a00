//! Kaczmarz / ART.
//!
//! Two step sizes are supported. Normalized steps project onto the ray's
//! hyperplane, `x -= omega * r_l / |a_l|^2 * a_l` with `a_l = A_{k,l}^* 1`;
//! for a pixel this is `-omega * r_l * w_p / sum(w^2)`. Unnormalized steps
//! apply the plain adjoint, `x -= omega * A_{k,l}^* r_l`, i.e.
//! `-omega * r_l * w_p / h^2`, which is only stable for tiny `omega`.
//!
//! Angles are visited in a fixed pseudo-random permutation by default.
//! Consecutive angles of a fine scan give nearly parallel hyperplanes, and
//! the natural order then converges very slowly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Image};
use crate::projector::{angle_footprints, footprint_into, RayFootprint, Sinogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepGranularity {
    /// One simultaneous update per projection angle.
    #[default]
    PerAngle,
    /// One update per ray, rays visited angle by angle.
    PerRay,
}

/// Order in which a sweep visits the projection angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleOrder {
    Sequential,
    /// One seeded permutation, reused by every sweep.
    Shuffled { seed: u64 },
}

impl Default for AngleOrder {
    fn default() -> Self {
        Self::Shuffled { seed: 0 }
    }
}

impl AngleOrder {
    pub fn permutation(self, num_angles: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..num_angles).collect();
        if let Self::Shuffled { seed } = self {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order
    }
}

impl std::str::FromStr for AngleOrder {
    type Err = Error;

    /// `sequential`, `shuffled` or `shuffled:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "sequential" => Ok(Self::Sequential),
            None if s == "shuffled" => Ok(Self::default()),
            Some(("shuffled", seed)) => seed
                .parse()
                .map(|seed| Self::Shuffled { seed })
                .map_err(|_| Error::InvalidParameter(format!("bad seed in {s:?}"))),
            _ => Err(Error::InvalidParameter(format!("unknown angle order {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KaczmarzParams {
    pub omega: f64,
    pub sweeps: usize,
    pub normalized: bool,
    pub granularity: StepGranularity,
    pub order: AngleOrder,
}

impl Default for KaczmarzParams {
    fn default() -> Self {
        Self {
            omega: 1.0,
            sweeps: 20,
            normalized: true,
            granularity: StepGranularity::PerAngle,
            order: AngleOrder::default(),
        }
    }
}

pub(crate) fn check_omega(omega: f64) -> Result<()> {
    if !(omega > 0.0 && omega < 2.0) {
        return Err(Error::InvalidParameter(format!("omega {omega} outside (0, 2)")));
    }
    Ok(())
}

/// Scale turning a residual into the per-weight update of one ray.
#[inline]
fn step_scale(fp: &RayFootprint, normalized: bool, pixel_area: f64) -> Option<f64> {
    if normalized {
        let norm2 = fp.squared_weights();
        (norm2 > 0.0).then(|| 1.0 / norm2)
    } else {
        (!fp.is_empty()).then(|| 1.0 / pixel_area)
    }
}

/// One ray update; returns the residual before the step.
#[inline]
pub fn ray_step(
    x: &mut [f64],
    fp: &RayFootprint,
    target: f64,
    omega: f64,
    normalized: bool,
    pixel_area: f64,
) -> f64 {
    let residual = fp.dot(x) - target;
    if let Some(scale) = step_scale(fp, normalized, pixel_area) {
        fp.axpy(-omega * residual * scale, x);
    }
    residual
}

/// Simultaneous update over all rays of one angle; `forward` receives the
/// projection of `x` before the step.
pub fn angle_step(
    x: &mut [f64],
    footprints: &[RayFootprint],
    target: &[f64],
    omega: f64,
    normalized: bool,
    pixel_area: f64,
    forward: &mut [f64],
) {
    for (f, fp) in forward.iter_mut().zip(footprints) {
        *f = fp.dot(x);
    }
    for ((fp, &f), &y) in footprints.iter().zip(forward.iter()).zip(target) {
        if let Some(scale) = step_scale(fp, normalized, pixel_area) {
            fp.axpy(-omega * (f - y) * scale, x);
        }
    }
}

/// Runs `sweeps` cyclic passes of per-row Kaczmarz on an explicit sparse
/// system.
pub fn kaczmarz_rows(
    rows: &[RayFootprint],
    rhs: &[f64],
    x: &mut [f64],
    omega: f64,
    sweeps: usize,
    normalized: bool,
    pixel_area: f64,
) -> Result<()> {
    check_omega(omega)?;
    if rows.len() != rhs.len() {
        return Err(Error::shape(rows.len(), rhs.len()));
    }
    for _ in 0..sweeps {
        for (fp, &y) in rows.iter().zip(rhs) {
            ray_step(x, fp, y, omega, normalized, pixel_area);
        }
    }
    Ok(())
}

/// ART reconstruction from `x0 = 0`.
pub fn kaczmarz_reconstruct(y: &Sinogram, g: &Geometry, p: &KaczmarzParams) -> Result<Image> {
    check_omega(p.omega)?;
    y.check_matches(g)?;
    let mut x = Image::zeros(g.image_size());
    let h = g.pixel_width();
    let area = h * h;
    let shifts = g.per_angle_detector_shift();
    let order = p.order.permutation(g.num_angles());
    match p.granularity {
        StepGranularity::PerAngle => {
            let mut fps = Vec::new();
            let mut forward = vec![0.0; g.num_detectors()];
            for _ in 0..p.sweeps {
                for &k in &order {
                    angle_footprints(g, k, shifts[k], &mut fps);
                    angle_step(x.data_mut(), &fps, y.row(k), p.omega, p.normalized, area, &mut forward);
                }
            }
        }
        StepGranularity::PerRay => {
            let mut fp = RayFootprint::default();
            for _ in 0..p.sweeps {
                for &k in &order {
                    for l in 0..g.num_detectors() {
                        footprint_into(g, k, l, shifts[k], &mut fp);
                        ray_step(x.data_mut(), &fp, y.get(k, l), p.omega, p.normalized, area);
                    }
                }
            }
        }
    }
    Ok(x)
}
