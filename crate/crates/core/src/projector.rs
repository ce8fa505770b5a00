//! Forward projection along rays with exact pixel intersection lengths and
//! the matching adjoints.
//!
//! Rays are traced cell by cell: starting from the entry point into
//! [-1, 1]^2, the next crossing of a vertical and of a horizontal grid line
//! is computed from the current cell index, and the shorter of the two
//! advances the walk. Each visited cell receives the length of the segment
//! inside it. Adjoints are taken with respect to the weighted image inner
//! product `h^2 sum(a_i b_i)` and the plain Euclidean sinogram inner product.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Image, Ray};

/// K x L matrix of line integrals, row `k` is one projection angle.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    num_angles: usize,
    num_detectors: usize,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(num_angles: usize, num_detectors: usize) -> Self {
        Self {
            num_angles,
            num_detectors,
            data: vec![0.0; num_angles * num_detectors],
        }
    }

    pub fn zeros_for(g: &Geometry) -> Self {
        Self::zeros(g.num_angles(), g.num_detectors())
    }

    pub fn from_vec(num_angles: usize, num_detectors: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != num_angles * num_detectors {
            return Err(Error::shape(
                format!("{num_angles}x{num_detectors} sinogram"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            num_angles,
            num_detectors,
            data,
        })
    }

    #[inline]
    pub fn num_angles(&self) -> usize {
        self.num_angles
    }

    #[inline]
    pub fn num_detectors(&self) -> usize {
        self.num_detectors
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.num_detectors..(k + 1) * self.num_detectors]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.num_detectors..(k + 1) * self.num_detectors]
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.data[k * self.num_detectors + l]
    }

    pub fn check_matches(&self, g: &Geometry) -> Result<()> {
        if self.num_angles != g.num_angles() || self.num_detectors != g.num_detectors() {
            return Err(Error::shape(
                format!("{}x{} sinogram", g.num_angles(), g.num_detectors()),
                format!("{}x{}", self.num_angles, self.num_detectors),
            ));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Sinogram) -> Result<()> {
        if self.num_angles != other.num_angles || self.num_detectors != other.num_detectors {
            return Err(Error::shape(
                format!("{}x{} sinogram", self.num_angles, self.num_detectors),
                format!("{}x{}", other.num_angles, other.num_detectors),
            ));
        }
        Ok(())
    }

    /// Euclidean inner product over all rays.
    pub fn dot(&self, other: &Sinogram) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn quantize_f32(&mut self) {
        self.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

/// Sparse discretization of one ray: pixel indices and intersection lengths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayFootprint {
    pub pixels: Vec<u32>,
    pub weights: Vec<f64>,
}

impl RayFootprint {
    pub fn clear(&mut self) {
        self.pixels.clear();
        self.weights.clear();
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.pixels
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| (p as usize, w))
    }

    /// `sum_i w_i x_i`, the line integral of `x` along the ray.
    #[inline]
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.pixels
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * x[p as usize])
            .sum()
    }

    #[inline]
    pub fn squared_weights(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// `x[p] += factor * w_p` over the footprint.
    #[inline]
    pub fn axpy(&self, factor: f64, x: &mut [f64]) {
        for (&p, &w) in self.pixels.iter().zip(&self.weights) {
            x[p as usize] += factor * w;
        }
    }
}

/// Walks the ray through the `n x n` grid on [-1, 1]^2 and calls
/// `visit(pixel_index, length)` for every cell with positive length.
pub fn trace_ray(n: usize, ray: &Ray, mut visit: impl FnMut(usize, f64)) {
    let h = 2.0 / n as f64;
    let (p, d) = (ray.origin, ray.dir);

    let mut enter = 0.0f64;
    let mut exit = ray.length;
    for axis in 0..2 {
        if d[axis] == 0.0 {
            if p[axis] <= -1.0 || p[axis] >= 1.0 {
                return;
            }
        } else {
            let a = (-1.0 - p[axis]) / d[axis];
            let b = (1.0 - p[axis]) / d[axis];
            enter = enter.max(a.min(b));
            exit = exit.min(a.max(b));
        }
    }
    if exit <= enter {
        return;
    }

    let cell = |axis: usize| -> isize {
        let c = ((p[axis] + enter * d[axis] + 1.0) / h).floor() as isize;
        c.clamp(0, n as isize - 1)
    };
    let mut idx = [cell(0), cell(1)];
    let step = [
        if d[0] > 0.0 { 1 } else { -1 },
        if d[1] > 0.0 { 1 } else { -1 },
    ];
    // Parameter of the next grid line crossing along `axis`.
    let crossing = |axis: usize, i: isize| -> f64 {
        if d[axis] == 0.0 {
            f64::INFINITY
        } else {
            let line = if d[axis] > 0.0 { i + 1 } else { i };
            (-1.0 + line as f64 * h - p[axis]) / d[axis]
        }
    };

    let last = n as isize;
    let mut s = enter;
    loop {
        let cx = crossing(0, idx[0]);
        let cy = crossing(1, idx[1]);
        let next = cx.min(cy).min(exit);
        if next > s {
            visit(idx[1] as usize * n + idx[0] as usize, next - s);
            s = next;
        }
        if next >= exit {
            break;
        }
        if cx <= next {
            idx[0] += step[0];
            if idx[0] < 0 || idx[0] >= last {
                break;
            }
        }
        if cy <= next {
            idx[1] += step[1];
            if idx[1] < 0 || idx[1] >= last {
                break;
            }
        }
    }
}

/// Footprint of ray `(k, l)` with an explicit detector shift.
pub fn footprint_into(g: &Geometry, k: usize, l: usize, shift: f64, out: &mut RayFootprint) {
    out.clear();
    let ray = g.ray_with_shift(k, l, shift);
    trace_ray(g.image_size(), &ray, |p, w| {
        out.pixels.push(p as u32);
        out.weights.push(w);
    });
}

pub fn ray_footprint(g: &Geometry, k: usize, l: usize) -> RayFootprint {
    let mut fp = RayFootprint::default();
    footprint_into(g, k, l, g.per_angle_detector_shift()[k], &mut fp);
    fp
}

/// Footprints of every detector cell of angle `k` under a given shift.
pub fn angle_footprints(g: &Geometry, k: usize, shift: f64, out: &mut Vec<RayFootprint>) {
    out.resize_with(g.num_detectors(), RayFootprint::default);
    for (l, fp) in out.iter_mut().enumerate() {
        footprint_into(g, k, l, shift, fp);
    }
}

fn check_image(x: &Image, g: &Geometry) -> Result<()> {
    if x.size() != g.image_size() {
        return Err(Error::shape(
            format!("{0}x{0} image", g.image_size()),
            format!("{0}x{0}", x.size()),
        ));
    }
    Ok(())
}

fn check_ray(g: &Geometry, k: usize, l: usize) -> Result<()> {
    if k >= g.num_angles() || l >= g.num_detectors() {
        return Err(Error::InvalidParameter(format!(
            "ray ({k}, {l}) outside {}x{}",
            g.num_angles(),
            g.num_detectors()
        )));
    }
    Ok(())
}

/// Line integral of `x` along ray `(k, l)`, honouring the angle's detector shift.
pub fn project_ray(x: &Image, g: &Geometry, k: usize, l: usize) -> Result<f64> {
    check_image(x, g)?;
    check_ray(g, k, l)?;
    let mut acc = 0.0;
    let data = x.data();
    trace_ray(g.image_size(), &g.ray(k, l), |p, w| acc += w * data[p]);
    Ok(acc)
}

fn project_angle_into(x: &Image, g: &Geometry, k: usize, out: &mut [f64]) {
    let data = x.data();
    for (l, v) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        trace_ray(g.image_size(), &g.ray(k, l), |p, w| acc += w * data[p]);
        *v = acc;
    }
}

pub fn project_angle(x: &Image, g: &Geometry, k: usize) -> Result<Vec<f64>> {
    check_image(x, g)?;
    check_ray(g, k, 0)?;
    let mut out = vec![0.0; g.num_detectors()];
    project_angle_into(x, g, k, &mut out);
    Ok(out)
}

pub fn project_full(x: &Image, g: &Geometry) -> Result<Sinogram> {
    check_image(x, g)?;
    let mut sino = Sinogram::zeros_for(g);
    sino.data_mut()
        .par_chunks_mut(g.num_detectors())
        .enumerate()
        .for_each(|(k, row)| project_angle_into(x, g, k, row));
    Ok(sino)
}

/// `A_{k,l}^* w`: value `w * weight / h^2` on the footprint, zero elsewhere.
pub fn adjoint_ray(w: f64, g: &Geometry, k: usize, l: usize) -> Result<Image> {
    check_ray(g, k, l)?;
    let mut out = Image::zeros(g.image_size());
    let h = g.pixel_width();
    let scale = w / (h * h);
    let data = out.data_mut();
    trace_ray(g.image_size(), &g.ray(k, l), |p, len| data[p] += scale * len);
    Ok(out)
}

fn adjoint_angle_acc(w: &[f64], g: &Geometry, k: usize, data: &mut [f64]) {
    let h = g.pixel_width();
    let inv_area = 1.0 / (h * h);
    for (l, &wl) in w.iter().enumerate() {
        if wl == 0.0 {
            continue;
        }
        let scale = wl * inv_area;
        trace_ray(g.image_size(), &g.ray(k, l), |p, len| data[p] += scale * len);
    }
}

/// `A_{[k]}^* w = sum_l A_{k,l}^* w_l`.
pub fn adjoint_angle(w: &[f64], g: &Geometry, k: usize) -> Result<Image> {
    check_ray(g, k, 0)?;
    if w.len() != g.num_detectors() {
        return Err(Error::shape(g.num_detectors(), w.len()));
    }
    let mut out = Image::zeros(g.image_size());
    adjoint_angle_acc(w, g, k, out.data_mut());
    Ok(out)
}

/// Full adjoint `A^* y` (sum over all angles).
pub fn adjoint_full(y: &Sinogram, g: &Geometry) -> Result<Image> {
    y.check_matches(g)?;
    let mut out = Image::zeros(g.image_size());
    for k in 0..g.num_angles() {
        adjoint_angle_acc(y.row(k), g, k, out.data_mut());
    }
    Ok(out)
}
