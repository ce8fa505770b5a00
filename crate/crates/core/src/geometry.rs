//! Images on the square domain [-1, 1]^2, acquisition geometries and the
//! discretized L2 inner product shared by all solvers.
//!
//! Coordinates: pixel `(row, col)` of an `n x n` image has its center at
//! `x = -1 + (col + 0.5) h`, `y = -1 + (row + 0.5) h` with `h = 2 / n`.
//! A projection angle `theta` has ray direction `(cos theta, sin theta)` and
//! detector axis `(-sin theta, cos theta)`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detector extent margin over the circumscribed circle of the image.
pub const DETECTOR_MARGIN: f64 = 1.05;

/// Magnification of the flat fan-beam detector (source-to-detector 2D,
/// source-to-object D).
pub const FAN_MAGNIFICATION: f64 = 2.0;

/// Square density raster on [-1, 1]^2, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    size: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn filled(size: usize, value: f64) -> Self {
        Self {
            size,
            data: vec![value; size * size],
        }
    }

    pub fn from_vec(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::shape(
                format!("{} values for a {size}x{size} image", size * size),
                data.len(),
            ));
        }
        Ok(Self { size, data })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel center.
    pub fn from_fn(size: usize, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let h = 2.0 / size as f64;
        let mut data = Vec::with_capacity(size * size);
        for row in 0..size {
            let y = -1.0 + (row as f64 + 0.5) * h;
            for col in 0..size {
                let x = -1.0 + (col as f64 + 0.5) * h;
                data.push(f(x, y));
            }
        }
        Self { size, data }
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Pixel width `h = 2 / size` in domain units.
    #[inline]
    pub fn pixel_width(&self) -> f64 {
        2.0 / self.size as f64
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.size + col] = value;
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Norm induced by [`inner_x`].
    pub fn norm_x(&self) -> f64 {
        let h = self.pixel_width();
        h * self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, factor: f64, other: &Image) -> Result<()> {
        check_same_size(self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Rounds every value to the nearest `f32`, the on-disk precision.
    pub fn quantize_f32(&mut self) {
        self.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

fn check_same_size(a: &Image, b: &Image) -> Result<()> {
    if a.size != b.size {
        return Err(Error::shape(
            format!("{0}x{0} image", a.size),
            format!("{0}x{0} image", b.size),
        ));
    }
    Ok(())
}

/// Discretized L2([-1,1]^2) inner product `h^2 * sum(a_i b_i)`.
pub fn inner_x(a: &Image, b: &Image) -> Result<f64> {
    check_same_size(a, b)?;
    let h = a.pixel_width();
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
    Ok(h * h * sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Parallel,
    Fan,
}

impl std::str::FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Self::Parallel),
            "fan" => Ok(Self::Fan),
            other => Err(Error::InvalidGeometry(format!(
                "unknown geometry kind {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Parallel => "parallel",
            Self::Fan => "fan",
        })
    }
}

/// The parameters a geometry is built from; this is what gets serialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub kind: GeometryKind,
    #[serde(rename = "K")]
    pub num_angles: usize,
    #[serde(rename = "L")]
    pub num_detectors: usize,
    #[serde(rename = "D_pixels")]
    pub source_radius_pixels: Option<f64>,
    pub image_size: usize,
}

impl GeometrySpec {
    /// Standard acquisition for the given image size. At 255 pixels this is
    /// 567 angles x 363 detectors (parallel) or 133 x 723 with D = 7773.4
    /// pixel widths (fan); other sizes scale proportionally.
    pub fn standard(kind: GeometryKind, image_size: usize) -> Self {
        let scale = image_size as f64 / 255.0;
        let odd = |v: f64| 2 * ((v / 2.0).floor() as usize) + 1;
        match kind {
            GeometryKind::Parallel => Self {
                kind,
                num_angles: ((567.0 * scale).round() as usize).max(1),
                num_detectors: odd(363.0 * scale),
                source_radius_pixels: None,
                image_size,
            },
            GeometryKind::Fan => Self {
                kind,
                num_angles: ((133.0 * scale).round() as usize).max(1),
                num_detectors: odd(723.0 * scale),
                source_radius_pixels: Some(7773.4 * scale),
                image_size,
            },
        }
    }

    pub fn build(&self) -> Result<Geometry> {
        make_geometry(
            self.kind,
            self.num_angles,
            self.num_detectors,
            self.source_radius_pixels,
            self.image_size,
        )
    }
}

/// A single ray as a segment `origin + s * dir`, `s in [0, length]`.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: [f64; 2],
    pub dir: [f64; 2],
    pub length: f64,
}

/// Parallel- or fan-beam acquisition geometry.
///
/// Detector offsets are in object-plane units for both kinds; for fan beam
/// the physical detector coordinate is `FAN_MAGNIFICATION` times larger.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    spec: GeometrySpec,
    angles: Vec<f64>,
    detector_offsets: Vec<f64>,
    detector_spacing: f64,
    source_radius: Option<f64>,
    per_angle_detector_shift: Vec<f64>,
}

/// Builds a geometry; `source_radius_pixels` is required for fan beam and is
/// given in reconstruction pixel widths.
pub fn make_geometry(
    kind: GeometryKind,
    num_angles: usize,
    num_detectors: usize,
    source_radius_pixels: Option<f64>,
    image_size: usize,
) -> Result<Geometry> {
    if num_angles == 0 || num_detectors == 0 || image_size == 0 {
        return Err(Error::InvalidGeometry(format!(
            "angles ({num_angles}), detectors ({num_detectors}) and image size \
             ({image_size}) must be positive"
        )));
    }
    let h = 2.0 / image_size as f64;
    let circle = SQRT_2 * DETECTOR_MARGIN;

    let (angles, half_extent, source_radius) = match kind {
        GeometryKind::Parallel => {
            let step = PI / num_angles as f64;
            let angles = (0..num_angles).map(|k| k as f64 * step).collect();
            (angles, circle, None)
        }
        GeometryKind::Fan => {
            let d_pixels = source_radius_pixels.ok_or_else(|| {
                Error::InvalidGeometry("fan beam needs a source radius".into())
            })?;
            let d = d_pixels * h;
            if !(d > circle) {
                return Err(Error::InvalidGeometry(format!(
                    "source radius {d} lies inside the reconstruction circle {circle}"
                )));
            }
            let step = 2.0 * PI / num_angles as f64;
            let angles = (0..num_angles).map(|k| k as f64 * step).collect();
            // Tangent to the circle of radius sqrt(2) seen from the source,
            // measured on the object plane.
            let tangent = SQRT_2 * d / (d * d - 2.0).sqrt();
            (angles, DETECTOR_MARGIN * tangent, Some(d))
        }
    };

    let (spacing, detector_offsets) = if num_detectors == 1 {
        (2.0 * half_extent, vec![0.0])
    } else {
        let spacing = 2.0 * half_extent / (num_detectors - 1) as f64;
        let center = (num_detectors - 1) as f64 / 2.0;
        let offsets = (0..num_detectors)
            .map(|l| (l as f64 - center) * spacing)
            .collect();
        (spacing, offsets)
    };

    Ok(Geometry {
        spec: GeometrySpec {
            kind,
            num_angles,
            num_detectors,
            source_radius_pixels: match kind {
                GeometryKind::Parallel => None,
                GeometryKind::Fan => source_radius_pixels,
            },
            image_size,
        },
        angles,
        detector_offsets,
        detector_spacing: spacing,
        source_radius,
        per_angle_detector_shift: vec![0.0; num_angles],
    })
}

impl Geometry {
    #[inline]
    pub fn spec(&self) -> &GeometrySpec {
        &self.spec
    }

    #[inline]
    pub fn kind(&self) -> GeometryKind {
        self.spec.kind
    }

    #[inline]
    pub fn num_angles(&self) -> usize {
        self.spec.num_angles
    }

    #[inline]
    pub fn num_detectors(&self) -> usize {
        self.spec.num_detectors
    }

    #[inline]
    pub fn image_size(&self) -> usize {
        self.spec.image_size
    }

    pub fn pixel_width(&self) -> f64 {
        2.0 / self.spec.image_size as f64
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn detector_offsets(&self) -> &[f64] {
        &self.detector_offsets
    }

    /// Spacing of detector cells in object-plane units.
    pub fn detector_spacing(&self) -> f64 {
        self.detector_spacing
    }

    /// Source radius in domain units (fan beam only).
    pub fn source_radius(&self) -> Option<f64> {
        self.source_radius
    }

    pub fn per_angle_detector_shift(&self) -> &[f64] {
        &self.per_angle_detector_shift
    }

    /// Ratio between physical detector and object-plane coordinates.
    pub fn magnification(&self) -> f64 {
        match self.spec.kind {
            GeometryKind::Parallel => 1.0,
            GeometryKind::Fan => FAN_MAGNIFICATION,
        }
    }

    /// Returns a copy with the given per-angle detector shifts (domain units).
    pub fn with_detector_shifts(&self, shifts: Vec<f64>) -> Result<Self> {
        if shifts.len() != self.num_angles() {
            return Err(Error::shape(self.num_angles(), shifts.len()));
        }
        Ok(Self {
            per_angle_detector_shift: shifts,
            ..self.clone()
        })
    }

    /// Ray direction and detector axis of angle `k`.
    #[inline]
    pub fn frame(&self, k: usize) -> ([f64; 2], [f64; 2]) {
        let (s, c) = self.angles[k].sin_cos();
        ([c, s], [-s, c])
    }

    /// Ray `(k, l)` using the geometry's own detector shift for angle `k`.
    #[inline]
    pub fn ray(&self, k: usize, l: usize) -> Ray {
        self.ray_with_shift(k, l, self.per_angle_detector_shift[k])
    }

    /// Ray `(k, l)` with an explicit detector shift. A shift `s` moves the
    /// recorded profile by `+s` along the detector axis, i.e. cell `l`
    /// observes the line that crosses the object plane at `t_l - s`.
    pub fn ray_with_shift(&self, k: usize, l: usize, shift: f64) -> Ray {
        let (d, e) = self.frame(k);
        let t = self.detector_offsets[l] - shift;
        match self.source_radius {
            None => {
                // Any segment longer than the domain diagonal works.
                let reach = 3.0;
                Ray {
                    origin: [t * e[0] - reach * d[0], t * e[1] - reach * d[1]],
                    dir: d,
                    length: 2.0 * reach,
                }
            }
            Some(radius) => {
                let m = FAN_MAGNIFICATION;
                let source = [-radius * d[0], -radius * d[1]];
                let target = [
                    radius * d[0] + m * t * e[0],
                    radius * d[1] + m * t * e[1],
                ];
                let v = [target[0] - source[0], target[1] - source[1]];
                let length = v[0].hypot(v[1]);
                Ray {
                    origin: source,
                    dir: [v[0] / length, v[1] / length],
                    length,
                }
            }
        }
    }
}
