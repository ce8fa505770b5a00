//! Random phantoms: one main rectangle or ellipse holding up to three
//! subshapes, rasterized by pixel-center sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Image;

pub const MAX_SUBSHAPES: usize = 3;
pub const MIN_PHANTOM_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

/// A rotated rectangle or ellipse with constant density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub center: [f64; 2],
    pub half_axes: [f64; 2],
    pub rotation: f64,
    pub density: f64,
}

impl Shape {
    #[inline]
    fn local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let q = self.local(p);
        let [a, b] = self.half_axes;
        match self.kind {
            ShapeKind::Rectangle => q[0].abs() <= a && q[1].abs() <= b,
            ShapeKind::Ellipse => (q[0] / a).powi(2) + (q[1] / b).powi(2) <= 1.0,
        }
    }

    /// Half-widths of the axis-aligned bounding box.
    pub fn extent(&self) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let [a, b] = self.half_axes;
        match self.kind {
            ShapeKind::Rectangle => [(a * c).abs() + (b * s).abs(), (a * s).abs() + (b * c).abs()],
            ShapeKind::Ellipse => [
                ((a * c).powi(2) + (b * s).powi(2)).sqrt(),
                ((a * s).powi(2) + (b * c).powi(2)).sqrt(),
            ],
        }
    }

    /// Points on the boundary, dense enough to test containment in a
    /// convex parent.
    fn boundary(&self, inflate: f64) -> Vec<[f64; 2]> {
        let (s, c) = self.rotation.sin_cos();
        let [a, b] = [self.half_axes[0] * inflate, self.half_axes[1] * inflate];
        let local: Vec<[f64; 2]> = match self.kind {
            ShapeKind::Rectangle => vec![[a, b], [-a, b], [-a, -b], [a, -b]],
            ShapeKind::Ellipse => (0..64)
                .map(|i| {
                    let t = i as f64 * std::f64::consts::TAU / 64.0;
                    [a * t.cos(), b * t.sin()]
                })
                .collect(),
        };
        local
            .into_iter()
            .map(|[x, y]| [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y])
            .collect()
    }

    fn inside(&self, parent: &Shape) -> bool {
        // Ellipse boundaries bulge between samples; inflating a little keeps
        // the polygon test conservative.
        self.boundary(1.02).iter().all(|&p| parent.contains(p))
    }
}

/// Sampling ranges for random phantoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub main_half_axis: (f64, f64),
    pub density: (f64, f64),
    /// Subshape half-axes as a fraction of the parent's smaller half-axis.
    pub sub_scale: (f64, f64),
    pub max_subshapes: usize,
    pub placement_attempts: usize,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            main_half_axis: (0.35, 0.8),
            density: (0.2, 1.0),
            sub_scale: (0.1, 0.45),
            max_subshapes: MAX_SUBSHAPES,
            placement_attempts: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub main: Shape,
    pub subshapes: Vec<Shape>,
    pub seed: u64,
}

impl PhantomSpec {
    /// Density of the innermost shape containing `p`, 0 outside the main shape.
    pub fn density_at(&self, p: [f64; 2]) -> f64 {
        if !self.main.contains(p) {
            return 0.0;
        }
        self.subshapes
            .iter()
            .rev()
            .find(|s| s.contains(p))
            .map_or(self.main.density, |s| s.density)
    }

    pub fn rasterize(&self, size: usize) -> Image {
        Image::from_fn(size, |x, y| self.density_at([x, y]))
    }
}

fn random_kind(rng: &mut impl Rng) -> ShapeKind {
    if rng.random_bool(0.5) {
        ShapeKind::Rectangle
    } else {
        ShapeKind::Ellipse
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn random_main(rng: &mut impl Rng, p: &PhantomParams) -> Shape {
    let mut shape = Shape {
        kind: random_kind(rng),
        center: [0.0, 0.0],
        half_axes: [uniform(rng, p.main_half_axis), uniform(rng, p.main_half_axis)],
        rotation: rng.random_range(0.0..std::f64::consts::PI),
        density: uniform(rng, p.density),
    };
    let ext = shape.extent();
    let widest = ext[0].max(ext[1]);
    if widest > 0.98 {
        let shrink = 0.98 / widest;
        shape.half_axes = [shape.half_axes[0] * shrink, shape.half_axes[1] * shrink];
    }
    let ext = shape.extent();
    for axis in 0..2 {
        let room = 1.0 - ext[axis];
        shape.center[axis] = if room > 0.0 {
            rng.random_range(-room..room)
        } else {
            0.0
        };
    }
    shape
}

fn random_subshape(rng: &mut impl Rng, parent: &Shape, p: &PhantomParams) -> Option<Shape> {
    let base = parent.half_axes[0].min(parent.half_axes[1]);
    let mut shape = Shape {
        kind: random_kind(rng),
        center: parent.center,
        half_axes: [
            uniform(rng, p.sub_scale) * base,
            uniform(rng, p.sub_scale) * base,
        ],
        rotation: rng.random_range(0.0..std::f64::consts::PI),
        density: uniform(rng, p.density),
    };
    let ext = parent.extent();
    for _ in 0..p.placement_attempts {
        shape.center = [
            parent.center[0] + rng.random_range(-ext[0]..ext[0]),
            parent.center[1] + rng.random_range(-ext[1]..ext[1]),
        ];
        if shape.inside(parent) {
            return Some(shape);
        }
    }
    None
}

/// Draws a phantom specification from `seed` with explicit parameters.
pub fn random_phantom_spec(seed: u64, params: &PhantomParams) -> PhantomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let main = random_main(&mut rng, params);
    let count = rng.random_range(0..=params.max_subshapes.min(MAX_SUBSHAPES));
    let subshapes = (0..count)
        .filter_map(|_| random_subshape(&mut rng, &main, params))
        .collect();
    PhantomSpec {
        main,
        subshapes,
        seed,
    }
}

pub fn generate_phantom_with(
    seed: u64,
    size: usize,
    params: &PhantomParams,
) -> Result<(PhantomSpec, Image)> {
    if size < MIN_PHANTOM_SIZE {
        return Err(Error::InvalidParameter(format!(
            "phantom size {size} below minimum {MIN_PHANTOM_SIZE}"
        )));
    }
    let spec = random_phantom_spec(seed, params);
    let image = spec.rasterize(size);
    Ok((spec, image))
}

/// Deterministic random phantom for `seed` with default parameters.
pub fn generate_phantom(seed: u64, size: usize) -> Result<(PhantomSpec, Image)> {
    generate_phantom_with(seed, size, &PhantomParams::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_image() {
        let (s1, a) = generate_phantom(42, 64).unwrap();
        let (s2, b) = generate_phantom(42, 64).unwrap();
        assert_eq!(s1, s2);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn different_seeds_differ() {
        let (a, _) = generate_phantom(1, 32).unwrap();
        let (b, _) = generate_phantom(2, 32).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn values_in_unit_range_with_empty_background() {
        for seed in 0..50 {
            let (spec, img) = generate_phantom(seed, 64).unwrap();
            assert!(img.min() >= 0.0 && img.max() <= 1.0);
            let h = 2.0 / 64.0;
            for (i, &v) in img.data().iter().enumerate() {
                let p = [-1.0 + ((i % 64) as f64 + 0.5) * h, -1.0 + ((i / 64) as f64 + 0.5) * h];
                if !spec.main.contains(p) {
                    assert_eq!(v, 0.0);
                }
            }
            let ext = spec.main.extent();
            for axis in 0..2 {
                assert!(spec.main.center[axis].abs() + ext[axis] <= 1.0);
            }
        }
    }

    #[test]
    fn subshape_count_histogram() {
        let params = PhantomParams::default();
        let mut hist = [0usize; 4];
        for seed in 0..1000 {
            let spec = random_phantom_spec(seed, &params);
            assert!(spec.subshapes.len() <= MAX_SUBSHAPES);
            hist[spec.subshapes.len()] += 1;
            for sub in &spec.subshapes {
                assert!(sub.boundary(1.0).iter().all(|&p| spec.main.contains(p)));
            }
        }
        assert!(hist.iter().all(|&c| c > 0), "{hist:?}");
    }

    #[test]
    fn raster_is_innermost_density() {
        for seed in 0..20 {
            let (spec, img) = generate_phantom(seed, 48).unwrap();
            let h = 2.0 / 48.0;
            for row in 0..48 {
                for col in 0..48 {
                    let p = [-1.0 + (col as f64 + 0.5) * h, -1.0 + (row as f64 + 0.5) * h];
                    let mut expected = 0.0;
                    if spec.main.contains(p) {
                        expected = spec.main.density;
                        for s in &spec.subshapes {
                            if s.contains(p) {
                                expected = s.density;
                            }
                        }
                    }
                    assert_eq!(img.get(row, col), expected);
                }
            }
        }
    }

    #[test]
    fn rejects_tiny_images() {
        assert!(generate_phantom(0, 8).is_err());
    }
}
