//! Quick runtime checks of the numerical core, behind `motionct selftest`.
//!
//! Each check compares a library routine against an independent computation
//! (slab clipping for ray lengths, direct loops for maxima and residuals).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::estimate_eta;
use crate::dremel::shift_cross_corr;
use crate::geometry::{inner_x, make_geometry, Geometry, GeometryKind, Image, Ray};
use crate::kaczmarz::ray_step;
use crate::perturbation::{warp_image, Motion};
use crate::projector::{adjoint_full, project_full, ray_footprint, Sinogram};
use crate::resesop::{check_discrepancy, RayOutcome, StripeStepper};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelfTestReport {
    pub checks: Vec<CheckResult>,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &'static str, passed: bool, detail: String) {
        self.checks.push(CheckResult { name, passed, detail });
    }
}

fn random_image(n: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn random_sinogram(g: &Geometry, rng: &mut ChaCha8Rng) -> Sinogram {
    let data = (0..g.num_angles() * g.num_detectors())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Sinogram::from_vec(g.num_angles(), g.num_detectors(), data).expect("shape")
}

/// Length of `ray` inside the box `[lo, hi)`. A ray running along a cell
/// edge belongs to the cell above or to the right of it.
fn clip_length(ray: &Ray, lo: [f64; 2], hi: [f64; 2]) -> f64 {
    let (mut t0, mut t1) = (0.0f64, ray.length);
    for axis in 0..2 {
        let (o, d) = (ray.origin[axis], ray.dir[axis]);
        if d == 0.0 {
            if o < lo[axis] || o >= hi[axis] {
                return 0.0;
            }
            continue;
        }
        let (a, b) = ((lo[axis] - o) / d, (hi[axis] - o) / d);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 - t0).max(0.0)
}

fn adjoint_check(g: &Geometry, rng: &mut ChaCha8Rng, pairs: usize) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x = random_image(g.image_size(), rng);
        let w = random_sinogram(g, rng);
        let lhs = project_full(&x, g).and_then(|ax| ax.dot(&w)).expect("shapes");
        let rhs = inner_x(&x, &adjoint_full(&w, g).expect("shape")).expect("shape");
        let scale = x.norm_x() * w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    worst
}

fn dense_oracle_error(g: &Geometry, rng: &mut ChaCha8Rng) -> f64 {
    let n = g.image_size();
    let h = g.pixel_width();
    let x = random_image(n, rng);
    let got = project_full(&x, g).expect("shape");
    let mut worst = 0.0f64;
    for k in 0..g.num_angles() {
        for l in 0..g.num_detectors() {
            let ray = g.ray(k, l);
            let mut want = 0.0;
            for row in 0..n {
                for col in 0..n {
                    let lo = [-1.0 + col as f64 * h, -1.0 + row as f64 * h];
                    let hi = [lo[0] + h, lo[1] + h];
                    want += clip_length(&ray, lo, hi) * x.get(row, col);
                }
            }
            worst = worst.max((got.get(k, l) - want).abs() / (1.0 + want.abs()));
        }
    }
    worst
}

pub fn run_selftest() -> SelfTestReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_7e57);
    let mut report = SelfTestReport::default();

    let par = make_geometry(GeometryKind::Parallel, 45, 47, None, 32).expect("geometry");
    let fan = make_geometry(GeometryKind::Fan, 21, 47, Some(96.0), 32).expect("geometry");
    for (name, g) in [("adjoint (parallel)", &par), ("adjoint (fan)", &fan)] {
        let worst = adjoint_check(g, &mut rng, 20);
        report.push(name, worst <= 1e-8, format!("max relative gap {worst:.2e}"));
    }

    for (name, g) in [
        ("dense oracle (parallel)", make_geometry(GeometryKind::Parallel, 6, 15, None, 8)),
        ("dense oracle (fan)", make_geometry(GeometryKind::Fan, 6, 15, Some(24.0), 8)),
    ] {
        let worst = dense_oracle_error(&g.expect("geometry"), &mut rng);
        report.push(name, worst <= 1e-10, format!("max relative error {worst:.2e}"));
    }

    let impulse = |at: usize| {
        let mut v = vec![0.0; 31];
        v[at] = 1.0;
        v
    };
    let mut ok = shift_cross_corr(&impulse(14), &impulse(10), 2).ok() == Some(4.0);
    for s in -10i64..=10 {
        let est = shift_cross_corr(&impulse((15 + s) as usize), &impulse(15), 2).unwrap_or(f64::NAN);
        ok &= (est - s as f64).abs() <= 0.5;
    }
    report.push("shift cross-correlation", ok, "impulse shifts -10..=10".into());

    let g = make_geometry(GeometryKind::Parallel, 9, 13, None, 12).expect("geometry");
    let a = random_sinogram(&g, &mut rng);
    let b = random_sinogram(&g, &mut rng);
    let eta = estimate_eta(&a, &b).expect("shape");
    let mut ok = true;
    for (k, &e) in eta.iter().enumerate() {
        let mut m = 0.0f64;
        for l in 0..g.num_detectors() {
            m = m.max((a.get(k, l) - b.get(k, l)).abs());
        }
        ok &= m == e;
    }
    report.push("eta estimate", ok, "per-angle maxima against direct loop".into());

    let truth = Image::from_fn(12, |_, _| rng.random_range(0.0..1.0));
    let y = project_full(&truth, &g).expect("shape");
    let x = Image::from_fn(12, |_, _| rng.random_range(0.0..1.0));
    let eta: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..0.3)).collect();
    let (_, mask) = check_discrepancy(&x, &y, &eta, &g, 1.1, 0.0, 0.0).expect("shape");
    let mut ok = true;
    for k in 0..9 {
        for l in 0..13 {
            let r: f64 = ray_footprint(&g, k, l).iter().map(|(p, w)| w * x.data()[p]).sum::<f64>() - y.get(k, l);
            ok &= mask[k * 13 + l] == (r.abs() > 1.1 * eta[k]);
        }
    }
    report.push("discrepancy check", ok, "violation mask against direct loop".into());

    let mut worst = 0.0f64;
    let area = g.pixel_width().powi(2);
    let mut stepper = StripeStepper::new(144, area);
    let mut z: Vec<f64> = (0..144).map(|_| rng.random_range(0.0..1.0)).collect();
    for i in 0..60 {
        let fp = ray_footprint(&g, i % 9, 2 + (i * 7) % 9);
        if fp.is_empty() {
            continue;
        }
        let target = rng.random_range(0.0..2.0);
        let mut once = z.clone();
        ray_step(&mut once, &fp, target, 1.0, true, area);
        let mut twice = once.clone();
        ray_step(&mut twice, &fp, target, 1.0, true, area);
        worst = worst.max(once.iter().zip(&twice).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
        if let RayOutcome::Updated { alpha, xi, .. } = stepper.visit(&mut z, &fp, target, 0.01, 0.011) {
            let on = area * stepper.stripe.u_old.dot(&z);
            worst = worst.max((on - alpha - xi).abs() / (1.0 + alpha.abs() + xi));
        }
    }
    report.push("projection invariants", worst <= 1e-10, format!("max deviation {worst:.2e}"));

    let img = random_image(16, &mut rng);
    let same = warp_image(&img, Motion { rot_deg: 0.0, shift_px: [0.0, 0.0] }) == img;
    report.push("identity warp", same, "bit-exact".into());

    report
}
