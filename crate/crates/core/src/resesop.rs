//! RESESOP-Kaczmarz with two search directions.
//!
//! Each ray `(k, l)` with residual `w = A_{k,l} x - y` defines the stripe
//! `{ x : |<u, x> - alpha| <= xi }` with `u = A_{k,l}^* w`, `alpha = w y`
//! and `xi = (delta + eta_k) |w|`. A ray outside its discrepancy bound is
//! handled by projecting onto the stripe boundary along `u`, then (after the
//! first update of a run) correcting along the previous direction so that
//! the iterate also lands in the previous stripe.
//!
//! Directions are stored as sparse pixel values; inner products follow the
//! `h^2`-weighted image space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Image};
use crate::kaczmarz::AngleOrder;
use crate::projector::{footprint_into, RayFootprint, Sinogram};

/// When a run stops before the sweep cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// Every ray has met its bound at least once during the run; flags are
    /// never cleared.
    #[default]
    Cumulative,
    /// A single sweep found every ray inside its bound, so the iterate
    /// satisfies the discrepancy principle on exit.
    CleanSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResesopParams {
    pub tau: f64,
    pub delta: f64,
    pub eta_scale: f64,
    pub max_sweeps: usize,
    /// Absolute slack added to every discrepancy bound, so that exact
    /// (`eta = delta = 0`) problems can terminate in floating point.
    pub residual_floor: f64,
    pub order: AngleOrder,
    pub stop: StopRule,
}

impl Default for ResesopParams {
    fn default() -> Self {
        Self {
            tau: 1.1,
            delta: 0.0,
            eta_scale: 1.0,
            max_sweeps: 20,
            residual_floor: 1e-6,
            order: AngleOrder::default(),
            stop: StopRule::default(),
        }
    }
}

impl ResesopParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::InvalidParameter(format!("tau {} must exceed 1", self.tau)));
        }
        if !(self.eta_scale > 0.0) {
            return Err(Error::InvalidParameter(format!("eta scale {} must be positive", self.eta_scale)));
        }
        if !(self.delta >= 0.0) || !(self.residual_floor >= 0.0) {
            return Err(Error::InvalidParameter("delta and residual floor must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ResesopResult {
    pub image: Image,
    pub sweeps: usize,
    /// True when the stop rule fired before the sweep cap.
    pub converged: bool,
    /// Rays that violated their bound when visited, per sweep.
    pub violations: Vec<usize>,
}

/// Previous stripe `H(u_old, alpha_old, xi_old)`.
#[derive(Debug, Clone, Default)]
pub struct StripeState {
    /// Sparse pixel values of `u_old`.
    pub u_old: RayFootprint,
    pub u_norm2: f64,
    pub alpha_old: f64,
    pub xi_old: f64,
    pub valid: bool,
}

/// Working state of one reconstruction: the stored stripe plus a dense
/// scatter buffer of `u_old`, kept all-zero outside its support.
pub struct StripeStepper {
    pub stripe: StripeState,
    dense_old: Vec<f64>,
    pixel_area: f64,
}

/// What a single ray visit did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RayOutcome {
    Satisfied,
    /// Violating ray whose footprint is empty; nothing can be done.
    Degenerate,
    Updated { alpha: f64, xi: f64, t: f64 },
}

impl StripeStepper {
    pub fn new(num_pixels: usize, pixel_area: f64) -> Self {
        Self {
            stripe: StripeState::default(),
            dense_old: vec![0.0; num_pixels],
            pixel_area,
        }
    }

    /// `<u, v>` over the image space for sparse `u`.
    fn inner_sparse_dense(&self, u: &RayFootprint, v: &[f64]) -> f64 {
        self.pixel_area * u.dot(v)
    }

    /// Visits one ray; `bound` is `delta + eta_k`, `threshold` the full
    /// discrepancy bound for this ray.
    pub fn visit(&mut self, x: &mut [f64], fp: &RayFootprint, y: f64, bound: f64, threshold: f64) -> RayOutcome {
        let w = fp.dot(x) - y;
        if w.abs() <= threshold {
            return RayOutcome::Satisfied;
        }
        let s2 = fp.squared_weights();
        if s2 == 0.0 {
            return RayOutcome::Degenerate;
        }
        let area = self.pixel_area;
        let alpha = w * y;
        let xi = bound * w.abs();
        // u_new = w a with a_p = wt_p / h^2; |u_new|^2 = w^2 s2 / h^2.
        let u_new = RayFootprint {
            pixels: fp.pixels.clone(),
            weights: fp.weights.iter().map(|&v| w * v / area).collect(),
        };
        let nu2 = w * w * s2 / area;

        // x~ = x - |w| (|w| - bound) / |u|^2 u
        let step = w.abs() * (w.abs() - bound) / nu2;
        u_new.axpy(-step, x);

        let mut t = 0.0;
        if self.stripe.valid {
            let old = &self.stripe;
            let on_old = self.inner_sparse_dense(&old.u_old, x);
            let cross = self.inner_sparse_dense(&u_new, &self.dense_old);
            let denom = nu2 * old.u_norm2 - cross * cross;
            let target = if on_old > old.alpha_old + old.xi_old {
                Some(old.alpha_old + old.xi_old)
            } else if on_old < old.alpha_old - old.xi_old {
                Some(old.alpha_old - old.xi_old)
            } else {
                None
            };
            // Parallel directions leave nothing to correct.
            if let Some(target) = target {
                if denom > 1e-12 * nu2 * old.u_norm2 {
                    t = (on_old - target) / denom;
                }
            }
            if t != 0.0 {
                u_new.axpy(cross * t, x);
                self.stripe.u_old.axpy(-nu2 * t, x);
            }
        }

        for &p in &self.stripe.u_old.pixels {
            self.dense_old[p as usize] = 0.0;
        }
        u_new.axpy(1.0, &mut self.dense_old);
        self.stripe = StripeState {
            u_old: u_new,
            u_norm2: nu2,
            alpha_old: alpha,
            xi_old: xi,
            valid: true,
        };
        RayOutcome::Updated { alpha, xi, t }
    }
}

fn check_eta(eta: &[f64], g: &Geometry) -> Result<()> {
    if eta.len() != g.num_angles() {
        return Err(Error::shape(g.num_angles(), eta.len()));
    }
    if eta.iter().any(|&e| !(e >= 0.0)) {
        return Err(Error::InvalidParameter("eta must be non-negative".into()));
    }
    Ok(())
}

/// Discrepancy bound of one ray.
#[inline]
pub fn ray_threshold(tau: f64, delta: f64, eta: f64, floor: f64) -> f64 {
    tau * (delta + eta) + floor
}

/// Whether every ray satisfies `|A_{k,l} x - y_{k,l}| <= tau (delta + eta_k) + floor`,
/// together with the row-major mask of violating rays.
pub fn check_discrepancy(
    x: &Image,
    y: &Sinogram,
    eta: &[f64],
    g: &Geometry,
    tau: f64,
    delta: f64,
    floor: f64,
) -> Result<(bool, Vec<bool>)> {
    y.check_matches(g)?;
    check_eta(eta, g)?;
    let forward = crate::projector::project_full(x, g)?;
    let num_det = g.num_detectors();
    let mask: Vec<bool> = forward
        .data()
        .iter()
        .zip(y.data())
        .enumerate()
        .map(|(i, (a, b))| (a - b).abs() > ray_threshold(tau, delta, eta[i / num_det], floor))
        .collect();
    Ok((!mask.iter().any(|&v| v), mask))
}

/// Runs RESESOP from `x0 = 0` with per-angle inexactness `eta` (scaled by
/// `eta_scale`).
pub fn resesop_reconstruct(y: &Sinogram, eta: &[f64], g: &Geometry, p: &ResesopParams) -> Result<ResesopResult> {
    p.validate()?;
    y.check_matches(g)?;
    check_eta(eta, g)?;
    let n = g.image_size();
    let h = g.pixel_width();
    let shifts = g.per_angle_detector_shift();
    let mut x = Image::zeros(n);
    let mut stepper = StripeStepper::new(n * n, h * h);
    let mut fp = RayFootprint::default();
    let mut violations = Vec::new();
    let mut converged = false;
    let order = p.order.permutation(g.num_angles());
    let num_det = g.num_detectors();
    let mut ever_satisfied = vec![false; g.num_angles() * num_det];
    let mut pending = ever_satisfied.len();

    while violations.len() < p.max_sweeps {
        let mut violated = 0;
        for &k in &order {
            let bound = p.delta + p.eta_scale * eta[k];
            let threshold = ray_threshold(p.tau, p.delta, p.eta_scale * eta[k], p.residual_floor);
            for l in 0..num_det {
                footprint_into(g, k, l, shifts[k], &mut fp);
                if stepper.visit(x.data_mut(), &fp, y.get(k, l), bound, threshold) == RayOutcome::Satisfied {
                    let flag = &mut ever_satisfied[k * num_det + l];
                    if !*flag {
                        *flag = true;
                        pending -= 1;
                    }
                } else {
                    violated += 1;
                }
            }
        }
        violations.push(violated);
        let done = match p.stop {
            StopRule::Cumulative => pending == 0,
            StopRule::CleanSweep => violated == 0,
        };
        if done {
            converged = true;
            break;
        }
    }
    Ok(ResesopResult {
        image: x,
        sweeps: violations.len(),
        converged,
        violations,
    })
}
