//! Simulated acquisitions: clean sinograms from the static operator,
//! perturbed sinograms from the moving object, and the per-angle
//! inexactness estimate derived from the two.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio;
use crate::error::{Error, Result};
use crate::geometry::{Geometry, Image};
use crate::perturbation::{
    generate_trajectory_with, warp_image, PerturbationParams, PerturbationTrajectory,
};
use crate::phantom::{generate_phantom_with, PhantomParams, PhantomSpec};
use crate::projector::{project_angle, project_full, Sinogram};

/// One simulated scan.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub id: usize,
    pub seed: u64,
    pub phantom_spec: PhantomSpec,
    /// Ground truth (the static object).
    pub phantom: Image,
    /// `y^eta`: the static object seen through the known operator.
    pub clean: Sinogram,
    /// `y^delta`: the moving object; additive noise is zero.
    pub perturbed: Sinogram,
    pub trajectory: PerturbationTrajectory,
    pub eta: Vec<f64>,
}

/// Generation parameters recorded alongside a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub phantom: PhantomParams,
    pub perturbation: PerturbationParams,
}

/// Projects the object warped by the trajectory's motion at each angle.
pub fn simulate_perturbed_sinogram(
    x: &Image,
    traj: &PerturbationTrajectory,
    g: &Geometry,
) -> Result<Sinogram> {
    if traj.len() != g.num_angles() {
        return Err(Error::shape(
            format!("trajectory of {} angles", g.num_angles()),
            traj.len(),
        ));
    }
    let rows: Vec<Result<Vec<f64>>> = (0..g.num_angles())
        .into_par_iter()
        .map(|k| {
            let motion = traj.motion(k);
            if motion.is_identity() {
                project_angle(x, g, k)
            } else {
                project_angle(&warp_image(x, motion), g, k)
            }
        })
        .collect();
    let mut data = Vec::with_capacity(g.num_angles() * g.num_detectors());
    for row in rows {
        data.extend(row?);
    }
    Sinogram::from_vec(g.num_angles(), g.num_detectors(), data)
}

/// Per-angle maximum absolute deviation over all detector cells.
pub fn estimate_eta(y_delta: &Sinogram, y_eta: &Sinogram) -> Result<Vec<f64>> {
    y_delta.same_shape(y_eta)?;
    Ok((0..y_delta.num_angles())
        .map(|k| {
            y_delta
                .row(k)
                .iter()
                .zip(y_eta.row(k))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect())
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index`, computable without generating its predecessors.
pub fn sample_seed(global_seed: u64, index: usize) -> u64 {
    mix_seed(global_seed, index as u64)
}

pub(crate) fn phantom_seed(sample_seed: u64) -> u64 {
    mix_seed(sample_seed, 0x5048_414e) // "PHAN"
}

pub(crate) fn trajectory_seed(sample_seed: u64) -> u64 {
    mix_seed(sample_seed, 0x5452_414a) // "TRAJ"
}

/// Generates sample `id` from its seed. All stored arrays are rounded to
/// `f32` before `eta` is computed, so a written sample reads back exactly.
pub fn make_sample(id: usize, seed: u64, g: &Geometry, config: &DatasetConfig) -> Result<DatasetSample> {
    let (phantom_spec, mut phantom) =
        generate_phantom_with(phantom_seed(seed), g.image_size(), &config.phantom)?;
    phantom.quantize_f32();
    let trajectory = generate_trajectory_with(trajectory_seed(seed), g, &config.perturbation)?;
    let mut clean = project_full(&phantom, g)?;
    clean.quantize_f32();
    let mut perturbed = simulate_perturbed_sinogram(&phantom, &trajectory, g)?;
    perturbed.quantize_f32();
    let eta = estimate_eta(&perturbed, &clean)?
        .into_iter()
        .map(|v| v as f32 as f64)
        .collect();
    Ok(DatasetSample {
        id,
        seed,
        phantom_spec,
        phantom,
        clean,
        perturbed,
        trajectory,
        eta,
    })
}

impl DatasetSample {
    /// Recomputes `eta` from the stored sinograms and compares at storage
    /// precision.
    pub fn eta_consistent(&self) -> Result<bool> {
        let fresh = estimate_eta(&self.perturbed, &self.clean)?;
        Ok(fresh.len() == self.eta.len()
            && fresh
                .iter()
                .zip(&self.eta)
                .all(|(a, b)| (*a as f32).to_bits() == (*b as f32).to_bits()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(Error::InvalidParameter(format!("unknown split {other:?}"))),
        }
    }
}

/// Default 95 / 4 / 1 split of `total` samples.
pub fn split_counts(total: usize) -> (usize, usize, usize) {
    let train = (0.95 * total as f64 + 0.5).floor() as usize;
    let val = ((0.04 * total as f64 + 0.5).floor() as usize).min(total - train);
    (train, val, total - train - val)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitLists {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub geometry: crate::geometry::GeometrySpec,
    pub global_seed: u64,
    pub splits: SplitLists,
    pub sample_seeds: Vec<u64>,
    pub config: DatasetConfig,
}

impl DatasetManifest {
    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.splits.train.len(),
            self.splits.val.len(),
            self.splits.test.len(),
        )
    }
}

/// Generates and writes `n_train + n_val + n_test` samples plus the manifest.
pub fn build_dataset(
    global_seed: u64,
    g: &Geometry,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    build_dataset_with(global_seed, g, n_train, n_val, n_test, out_dir, &DatasetConfig::default())
}

pub fn build_dataset_with(
    global_seed: u64,
    g: &Geometry,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    out_dir: &Path,
    config: &DatasetConfig,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let total = n_train + n_val + n_test;
    let seeds: Vec<u64> = (0..total).map(|i| sample_seed(global_seed, i)).collect();

    seeds
        .par_iter()
        .enumerate()
        .try_for_each(|(id, &seed)| -> Result<()> {
            let sample = make_sample(id, seed, g, config)?;
            dataio::write_sample(out_dir, &sample)
        })?;

    let manifest = DatasetManifest {
        format_version: dataio::FORMAT_VERSION,
        geometry: *g.spec(),
        global_seed,
        splits: SplitLists {
            train: (0..n_train).collect(),
            val: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..total).collect(),
        },
        sample_seeds: seeds,
        config: config.clone(),
    };
    dataio::write_manifest(out_dir, &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_geometry, GeometryKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_trajectory_matches_static_projection() {
        let g = make_geometry(GeometryKind::Parallel, 12, 31, None, 24).unwrap();
        let (_, x) = crate::phantom::generate_phantom(3, 24).unwrap();
        let y = simulate_perturbed_sinogram(&x, &PerturbationTrajectory::zero(12), &g).unwrap();
        let z = project_full(&x, &g).unwrap();
        assert!(y.data().iter().zip(z.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn global_shift_matches_shifted_phantom() {
        let n = 96;
        let g = make_geometry(GeometryKind::Parallel, 18, 137, None, n).unwrap();
        let x = Image::from_fn(n, |x, y| (-(x * x + (y - 0.1).powi(2)) / 0.08).exp());
        let shift = [1.5, -0.75];
        let traj = PerturbationTrajectory::constant_shift(18, shift);
        let moved = simulate_perturbed_sinogram(&x, &traj, &g).unwrap();
        let static_shift = warp_image(&x, traj.motion(0));
        let expected = project_full(&static_shift, &g).unwrap();
        let num: f64 = moved.data().iter().zip(expected.data()).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = expected.data().iter().map(|b| b * b).sum();
        assert!((num / den).sqrt() <= 1e-3);
    }

    #[test]
    fn eta_examples() {
        let a = Sinogram::from_vec(5, 4, (0..20).map(|v| v as f64).collect()).unwrap();
        assert_eq!(estimate_eta(&a, &a).unwrap(), vec![0.0; 5]);
        let mut b = a.clone();
        b.row_mut(3)[2] += 0.7;
        let eta = estimate_eta(&b, &a).unwrap();
        for (k, v) in eta.iter().enumerate() {
            if k == 3 {
                assert!((v - 0.7).abs() < 1e-12);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(estimate_eta(&a, &Sinogram::zeros(4, 4)).is_err());
    }

    #[test]
    fn eta_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (k, l) = (17, 23);
        let rand_sino = |rng: &mut ChaCha8Rng| {
            Sinogram::from_vec(k, l, (0..k * l).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
        };
        let a = rand_sino(&mut rng);
        let b = rand_sino(&mut rng);
        let eta = estimate_eta(&a, &b).unwrap();
        for kk in 0..k {
            let mut m = 0.0f64;
            for ll in 0..l {
                let d = (a.get(kk, ll) - b.get(kk, ll)).abs();
                if d > m {
                    m = d;
                }
            }
            assert_eq!(eta[kk], m);
        }
    }

    #[test]
    fn default_split_fractions() {
        assert_eq!(split_counts(1000), (950, 40, 10));
        assert_eq!(split_counts(32_095), (30_490, 1_284, 321));
        assert_eq!(split_counts(0), (0, 0, 0));
        let (a, b, c) = split_counts(7);
        assert_eq!(a + b + c, 7);
    }

    #[test]
    fn sample_seeds_are_independent_of_order() {
        let seeds: Vec<u64> = (0..100).map(|i| sample_seed(1, i)).collect();
        let mut uniq = seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 100);
        assert_eq!(sample_seed(1, 57), seeds[57]);
    }

    #[test]
    fn made_samples_are_consistent() {
        let g = make_geometry(GeometryKind::Parallel, 20, 33, None, 24).unwrap();
        let s = make_sample(4, sample_seed(7, 4), &g, &DatasetConfig::default()).unwrap();
        assert!(s.eta_consistent().unwrap());
        assert!(s.eta.iter().any(|&v| v > 0.0));
        assert_eq!(s.clean, project_full(&s.phantom, &g).map(|mut y| {
            y.quantize_f32();
            y
        }).unwrap());
    }

    #[test]
    fn eta_grows_with_motion_scale() {
        let n = 64;
        let g = make_geometry(GeometryKind::Parallel, 60, 91, None, n).unwrap();
        let x = Image::from_fn(n, |x, y| (-((x - 0.1).powi(2) + y * y) / 0.1).exp());
        let clean = project_full(&x, &g).unwrap();
        let mut ok = 0;
        let mut total = 0;
        for seed in 0..4 {
            let traj = crate::perturbation::generate_trajectory(seed, &g).unwrap();
            let base = estimate_eta(&simulate_perturbed_sinogram(&x, &traj, &g).unwrap(), &clean).unwrap();
            let big = estimate_eta(
                &simulate_perturbed_sinogram(&x, &traj.scaled(1.5), &g).unwrap(),
                &clean,
            )
            .unwrap();
            for (a, b) in base.iter().zip(&big) {
                total += 1;
                if b >= a {
                    ok += 1;
                }
            }
        }
        assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total}");
    }
}
