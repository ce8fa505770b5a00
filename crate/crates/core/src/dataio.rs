//! On-disk layout.
//!
//! ```text
//! DIR/manifest.json
//! DIR/sample_000000/phantom.f32          S x S
//! DIR/sample_000000/sino_clean.f32       K x L
//! DIR/sample_000000/sino_perturbed.f32   K x L
//! DIR/sample_000000/trajectory.f32       K x 5 (eps_r1, eps_r2, xi_r1, xi_r2, xi_rot)
//! DIR/sample_000000/eta.f32              K
//! DIR/sample_000000/meta.json
//! ```
//!
//! Raster files are headerless little-endian `f32`, row-major. Sample
//! directories are written under a temporary name and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{phantom_seed, trajectory_seed, DatasetManifest, DatasetSample};
use crate::error::{Error, Result};
use crate::geometry::{GeometrySpec, Image};
use crate::perturbation::{JitterStd, PerturbationTrajectory, SinusoidParams};
use crate::phantom::PhantomSpec;
use crate::projector::Sinogram;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sample_dir_name(id: usize) -> String {
    format!("sample_{id:06}")
}

pub fn sample_dir(root: &Path, id: usize) -> PathBuf {
    root.join(sample_dir_name(id))
}

/// Writes values as little-endian `f32`.
pub fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads exactly `expected` little-endian `f32` values, rejecting short or
/// long files and non-finite entries.
pub fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Truncated {
            path: path.to_owned(),
            expected: expected * 4,
            found: bytes.len(),
        });
    }
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(i, c)| {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if v.is_finite() {
                Ok(v as f64)
            } else {
                Err(Error::NonFinite {
                    path: path.to_owned(),
                    index: i,
                })
            }
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_owned(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_owned(),
        source: e,
    })
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub format_version: u32,
    pub id: usize,
    pub seed: u64,
    pub phantom_seed: u64,
    pub trajectory_seed: u64,
    pub image_size: usize,
    pub num_angles: usize,
    pub num_detectors: usize,
    pub phantom: PhantomSpec,
    pub sinusoids: Vec<SinusoidParams>,
    pub jitter_std: JitterStd,
}

/// Writes one sample directory below `root`, replacing any previous copy.
pub fn write_sample(root: &Path, sample: &DatasetSample) -> Result<()> {
    let final_dir = sample_dir(root, sample.id);
    let tmp_dir = root.join(format!(".{}.tmp", sample_dir_name(sample.id)));
    if tmp_dir.exists() {
        fs::remove_dir_all(&tmp_dir).map_err(|e| Error::io(&tmp_dir, e))?;
    }
    fs::create_dir_all(&tmp_dir).map_err(|e| Error::io(&tmp_dir, e))?;

    write_f32(&tmp_dir.join("phantom.f32"), sample.phantom.data())?;
    write_f32(&tmp_dir.join("sino_clean.f32"), sample.clean.data())?;
    write_f32(&tmp_dir.join("sino_perturbed.f32"), sample.perturbed.data())?;
    let traj: Vec<f64> = sample
        .trajectory
        .to_columns()
        .into_iter()
        .flatten()
        .collect();
    write_f32(&tmp_dir.join("trajectory.f32"), &traj)?;
    write_f32(&tmp_dir.join("eta.f32"), &sample.eta)?;
    let meta = SampleMeta {
        format_version: FORMAT_VERSION,
        id: sample.id,
        seed: sample.seed,
        phantom_seed: phantom_seed(sample.seed),
        trajectory_seed: trajectory_seed(sample.seed),
        image_size: sample.phantom.size(),
        num_angles: sample.clean.num_angles(),
        num_detectors: sample.clean.num_detectors(),
        phantom: sample.phantom_spec.clone(),
        sinusoids: sample.trajectory.sinusoids.clone(),
        jitter_std: sample.trajectory.jitter_std,
    };
    write_json(&tmp_dir.join("meta.json"), &meta)?;

    if final_dir.exists() {
        fs::remove_dir_all(&final_dir).map_err(|e| Error::io(&final_dir, e))?;
    }
    fs::rename(&tmp_dir, &final_dir).map_err(|e| Error::io(&final_dir, e))
}

/// Reads sample `id` below `root`; shapes are checked against `geometry`.
pub fn read_sample(root: &Path, id: usize, geometry: &GeometrySpec) -> Result<DatasetSample> {
    let dir = sample_dir(root, id);
    let meta: SampleMeta = read_json(&dir.join("meta.json"))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: meta.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let (s, k, l) = (geometry.image_size, geometry.num_angles, geometry.num_detectors);
    if (meta.image_size, meta.num_angles, meta.num_detectors) != (s, k, l) || meta.id != id {
        return Err(Error::shape(
            format!("sample {id} with {s}px, {k}x{l}"),
            format!(
                "sample {} with {}px, {}x{}",
                meta.id, meta.image_size, meta.num_angles, meta.num_detectors
            ),
        ));
    }

    let phantom = Image::from_vec(s, read_f32(&dir.join("phantom.f32"), s * s)?)?;
    let clean = Sinogram::from_vec(k, l, read_f32(&dir.join("sino_clean.f32"), k * l)?)?;
    let perturbed = Sinogram::from_vec(k, l, read_f32(&dir.join("sino_perturbed.f32"), k * l)?)?;
    let flat = read_f32(&dir.join("trajectory.f32"), k * 5)?;
    let rows: Vec<[f64; 5]> = flat
        .chunks_exact(5)
        .map(|c| [c[0], c[1], c[2], c[3], c[4]])
        .collect();
    let trajectory =
        PerturbationTrajectory::from_columns(&rows, meta.sinusoids, meta.jitter_std, meta.trajectory_seed);
    let eta = read_f32(&dir.join("eta.f32"), k)?;

    Ok(DatasetSample {
        id,
        seed: meta.seed,
        phantom_spec: meta.phantom,
        phantom,
        clean,
        perturbed,
        trajectory,
        eta,
    })
}

pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = root.join(MANIFEST_FILE);
    let tmp = root.join(format!(".{MANIFEST_FILE}.tmp"));
    write_json(&tmp, manifest)?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let value: serde_json::Value = read_json(&path)?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Json {
            path: path.clone(),
            source: serde::de::Error::missing_field("format_version"),
        })?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Json { path, source: e })
}

/// Sidecar of a stored reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconInfo {
    pub method: String,
    pub image_size: usize,
    pub params: serde_json::Value,
    pub runtime_s: f64,
    pub sweeps: usize,
    pub converged: Option<bool>,
}

pub fn recon_paths(dir: &Path, method: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("recon_{method}.f32")),
        dir.join(format!("recon_{method}.json")),
    )
}

pub fn write_recon(dir: &Path, image: &Image, info: &ReconInfo) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (raster, sidecar) = recon_paths(dir, &info.method);
    let tmp = dir.join(format!(".recon_{}.f32.tmp", info.method));
    write_f32(&tmp, image.data())?;
    fs::rename(&tmp, &raster).map_err(|e| Error::io(&raster, e))?;
    write_json(&sidecar, info)
}

pub fn read_recon(dir: &Path, method: &str) -> Result<(Image, ReconInfo)> {
    let (raster, sidecar) = recon_paths(dir, method);
    let info: ReconInfo = read_json(&sidecar)?;
    let n = info.image_size;
    let image = Image::from_vec(n, read_f32(&raster, n * n)?)?;
    Ok((image, info))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub sample_id: usize,
    pub method: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

pub const METRICS_HEADER: &str = "sample_id,method,psnr_db,ssim";

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{METRICS_HEADER}").expect("write to Vec");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.sample_id, r.method, r.psnr_db, r.ssim).expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
