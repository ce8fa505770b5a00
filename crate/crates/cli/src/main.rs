//! `motionct`: dataset generation, reconstruction, evaluation, self test.

mod config;
mod preview;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use motionct_core::dataio::{self, MetricsRow, ReconInfo};
use motionct_core::dataset::{build_dataset, DatasetManifest, DatasetSample, Split};
use motionct_core::dremel::{dremel_reconstruct, DremelParams};
use motionct_core::fbp::{fbp_with, FbpFilter};
use motionct_core::kaczmarz::{kaczmarz_reconstruct, AngleOrder, KaczmarzParams};
use motionct_core::metrics::{mean_std, psnr, ssim};
use motionct_core::resesop::{resesop_reconstruct, ResesopParams, StopRule};
use motionct_core::selftest::run_selftest;
use motionct_core::{Geometry, GeometryKind, GeometrySpec, Image, Sinogram};

#[derive(Parser)]
#[command(name = "motionct", version, about = "Motion-inexact tomography toolkit")]
struct Cli {
    /// JSON file supplying default flag values (explicit flags win).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantoms, clean and perturbed sinograms.
    GenDataset(GenArgs),
    /// Reconstruct every sample of a split.
    Reconstruct(ReconArgs),
    /// Score stored reconstructions against the phantoms.
    Evaluate(EvalArgs),
    /// Run the built-in numerical checks.
    Selftest,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = parse_kind)]
    geometry: GeometryKind,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    train: usize,
    #[arg(long)]
    val: usize,
    #[arg(long)]
    test: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 255)]
    image_size: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Fbp,
    Kaczmarz,
    Dremel,
    Resesop,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::Kaczmarz => "kaczmarz",
            Method::Dremel => "dremel",
            Method::Resesop => "resesop",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataKind {
    Perturbed,
    Clean,
}

#[derive(Args)]
struct ReconArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_parser = parse_split)]
    split: Split,
    /// Multiplier on the stored per-angle eta (resesop).
    #[arg(long, default_value_t = 1.0)]
    eta_scale: f64,
    #[arg(long, default_value_t = 1.1)]
    tau: f64,
    /// Sweep cap; defaults to 20 (kaczmarz, resesop) or 32 (dremel).
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    /// Output root; defaults to the dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which stored sinogram to reconstruct from.
    #[arg(long, value_enum, default_value = "perturbed")]
    data: DataKind,
    /// Name used in the output files instead of the method name.
    #[arg(long)]
    label: Option<String>,
    /// Angle visiting order: sequential, shuffled or shuffled:SEED.
    #[arg(long, default_value = "shuffled:0", value_parser = parse_order)]
    order: AngleOrder,
    /// Geometry correction step (dremel).
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Apodization: ram-lak, shepp-logan or hann (fbp).
    #[arg(long, default_value = "ram-lak", value_parser = parse_filter)]
    filter: FbpFilter,
    /// Only the first N samples of the split.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    recons: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of samples that get PNG previews.
    #[arg(long, default_value_t = 4)]
    previews: usize,
    /// Saturation value of the difference previews.
    #[arg(long, default_value_t = 0.25)]
    diff_range: f64,
}

fn parse_kind(s: &str) -> Result<GeometryKind, String> {
    s.parse().map_err(|e: motionct_core::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: motionct_core::Error| e.to_string())
}

fn parse_order(s: &str) -> Result<AngleOrder, String> {
    s.parse().map_err(|e: motionct_core::Error| e.to_string())
}

fn parse_filter(s: &str) -> Result<FbpFilter, String> {
    s.parse().map_err(|e: motionct_core::Error| e.to_string())
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MOTIONCT_THREADS") else {
        return Ok(());
    };
    let cap: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("MOTIONCT_THREADS must be a positive integer, got {raw:?}"))?;
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    rayon::ThreadPoolBuilder::new()
        .num_threads(cap.min(available).max(1))
        .build_global()
        .context("configuring the worker pool")
}

fn gen_dataset(a: &GenArgs) -> Result<()> {
    let g = GeometrySpec::standard(a.geometry, a.image_size).build()?;
    let start = Instant::now();
    let m = build_dataset(a.seed, &g, a.train, a.val, a.test, &a.out)?;
    let (tr, va, te) = m.counts();
    eprintln!(
        "wrote {} samples ({tr}/{va}/{te}) with {} angles x {} detectors to {} in {:.1}s",
        tr + va + te,
        g.num_angles(),
        g.num_detectors(),
        a.out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn load_dataset(root: &Path) -> Result<(DatasetManifest, Geometry)> {
    let manifest = dataio::read_manifest(root).with_context(|| format!("reading dataset {}", root.display()))?;
    let g = manifest.geometry.build()?;
    Ok((manifest, g))
}

fn reconstruct_one(a: &ReconArgs, sample: &DatasetSample, g: &Geometry) -> Result<(Image, ReconInfo)> {
    let (y, eta): (&Sinogram, Vec<f64>) = match a.data {
        DataKind::Perturbed => (&sample.perturbed, sample.eta.clone()),
        DataKind::Clean => (&sample.clean, vec![0.0; g.num_angles()]),
    };
    let label = a.label.clone().unwrap_or_else(|| match a.data {
        DataKind::Perturbed => a.method.name().to_string(),
        DataKind::Clean => format!("{}-clean", a.method.name()),
    });
    let start = Instant::now();
    let (image, params, sweeps, converged) = match a.method {
        Method::Fbp => (fbp_with(y, g, a.filter)?, json!({ "filter": a.filter }), 0, None),
        Method::Kaczmarz => {
            let p = KaczmarzParams {
                omega: a.omega,
                sweeps: a.max_sweeps.unwrap_or(20),
                order: a.order,
                ..Default::default()
            };
            (kaczmarz_reconstruct(y, g, &p)?, serde_json::to_value(p)?, p.sweeps, None)
        }
        Method::Dremel => {
            let p = DremelParams {
                omega: a.omega,
                lambda: a.lambda,
                max_iters: a.max_sweeps.unwrap_or(32),
                order: a.order,
                ..Default::default()
            };
            let r = dremel_reconstruct(y, g, &p)?;
            let params = json!({ "params": p, "final_shifts": r.shifts, "residual_history": r.residual_history });
            (r.image, params, p.max_iters, None)
        }
        Method::Resesop => {
            let p = ResesopParams {
                tau: a.tau,
                eta_scale: a.eta_scale,
                max_sweeps: a.max_sweeps.unwrap_or(20),
                order: a.order,
                stop: StopRule::default(),
                ..Default::default()
            };
            let r = resesop_reconstruct(y, &eta, g, &p)?;
            let params = json!({ "params": p, "violations": r.violations });
            (r.image, params, r.sweeps, Some(r.converged))
        }
    };
    let info = ReconInfo {
        method: label,
        image_size: g.image_size(),
        params,
        runtime_s: start.elapsed().as_secs_f64(),
        sweeps,
        converged,
    };
    Ok((image, info))
}

fn reconstruct(a: &ReconArgs) -> Result<()> {
    let (manifest, g) = load_dataset(&a.dataset)?;
    let out = a.out.clone().unwrap_or_else(|| a.dataset.clone());
    let mut ids = manifest.splits.get(a.split).to_vec();
    if let Some(n) = a.limit {
        ids.truncate(n);
    }
    let start = Instant::now();
    ids.par_iter().try_for_each(|&id| -> Result<()> {
        let sample = dataio::read_sample(&a.dataset, id, &manifest.geometry)?;
        let (image, info) = reconstruct_one(a, &sample, &g).with_context(|| format!("sample {id}"))?;
        dataio::write_recon(&dataio::sample_dir(&out, id), &image, &info)?;
        eprintln!("sample {id}: {} in {:.1}s", info.method, info.runtime_s);
        Ok(())
    })?;
    eprintln!(
        "reconstructed {} samples into {} in {:.1}s",
        ids.len(),
        out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

/// `(sample id, method)` pairs found below `root`.
fn find_recons(root: &Path) -> Result<Vec<(usize, String)>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(id) = name.strip_prefix("sample_").and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        if !entry.file_type()?.is_dir() {
            continue;
        }
        for file in std::fs::read_dir(entry.path())? {
            let file = file?.file_name().to_string_lossy().into_owned();
            if let Some(method) = file.strip_prefix("recon_").and_then(|s| s.strip_suffix(".json")) {
                found.push((id, method.to_string()));
            }
        }
    }
    found.sort();
    Ok(found)
}

fn evaluate(a: &EvalArgs) -> Result<()> {
    let (manifest, _) = load_dataset(&a.dataset)?;
    let pairs = find_recons(&a.recons)?;
    if pairs.is_empty() {
        bail!("no reconstructions found below {}", a.recons.display());
    }
    let preview_dir = a.out.parent().unwrap_or(Path::new(".")).join("previews");
    std::fs::create_dir_all(&preview_dir)?;
    let mut ids: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    ids.dedup();
    let preview_ids: Vec<usize> = ids.iter().copied().take(a.previews).collect();

    let rows: Vec<MetricsRow> = pairs
        .par_iter()
        .map(|(id, method)| -> Result<MetricsRow> {
            let sample = dataio::read_sample(&a.dataset, *id, &manifest.geometry)?;
            let (x, _) = dataio::read_recon(&dataio::sample_dir(&a.recons, *id), method)?;
            if preview_ids.contains(id) {
                let stem = preview_dir.join(format!("{}_{method}", dataio::sample_dir_name(*id)));
                preview::save_image(&stem.with_extension("recon.png"), &x)?;
                preview::save_difference(&stem.with_extension("diff.png"), &x, &sample.phantom, a.diff_range)?;
            }
            Ok(MetricsRow {
                sample_id: *id,
                method: method.clone(),
                psnr_db: psnr(&sample.phantom, &x, 1.0)?,
                ssim: ssim(&sample.phantom, &x)?,
            })
        })
        .collect::<Result<_>>()?;
    preview_ids.par_iter().try_for_each(|&id| -> Result<()> {
        let sample = dataio::read_sample(&a.dataset, id, &manifest.geometry)?;
        let stem = preview_dir.join(dataio::sample_dir_name(id));
        preview::save_image(&stem.with_extension("phantom.png"), &sample.phantom)?;
        preview::save_sinogram(&stem.with_extension("sino_clean.png"), &sample.clean)?;
        preview::save_sinogram(&stem.with_extension("sino_perturbed.png"), &sample.perturbed)
    })?;
    dataio::write_metrics_csv(&a.out, &rows)?;

    let mut by_method: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &rows {
        let e = by_method.entry(&r.method).or_default();
        e.0.push(r.psnr_db);
        e.1.push(r.ssim);
    }
    println!("{:<20} {:>4}  {:>16}  {:>16}", "method", "n", "PSNR [dB]", "SSIM");
    for (method, (p, s)) in by_method {
        let ((pm, ps), (sm, ss)) = (mean_std(&p), mean_std(&s));
        println!("{method:<20} {:>4}  {pm:>7.2} ± {ps:<6.2}  {sm:>7.3} ± {ss:<6.3}", p.len());
    }
    eprintln!("metrics written to {}, previews in {}", a.out.display(), preview_dir.display());
    Ok(())
}

fn selftest() -> bool {
    let report = run_selftest();
    for c in &report.checks {
        println!("[{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    report.passed()
}

fn run() -> Result<bool> {
    let mut args: Vec<OsString> = std::env::args_os().collect();
    if let Some(path) = config::take_config_path(&mut args)? {
        config::merge_config(&mut args, &Cli::command(), Path::new(&path))?;
    }
    let cli = Cli::parse_from(args);
    init_threads()?;
    match &cli.command {
        Command::GenDataset(a) => gen_dataset(a)?,
        Command::Reconstruct(a) => reconstruct(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Selftest => return Ok(selftest()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
