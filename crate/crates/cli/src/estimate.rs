use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use fls_core::estimator::{elevation_to_pointcloud, estimate, OptConfig, Source, DEGENERATE_DECREASE};
use fls_core::io;
use fls_core::mask::{binarize, MaskParams};
use fls_core::simulator::{DatasetManifest, MotionTag, SourceRole, Split, TripletRecord, MANIFEST_FILE};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SourceChoice {
    Both,
    Past,
    Future,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Dataset manifest, or the directory holding it.
    #[arg(long)]
    manifest: PathBuf,
    /// Refuse to run unless the dataset belongs to this split.
    #[arg(long)]
    split: Option<Split>,
    /// Output directory for maps, clouds and reports.
    #[arg(long)]
    out: PathBuf,
    /// Optimizer updates per triplet; 0 emits the zero-elevation start.
    #[arg(long, default_value_t = 500)]
    iters: usize,
    /// Adam step on the elevation logits.
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, value_enum, default_value_t = SourceChoice::Both)]
    sources: SourceChoice,
    /// Intensity above which a pixel carries signal.
    #[arg(long, default_value_t = 0.05)]
    mask_threshold: f64,
    /// Signal blobs smaller than this many pixels are dropped.
    #[arg(long, default_value_t = 8)]
    min_component: usize,
    /// Keep pixels that leave the source aperture in the reconstruction term.
    #[arg(long)]
    no_aperture_mask: bool,
}

#[derive(Debug, Serialize)]
struct OutputFiles {
    elevation: String,
    cloud: String,
    trajectory: String,
}

#[derive(Debug, Serialize)]
struct TripletReport {
    id: String,
    tag: MotionTag,
    status: String,
    degenerate: bool,
    iterations: usize,
    best_iteration: usize,
    initial_loss: f64,
    best_loss: f64,
    loss_decrease: f64,
    mask_pixels: usize,
    in_bounds_fraction: Vec<f64>,
    files: OutputFiles,
}

#[derive(Debug, Serialize)]
struct Failure {
    id: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct Summary {
    tag: MotionTag,
    split: Split,
    iterations: usize,
    completed: usize,
    degenerate: usize,
    failed: usize,
    reports: Vec<TripletReport>,
    failures: Vec<Failure>,
}

fn degenerate_status() -> String {
    format!("degenerate: loss decrease < {:.0}%", 100.0 * DEGENERATE_DECREASE)
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn run_one(
    root: &Path,
    out: &Path,
    tag: MotionTag,
    t: &TripletRecord,
    a: &EstimateArgs,
    opt: &OptConfig,
) -> anyhow::Result<TripletReport> {
    let target = io::read_polar_image(&root.join(&t.target.image))?;
    let wanted = |role: SourceRole| match a.sources {
        SourceChoice::Both => true,
        SourceChoice::Past => role == SourceRole::Past,
        SourceChoice::Future => role == SourceRole::Future,
    };
    let records: Vec<_> = t.sources.iter().filter(|s| wanted(s.role)).collect();
    if records.is_empty() {
        anyhow::bail!("no {:?} source in this triplet", a.sources);
    }
    let images = records
        .iter()
        .map(|s| io::read_polar_image(&root.join(&s.frame.image)))
        .collect::<Result<Vec<_>, _>>()?;
    let sources: Vec<Source<'_>> = records
        .iter()
        .zip(&images)
        .map(|(s, image)| Source { image, motion: &s.motion })
        .collect();

    let params = MaskParams {
        threshold: a.mask_threshold,
        min_component: a.min_component,
    };
    let mask = binarize(&target.data, params)?;
    let report = estimate(&target, &sources, &mask.valid, opt)?;

    let files = OutputFiles {
        elevation: format!("{}.elev", t.id),
        cloud: format!("{}.ply", t.id),
        trajectory: format!("{}_loss.csv", t.id),
    };
    io::write_elevation_map(&out.join(&files.elevation), &report.elevation, &target.pose)?;
    io::write_ply(&out.join(&files.cloud), &elevation_to_pointcloud(&report.elevation))?;
    report.write_trajectory_csv(&out.join(&files.trajectory))?;

    let degenerate = report.is_degenerate();
    let r = TripletReport {
        id: t.id.clone(),
        tag,
        status: if degenerate { degenerate_status() } else { "ok".into() },
        degenerate,
        iterations: report.iterations,
        best_iteration: report.best_iteration,
        initial_loss: report.initial_loss(),
        best_loss: report.best_loss(),
        loss_decrease: report.loss_decrease(),
        mask_pixels: mask.count(),
        in_bounds_fraction: report.in_bounds_fraction,
        files,
    };
    io::write_json(&out.join(format!("{}.json", t.id)), &r)?;
    Ok(r)
}

pub fn run(a: EstimateArgs) -> anyhow::Result<()> {
    let path = manifest_path(&a.manifest);
    let manifest = DatasetManifest::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(split) = a.split {
        if split != manifest.split {
            anyhow::bail!("{} holds the {:?} split, not {:?}", path.display(), manifest.split, split);
        }
    }
    let root = path.parent().unwrap_or(Path::new("."));
    let opt = OptConfig {
        iterations: a.iters,
        step: a.step,
        aperture_mask: !a.no_aperture_mask,
        ..OptConfig::default()
    };
    opt.validate()?;

    let results: Vec<_> = manifest
        .triplets
        .par_iter()
        .map(|t| {
            run_one(root, &a.out, manifest.tag, t, &a, &opt).map_err(|e| Failure {
                id: t.id.clone(),
                error: format!("{e:#}"),
            })
        })
        .collect();

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(r) => {
                println!(
                    "{}: loss {:.6} -> {:.6} ({:.1}% at iteration {}) {}",
                    r.id,
                    r.initial_loss,
                    r.best_loss,
                    100.0 * r.loss_decrease,
                    r.best_iteration,
                    r.status
                );
                reports.push(r);
            }
            Err(f) => {
                eprintln!("{}: failed: {}", f.id, f.error);
                failures.push(f);
            }
        }
    }
    let summary = Summary {
        tag: manifest.tag,
        split: manifest.split,
        iterations: a.iters,
        completed: reports.len(),
        degenerate: reports.iter().filter(|r| r.degenerate).count(),
        failed: failures.len(),
        reports,
        failures,
    };
    io::write_json(&a.out.join(SUMMARY_FILE), &summary)?;
    println!(
        "{} triplets: {} estimated, {} degenerate, {} failed",
        manifest.triplets.len(),
        summary.completed,
        summary.degenerate,
        summary.failed
    );
    if summary.completed == 0 && summary.failed > 0 {
        anyhow::bail!("every triplet failed");
    }
    Ok(())
}
