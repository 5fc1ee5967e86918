use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use fls_core::estimator::elevation_to_pointcloud;
use fls_core::io;
use fls_core::metrics::{evaluate, EvalResult, FScore, DEFAULT_THRESHOLDS};
use fls_core::raster::ElevationMap;
use fls_core::simulator::{DatasetManifest, MANIFEST_FILE};

use crate::args::parse_threshold;

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of estimated `<id>.elev` maps.
    #[arg(long)]
    pred_dir: PathBuf,
    /// Dataset directory (its target frames are the ground truth) or a
    /// directory of `<id>.elev` maps.
    #[arg(long)]
    gt_dir: PathBuf,
    /// f-score distance thresholds, metres.
    #[arg(long, value_delimiter = ',', value_parser = parse_threshold, default_values_t = DEFAULT_THRESHOLDS)]
    thresholds: Vec<f64>,
    /// Output directory for metrics.csv and metrics.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct FrameMetrics {
    id: String,
    #[serde(flatten)]
    result: EvalResult,
}

#[derive(Debug, Serialize)]
struct Failure {
    id: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct MetricsFile {
    thresholds: Vec<f64>,
    frames: Vec<FrameMetrics>,
    mean: Option<EvalResult>,
    pred_only: Vec<String>,
    gt_only: Vec<String>,
    failures: Vec<Failure>,
}

/// `<id>.elev` files directly inside `dir`, keyed by id.
fn scan_maps(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let mut maps = BTreeMap::new();
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "elev") && path.is_file() {
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
                maps.insert(id.to_string(), path.clone());
            }
        }
    }
    Ok(maps)
}

fn gt_maps(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let manifest = dir.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return scan_maps(dir);
    }
    let manifest = DatasetManifest::load(&manifest)?;
    Ok(manifest
        .triplets
        .into_iter()
        .map(|t| (t.id, dir.join(t.target.elevation)))
        .collect())
}

fn eval_one(pred: &Path, gt: &Path, thresholds: &[f64]) -> anyhow::Result<EvalResult> {
    let (pred, _) = io::read_elevation_map(pred)?;
    let (gt, _) = io::read_elevation_map(gt)?;
    if pred.config != gt.config {
        anyhow::bail!("estimated and ground-truth maps use different sensor grids");
    }
    let mask = &pred.valid & &gt.valid;
    let gt_cloud = elevation_to_pointcloud(&ElevationMap {
        valid: mask.clone(),
        ..gt.clone()
    });
    Ok(evaluate(&pred, &gt, &gt_cloud, Some(&mask), thresholds)?)
}

fn mean(results: &[&EvalResult], thresholds: &[f64]) -> Option<EvalResult> {
    if results.is_empty() {
        return None;
    }
    let n = results.len() as f64;
    let avg = |f: &dyn Fn(&EvalResult) -> f64| results.iter().map(|r| f(r)).sum::<f64>() / n;
    Some(EvalResult {
        mae: avg(&|r| r.mae),
        mae_scaled: avg(&|r| r.mae_scaled),
        mae_pixels: results.iter().map(|r| r.mae_pixels).sum(),
        chamfer: avg(&|r| r.chamfer),
        f_scores: thresholds
            .iter()
            .enumerate()
            .map(|(k, t)| FScore {
                threshold: *t,
                percent: avg(&|r| r.f_scores[k].percent),
            })
            .collect(),
    })
}

fn threshold_label(t: f64) -> String {
    let mm = (t * 1e9).round() / 1e6;
    format!("f_lt_{mm}mm")
}

fn csv_row(out: &mut String, id: &str, r: &EvalResult) {
    let _ = write!(out, "{id},{},{},{},{}", r.mae, r.mae_scaled, r.mae_pixels, r.chamfer);
    for f in &r.f_scores {
        let _ = write!(out, ",{}", f.percent);
    }
    out.push('\n');
}

pub fn run(a: EvalArgs) -> anyhow::Result<()> {
    let pred = scan_maps(&a.pred_dir)?;
    let gt = gt_maps(&a.gt_dir)?;
    let pred_only: Vec<String> = pred.keys().filter(|k| !gt.contains_key(*k)).cloned().collect();
    let gt_only: Vec<String> = gt.keys().filter(|k| !pred.contains_key(*k)).cloned().collect();
    for id in &pred_only {
        eprintln!("skipping {id}: no ground truth");
    }
    for id in &gt_only {
        eprintln!("skipping {id}: no estimate");
    }
    let matched: Vec<(&String, &PathBuf, &PathBuf)> =
        pred.iter().filter_map(|(id, p)| gt.get(id).map(|g| (id, p, g))).collect();
    if matched.is_empty() {
        anyhow::bail!(
            "no frame ids in common between {} and {}",
            a.pred_dir.display(),
            a.gt_dir.display()
        );
    }

    let results: Vec<_> = matched
        .par_iter()
        .map(|(id, p, g)| (id.to_string(), eval_one(p, g, &a.thresholds)))
        .collect();
    let mut frames = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(result) => frames.push(FrameMetrics { id, result }),
            Err(e) => {
                eprintln!("{id}: failed: {e:#}");
                failures.push(Failure {
                    id,
                    error: format!("{e:#}"),
                });
            }
        }
    }
    if frames.is_empty() {
        anyhow::bail!("every matched frame failed to evaluate");
    }

    let all: Vec<&EvalResult> = frames.iter().map(|f| &f.result).collect();
    let mean = mean(&all, &a.thresholds);
    let mut csv = String::from("id,mae_rad,mae_x1000,mae_pixels,chamfer_x500");
    for t in &a.thresholds {
        csv.push(',');
        csv.push_str(&threshold_label(*t));
    }
    csv.push('\n');
    for f in &frames {
        csv_row(&mut csv, &f.id, &f.result);
    }
    if let Some(m) = &mean {
        csv_row(&mut csv, "mean", m);
    }
    io::write_atomic(&a.out.join(METRICS_CSV), csv.as_bytes())?;

    let file = MetricsFile {
        thresholds: a.thresholds.clone(),
        frames,
        mean,
        pred_only,
        gt_only,
        failures,
    };
    io::write_json(&a.out.join(METRICS_JSON), &file)?;

    if let Some(m) = &file.mean {
        let fs: Vec<String> = m
            .f_scores
            .iter()
            .map(|f| format!("f(<{} mm) {:.2}", (f.threshold * 1e9).round() / 1e6, f.percent))
            .collect();
        println!(
            "{} frames: MAE {:.4} rad (x1000 {:.2}), CD x500 {:.4}, {}",
            file.frames.len(),
            m.mae,
            m.mae_scaled,
            m.chamfer,
            fs.join(", ")
        );
    }
    Ok(())
}
