//! Elevation and point-cloud accuracy metrics.

mod kdtree;

pub use kdtree::KdTree;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::elevation_to_pointcloud;
use crate::raster::{ElevationMap, PointCloud};

/// Scale applied to the summed elevation error in the image-normalized MAE.
pub const MAE_SCALE: f64 = 1000.0;
/// Scale applied to the Chamfer distance.
pub const CHAMFER_SCALE: f64 = 500.0;
/// f-score thresholds, metres.
pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.001, 0.003];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mae {
    /// Mean absolute error over jointly valid pixels, radians.
    pub mean: f64,
    /// `scale / (H * W) * sum |pred - gt|` over the same pixels.
    pub scaled: f64,
    pub pixels: usize,
}

/// Elevation error over pixels valid in both maps (and in `mask`, if given).
pub fn mae(pred: &ElevationMap, gt: &ElevationMap, mask: Option<&Array2<bool>>, scale: f64) -> Result<Mae> {
    if pred.shape() != gt.shape() || mask.is_some_and(|m| m.dim() != gt.shape()) {
        return Err(Error::Mismatch("elevation maps or mask differ in shape".into()));
    }
    let (h, w) = gt.shape();
    let mut sum = 0.0;
    let mut pixels = 0;
    for ((i, j), ok) in gt.valid.indexed_iter() {
        if *ok && pred.valid[(i, j)] && mask.is_none_or(|m| m[(i, j)]) {
            sum += (pred.phi[(i, j)] - gt.phi[(i, j)]).abs();
            pixels += 1;
        }
    }
    if pixels == 0 {
        return Err(Error::EmptyMask("no jointly valid pixels"));
    }
    Ok(Mae {
        mean: sum / pixels as f64,
        scaled: scale * sum / (h * w) as f64,
        pixels,
    })
}

fn nearest_distances(from: &[crate::geometry::Point3], to: &KdTree) -> Vec<f64> {
    from.iter()
        .map(|p| to.nearest_squared(p).expect("index is non-empty"))
        .collect()
}

/// Nearest-neighbour squared distances in both directions.
#[derive(Clone, Debug)]
pub struct CloudMatch {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
}

impl CloudMatch {
    pub fn new(a: &PointCloud, b: &PointCloud) -> Result<Self> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::EmptyPointSet("cloud comparison"));
        }
        Ok(Self {
            forward: nearest_distances(&a.points, &KdTree::new(&b.points)),
            backward: nearest_distances(&b.points, &KdTree::new(&a.points)),
        })
    }

    pub fn chamfer(&self, scale: f64) -> f64 {
        let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
        scale * mean(&self.forward) + scale * mean(&self.backward)
    }

    /// f-score in percent at `threshold` metres, `a` playing the estimate.
    pub fn f_score(&self, threshold: f64) -> f64 {
        let t2 = threshold * threshold;
        let share = |d: &[f64]| 100.0 * d.iter().filter(|v| **v < t2).count() as f64 / d.len() as f64;
        let (precision, recall) = (share(&self.forward), share(&self.backward));
        if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        }
    }
}

/// `scale * (mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2)`.
pub fn chamfer(a: &PointCloud, b: &PointCloud, scale: f64) -> Result<f64> {
    Ok(CloudMatch::new(a, b)?.chamfer(scale))
}

/// Harmonic mean of precision and recall at `threshold` metres, in percent.
pub fn f_score(estimate: &PointCloud, gt: &PointCloud, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("f-score threshold {threshold} must be positive")));
    }
    Ok(CloudMatch::new(estimate, gt)?.f_score(threshold))
}

/// Peak signal-to-noise ratio in dB of unit-range images over `mask`.
pub fn psnr(a: &Array2<f64>, b: &Array2<f64>, mask: &Array2<bool>) -> Result<f64> {
    if a.dim() != b.dim() || a.dim() != mask.dim() {
        return Err(Error::Mismatch("psnr inputs differ in shape".into()));
    }
    let (mut se, mut n) = (0.0, 0usize);
    for ((x, y), m) in a.iter().zip(b.iter()).zip(mask.iter()) {
        if *m {
            se += (x - y) * (x - y);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask("psnr"));
    }
    Ok(10.0 * (1.0 / (se / n as f64)).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub threshold: f64,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mae: f64,
    pub mae_scaled: f64,
    pub mae_pixels: usize,
    pub chamfer: f64,
    pub f_scores: Vec<FScore>,
}

/// Scores an estimated map against the ground-truth map and hit cloud.
pub fn evaluate(
    pred: &ElevationMap,
    gt: &ElevationMap,
    gt_cloud: &PointCloud,
    mask: Option<&Array2<bool>>,
    thresholds: &[f64],
) -> Result<EvalResult> {
    if thresholds.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Config("f-score thresholds must be positive".into()));
    }
    let m = mae(pred, gt, mask, MAE_SCALE)?;
    let cloud_map = match mask {
        Some(mask) => ElevationMap {
            valid: &pred.valid & mask,
            ..pred.clone()
        },
        None => pred.clone(),
    };
    let matched = CloudMatch::new(&elevation_to_pointcloud(&cloud_map), gt_cloud)?;
    Ok(EvalResult {
        mae: m.mean,
        mae_scaled: m.scaled,
        mae_pixels: m.pixels,
        chamfer: matched.chamfer(CHAMFER_SCALE),
        f_scores: thresholds
            .iter()
            .map(|t| FScore {
                threshold: *t,
                percent: matched.f_score(*t),
            })
            .collect(),
    })
}
