//! Per-triplet variational elevation estimation.
//!
//! The elevation map is parameterized by free per-pixel logits squashed into
//! the aperture, `phi = aperture * (sigmoid(u) - 1/2)`, and optimized with
//! Adam against the photometric loss of one or two source frames.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject, RigidMotion};
use crate::loss::{total_loss, LossWeights};
use crate::raster::{ElevationMap, PointCloud, PolarImage};
use crate::warp::inverse_warp;

/// Logits beyond this magnitude would round the sigmoid to exactly 0 or 1.
const LOGIT_LIMIT: f64 = 30.0;

/// Fractional loss decrease below which a run counts as uninformative.
pub const DEGENERATE_DECREASE: f64 = 0.05;

/// Bounded elevation parameterization.
#[derive(Clone, Debug, PartialEq)]
pub struct ElevParam {
    pub logits: Array2<f64>,
    pub aperture: f64,
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

impl ElevParam {
    pub fn zeros(shape: (usize, usize), aperture: f64) -> Self {
        Self {
            logits: Array2::zeros(shape),
            aperture,
        }
    }

    pub fn phi(&self) -> Array2<f64> {
        self.logits.mapv(|u| self.aperture * (sigmoid(u) - 0.5))
    }

    /// d phi / d u per pixel.
    pub fn dphi_du(&self) -> Array2<f64> {
        self.logits.mapv(|u| {
            let s = sigmoid(u);
            self.aperture * s * (1.0 - s)
        })
    }

    /// Logits that map to `phi`, which must lie strictly inside the aperture.
    pub fn from_phi(phi: &Array2<f64>, aperture: f64) -> Self {
        let logits = phi.mapv(|p| {
            let s = p / aperture + 0.5;
            (s / (1.0 - s)).ln().clamp(-LOGIT_LIMIT, LOGIT_LIMIT)
        });
        Self { logits, aperture }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    /// Adam step on the logits.
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: usize,
    /// Stop once the best loss has improved by less than this fraction over
    /// the last `patience` iterations. Zero disables early stopping.
    pub tolerance: f64,
    pub patience: usize,
    /// Per-source weights; empty means a plain average.
    pub source_weights: Vec<f64>,
    /// Also drop pixels whose warped point leaves the source's elevation
    /// aperture from the reconstruction term.
    pub aperture_mask: bool,
    pub loss: LossWeights,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            step: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: 500,
            tolerance: 0.0,
            patience: 50,
            source_weights: Vec::new(),
            aperture_mask: true,
            loss: LossWeights::default(),
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::Config("step must be positive".into()));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::Config("moment decays must lie in (0, 1)".into()));
        }
        if !(self.epsilon > 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::Config("epsilon must be positive and tolerance non-negative".into()));
        }
        if self.source_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("source weights must be non-negative".into()));
        }
        self.loss.validate()
    }
}

/// A source frame and the motion taking target-frame points into it.
#[derive(Clone, Copy, Debug)]
pub struct Source<'a> {
    pub image: &'a PolarImage,
    pub motion: &'a RigidMotion,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub recon: f64,
    pub smooth: f64,
}

#[derive(Clone, Debug)]
pub struct EstimationReport {
    /// Best-loss map; valid on the signal mask.
    pub elevation: ElevationMap,
    pub logits: Array2<f64>,
    /// One record per evaluated iterate, the initial one first.
    pub trajectory: Vec<LossRecord>,
    /// Optimizer updates performed.
    pub iterations: usize,
    pub best_iteration: usize,
    /// Share of masked pixels whose warp stayed inside each source grid, at
    /// the best iterate.
    pub in_bounds_fraction: Vec<f64>,
}

impl EstimationReport {
    pub fn initial_loss(&self) -> f64 {
        self.trajectory[0].total
    }

    pub fn best_loss(&self) -> f64 {
        self.trajectory[self.best_iteration].total
    }

    /// Fraction by which the best loss undercuts the initial one.
    pub fn loss_decrease(&self) -> f64 {
        let init = self.initial_loss();
        if init > 0.0 {
            1.0 - self.best_loss() / init
        } else {
            0.0
        }
    }

    /// The loss barely moved: the motion carries no elevation signal.
    pub fn is_degenerate(&self) -> bool {
        self.loss_decrease() < DEGENERATE_DECREASE
    }

    /// Iterations at which the `window`-mean of the loss rose relative to the
    /// previous window.
    pub fn smoothed_increases(&self, window: usize) -> Vec<usize> {
        let window = window.max(1);
        let totals: Vec<f64> = self.trajectory.iter().map(|r| r.total).collect();
        let means: Vec<f64> = totals.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect();
        means
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] > w[0] * (1.0 + 1e-12))
            .map(|(i, _)| i + window)
            .collect()
    }

    pub fn write_trajectory_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("iteration,total,recon,smooth\n");
        for r in &self.trajectory {
            out.push_str(&format!("{},{},{},{}\n", r.iteration, r.total, r.recon, r.smooth));
        }
        crate::io::write_atomic(path, out.as_bytes())
    }
}

struct Evaluation {
    record: LossRecord,
    grad: Array2<f64>,
    in_bounds: Vec<f64>,
}

fn evaluate(
    target: &PolarImage,
    sources: &[Source<'_>],
    weights: &[f64],
    mask: &Array2<bool>,
    phi: Array2<f64>,
    opt: &OptConfig,
    iteration: usize,
) -> Result<Evaluation> {
    let elevation = ElevationMap {
        phi,
        valid: mask.clone(),
        config: target.config,
    };
    let mut record = LossRecord {
        iteration,
        total: 0.0,
        recon: 0.0,
        smooth: 0.0,
    };
    let mut grad = Array2::zeros(mask.dim());
    let mut in_bounds = Vec::with_capacity(sources.len());
    let n_mask = mask.iter().filter(|v| **v).count() as f64;
    for (src, w) in sources.iter().zip(weights) {
        let warp = inverse_warp(&elevation, src.image, src.motion)?;
        let synth = Zip::from(&warp.synth.data)
            .and(&warp.in_bounds)
            .and(&target.data)
            .map_collect(|s, ok, t| if *ok { *s } else { *t });
        let mut recon_mask = &warp.in_bounds & mask;
        if opt.aperture_mask {
            recon_mask &= &warp.in_aperture;
        }
        let b = total_loss(
            &target.data,
            &synth,
            &warp.jacobian,
            &elevation.phi,
            &recon_mask,
            mask,
            &opt.loss,
        )?;
        record.total += w * b.total;
        record.recon += w * b.recon;
        record.smooth += w * b.smooth;
        grad.scaled_add(*w, &b.grad);
        in_bounds.push(recon_mask.iter().filter(|v| **v).count() as f64 / n_mask);
    }
    if !record.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            iteration,
            detail: format!("loss {} or its gradient is not finite", record.total),
        });
    }
    Ok(Evaluation { record, grad, in_bounds })
}

/// Estimates the target elevation map from zero-elevation initialization.
pub fn estimate(target: &PolarImage, sources: &[Source<'_>], mask: &Array2<bool>, opt: &OptConfig) -> Result<EstimationReport> {
    let init = ElevParam::zeros(target.shape(), target.config.elevation_aperture);
    estimate_from(target, sources, mask, opt, init)
}

/// Estimates the target elevation map starting from `init`.
pub fn estimate_from(
    target: &PolarImage,
    sources: &[Source<'_>],
    mask: &Array2<bool>,
    opt: &OptConfig,
    init: ElevParam,
) -> Result<EstimationReport> {
    opt.validate()?;
    if sources.is_empty() || sources.len() > 2 {
        return Err(Error::Config(format!("need 1 or 2 sources, got {}", sources.len())));
    }
    if mask.dim() != target.shape() || init.logits.dim() != target.shape() {
        return Err(Error::Mismatch("mask or initial logits do not match the target grid".into()));
    }
    for s in sources {
        if s.image.config != target.config {
            return Err(Error::Mismatch("source and target sensor configs differ".into()));
        }
    }
    if !mask.iter().any(|v| *v) {
        return Err(Error::EmptyMask("estimation"));
    }
    let weights: Vec<f64> = if opt.source_weights.is_empty() {
        vec![1.0 / sources.len() as f64; sources.len()]
    } else if opt.source_weights.len() == sources.len() {
        let sum: f64 = opt.source_weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::Config("source weights sum to zero".into()));
        }
        opt.source_weights.iter().map(|w| w / sum).collect()
    } else {
        return Err(Error::Config(format!(
            "{} source weights for {} sources",
            opt.source_weights.len(),
            sources.len()
        )));
    };

    let mut param = init;
    let mut m = Array2::<f64>::zeros(mask.dim());
    let mut v = Array2::<f64>::zeros(mask.dim());
    let mut trajectory = Vec::with_capacity(opt.iterations + 1);
    let mut best: Option<(usize, Array2<f64>, Vec<f64>)> = None;
    let mut best_loss = f64::INFINITY;
    let mut iterations = 0;

    for it in 0..=opt.iterations {
        let eval = evaluate(target, sources, &weights, mask, param.phi(), opt, it)?;
        trajectory.push(eval.record);
        if eval.record.total < best_loss {
            best_loss = eval.record.total;
            best = Some((it, param.logits.clone(), eval.in_bounds.clone()));
        }
        if it == opt.iterations || stalled(&trajectory, opt) {
            break;
        }

        let grad_u = eval.grad * param.dphi_du();
        let t = (it + 1) as i32;
        let (c1, c2) = (1.0 - opt.beta1.powi(t), 1.0 - opt.beta2.powi(t));
        Zip::from(&mut param.logits)
            .and(&mut m)
            .and(&mut v)
            .and(&grad_u)
            .for_each(|u, m, v, g| {
                *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
                *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
                let step = opt.step * (*m / c1) / ((*v / c2).sqrt() + opt.epsilon);
                *u = (*u - step).clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
            });
        iterations += 1;
    }

    let (best_iteration, logits, in_bounds_fraction) = best.expect("at least one evaluation");
    let best_param = ElevParam {
        logits,
        aperture: param.aperture,
    };
    Ok(EstimationReport {
        elevation: ElevationMap::new(best_param.phi(), mask.clone(), target.config)?,
        logits: best_param.logits,
        trajectory,
        iterations,
        best_iteration,
        in_bounds_fraction,
    })
}

/// The best loss improved by less than `tolerance` (relative) over the last
/// `patience` iterations.
fn stalled(trajectory: &[LossRecord], opt: &OptConfig) -> bool {
    if opt.tolerance <= 0.0 || trajectory.len() <= opt.patience {
        return false;
    }
    let split = trajectory.len() - opt.patience;
    let before = trajectory[..split].iter().map(|r| r.total).fold(f64::INFINITY, f64::min);
    let after = trajectory[split..].iter().map(|r| r.total).fold(f64::INFINITY, f64::min);
    before <= 0.0 || (before - after) < opt.tolerance * before
}

/// Lifts every valid pixel to 3D at its bin centre and elevation, in the
/// sensor frame.
pub fn elevation_to_pointcloud(map: &ElevationMap) -> PointCloud {
    let c = map.config;
    let points = map
        .valid
        .indexed_iter()
        .filter(|(_, v)| **v)
        .map(|((i, j), _)| backproject(c.polar_of(i, j, map.phi[(i, j)])))
        .collect();
    PointCloud::new(points)
}
