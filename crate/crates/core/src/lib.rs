//! Forward-looking sonar geometry laboratory.
//!
//! The crate covers the imaging model of a 2D forward-looking sonar, the
//! motion field it induces under sensor motion, a heightfield simulator that
//! renders polar intensity images with ground-truth elevation, inverse
//! warping between views, the photometric self-supervision loss and a
//! per-image variational estimator that recovers elevation from it.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod motion_field;
pub mod raster;
pub mod simulator;
pub mod warp;

pub use error::{Error, Result};
pub use estimator::{
    elevation_to_pointcloud, estimate, estimate_from, ElevParam, EstimationReport, OptConfig,
    Source,
};
pub use geometry::{
    backproject, exp_twist, pixel_of, project, transform, PixelCoord, Point3, PolarCoord,
    RigidMotion, SensorConfig, Twist, Vec3,
};
pub use loss::{recon_loss, smooth_loss, ssim, total_loss, LossBreakdown, LossWeights};
pub use mask::{binarize, MaskParams, SignalMask};
pub use metrics::{chamfer, f_score, mae, psnr, EvalResult};
pub use motion_field::{
    approx_field, degeneracy_score, exact_field, field_grid, sensitivity_scan, FieldModel,
    MotionFieldGrid, SensitivityScan,
};
pub use raster::{ElevationMap, PointCloud, PolarImage};
pub use simulator::{gen_dataset, gen_terrain, render, DatasetManifest, MotionTag};
pub use warp::{inverse_warp, warp_jacobian, WarpResult};
