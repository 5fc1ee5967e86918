//! Co-registered polar rasters and point sets shared across the pipeline.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidMotion, SensorConfig};

/// Range-azimuth intensity image. Rows are range bins, columns azimuth beams.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarImage {
    pub data: Array2<f64>,
    pub config: SensorConfig,
    /// Frame pose, world <- sensor.
    pub pose: RigidMotion,
}

impl PolarImage {
    /// Wraps `data`, clamping intensities to `[0, 1]`.
    pub fn new(mut data: Array2<f64>, config: SensorConfig, pose: RigidMotion) -> Result<Self> {
        check_shape(&data, &config, "image")?;
        data.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Ok(Self { data, config, pose })
    }

    pub fn zeros(config: SensorConfig) -> Self {
        Self {
            data: Array2::zeros(config.shape()),
            config,
            pose: RigidMotion::identity(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }
}

/// Per-pixel elevation angle with a validity plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ElevationMap {
    pub phi: Array2<f64>,
    pub valid: Array2<bool>,
    pub config: SensorConfig,
}

impl ElevationMap {
    pub fn new(phi: Array2<f64>, valid: Array2<bool>, config: SensorConfig) -> Result<Self> {
        check_shape(&phi, &config, "elevation")?;
        if valid.dim() != phi.dim() {
            return Err(Error::Mismatch("validity plane shape".into()));
        }
        let half = config.half_aperture();
        for (p, v) in phi.iter().zip(valid.iter()) {
            if *v && !(p.abs() <= half + 1e-12) {
                return Err(Error::Domain(format!(
                    "valid elevation {p} outside aperture +/-{half}"
                )));
            }
        }
        Ok(Self { phi, valid, config })
    }

    /// Constant elevation over the given validity plane.
    pub fn constant(phi: f64, valid: Array2<bool>, config: SensorConfig) -> Result<Self> {
        let values = Array2::from_elem(valid.dim(), phi);
        Self::new(values, valid, config)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.phi.dim()
    }
}

/// A set of 3D points in one declared frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, m: &RigidMotion) -> PointCloud {
        PointCloud::new(self.points.iter().map(|p| m.apply(p)).collect())
    }
}

pub(crate) fn check_shape<T>(a: &Array2<T>, config: &SensorConfig, what: &str) -> Result<()> {
    if a.dim() != config.shape() {
        return Err(Error::Mismatch(format!(
            "{what} is {:?} but config grid is {:?}",
            a.dim(),
            config.shape()
        )));
    }
    Ok(())
}
