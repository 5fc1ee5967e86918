//! Inverse warping of a source frame into the target view.
//!
//! Every valid target pixel is lifted to 3D with its elevation angle, moved
//! into the source frame and re-polarized. The source image is sampled
//! bilinearly on its `(r, theta)` grid. The derivative of the sampled value
//! with respect to the pixel's elevation angle is carried alongside.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::{backproject, RigidMotion, SensorConfig, Vec3};
use crate::raster::{ElevationMap, PolarImage};

/// Sample positions this close to a grid line (in bins) are snapped onto it,
/// so that an identity warp reads node values exactly.
const SNAP: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct WarpResult {
    /// Synthesized target view. Zero where nothing was sampled.
    pub synth: PolarImage,
    /// The sample position fell inside the source grid.
    pub in_bounds: Array2<bool>,
    /// The warped point lies inside the source's elevation aperture, i.e.
    /// the source could physically have imaged it.
    pub in_aperture: Array2<bool>,
    /// d synth / d phi, intensity per radian. Zero where not in bounds.
    pub jacobian: Array2<f64>,
    /// Continuous `(row, col)` sample position in the source grid.
    pub sample_pos: Array2<(f64, f64)>,
}

impl WarpResult {
    pub fn in_bounds_count(&self) -> usize {
        self.in_bounds.iter().filter(|v| **v).count()
    }
}

/// Bilinear sample of `img` at continuous `(row, col)` with its partial
/// derivatives `(value, d/drow, d/dcol)`. `None` outside the node hull.
pub fn sample_bilinear(img: &Array2<f64>, row: f64, col: f64) -> Option<(f64, f64, f64)> {
    let (h, w) = img.dim();
    if h < 2 || w < 2 {
        return None;
    }
    let (row, col) = (snap(row), snap(col));
    if !(row >= 0.0 && col >= 0.0 && row <= (h - 1) as f64 && col <= (w - 1) as f64) {
        return None;
    }
    let i = (row.floor() as usize).min(h - 2);
    let j = (col.floor() as usize).min(w - 2);
    let fr = row - i as f64;
    let fc = col - j as f64;
    let (a, b) = (img[(i, j)], img[(i, j + 1)]);
    let (c, d) = (img[(i + 1, j)], img[(i + 1, j + 1)]);
    // This lerp form is exact at both ends, so node reads carry no rounding.
    let top = (1.0 - fc) * a + fc * b;
    let bottom = (1.0 - fc) * c + fc * d;
    let value = (1.0 - fr) * top + fr * bottom;
    let d_row = (1.0 - fc) * (c - a) + fc * (d - b);
    let d_col = (1.0 - fr) * (b - a) + fr * (d - c);
    Some((value, d_row, d_col))
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

fn check_configs(a: &SensorConfig, b: &SensorConfig) -> Result<()> {
    if a != b {
        return Err(Error::Mismatch(
            "elevation map and source image use different sensor configs".into(),
        ));
    }
    Ok(())
}

/// Synthesizes the target view from `source`, using the target elevation map
/// `elevation` and `motion`, which maps target-frame points into the source
/// frame.
pub fn inverse_warp(elevation: &ElevationMap, source: &PolarImage, motion: &RigidMotion) -> Result<WarpResult> {
    let config = elevation.config;
    check_configs(&config, &source.config)?;
    let (h, w) = config.shape();
    let rho = config.range_resolution();
    let dtheta = config.azimuth_step();
    let half = config.half_aperture();
    let rot = motion.rotation.matrix();

    let mut synth = Array2::zeros((h, w));
    let mut in_bounds = Array2::from_elem((h, w), false);
    let mut in_aperture = Array2::from_elem((h, w), false);
    let mut jacobian = Array2::zeros((h, w));
    let mut sample_pos = Array2::from_elem((h, w), (f64::NAN, f64::NAN));

    for ((row, col), &valid) in elevation.valid.indexed_iter() {
        if !valid {
            continue;
        }
        let phi = elevation.phi[(row, col)];
        let c = config.polar_of(row, col, phi);
        let p_t = backproject(c);
        let p_s = motion.apply(&p_t);
        let (x, y, z) = (p_s.x, p_s.y, p_s.z);
        let rho_xy2 = x * x + y * y;
        let r_s = (rho_xy2 + z * z).sqrt();
        if !(r_s > 0.0 && rho_xy2 > 0.0) {
            continue;
        }
        let theta_s = y.atan2(x);
        let sr = config.row_coord(r_s);
        let sc = config.col_coord(theta_s);
        sample_pos[(row, col)] = (sr, sc);
        in_aperture[(row, col)] = (z / r_s).abs() <= half.sin();
        let Some((value, d_row, d_col)) = sample_bilinear(&source.data, sr, sc) else {
            continue;
        };
        in_bounds[(row, col)] = true;
        synth[(row, col)] = value;

        let (sp, cp) = phi.sin_cos();
        let (st, ct) = c.theta.sin_cos();
        let dp_t = Vec3::new(-c.r * sp * ct, -c.r * sp * st, c.r * cp);
        let dp_s = rot * dp_t;
        let dr = (x * dp_s.x + y * dp_s.y + z * dp_s.z) / r_s;
        let dth = (x * dp_s.y - y * dp_s.x) / rho_xy2;
        jacobian[(row, col)] = d_row * dr / rho + d_col * dth / dtheta;
    }

    Ok(WarpResult {
        synth: PolarImage::new(synth, config, source.pose.compose(motion))?,
        in_bounds,
        in_aperture,
        jacobian,
        sample_pos,
    })
}

/// Per-pixel derivative of the synthesized intensity with respect to the
/// pixel's elevation angle.
pub fn warp_jacobian(elevation: &ElevationMap, source: &PolarImage, motion: &RigidMotion) -> Result<Array2<f64>> {
    inverse_warp(elevation, source, motion).map(|r| r.jacobian)
}
