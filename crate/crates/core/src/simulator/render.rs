//! Raycast rendering of polar sonar frames over a heightfield.
//!
//! Every azimuth beam is sampled by `n_phi` rays spread over the elevation
//! aperture. Each ray marches to its first terrain intersection. Consecutive
//! hits on the same surface are joined into segments whose angular extent is
//! spread over the range bins they cross, so a bin's intensity is the
//! angle-weighted mean Lambertian factor of the surface it sees. This keeps
//! the images free of ray-count aliasing.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::terrain::Terrain;
use crate::error::Result;
use crate::geometry::{backproject, Point3, PolarCoord, RigidMotion, SensorConfig, Vec3};
use crate::raster::{ElevationMap, PointCloud, PolarImage};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Elevation samples per beam across the aperture.
    pub n_phi: usize,
    /// Coarse marching step along each ray, metres.
    pub march_step: f64,
    /// Largest range jump between neighbouring hits still treated as one surface.
    pub max_gap: f64,
    /// Intensity scale applied to the Lambertian factor.
    pub gain: f64,
    /// Multiply intensities by `(r_min / r)^2`.
    pub spreading: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            n_phi: 256,
            march_step: 0.02,
            max_gap: 0.1,
            gain: 1.0,
            spreading: false,
        }
    }
}

/// Output of one render call.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub image: PolarImage,
    pub elevation: ElevationMap,
    /// Every ray hit inside the range window, in the sensor frame.
    pub cloud: PointCloud,
    /// Pixels that received returns from more than one surface patch.
    pub multi_hit_pixels: usize,
}

#[derive(Clone, Copy, Debug)]
struct Hit {
    r: f64,
    phi: f64,
    lambert: f64,
    point: Point3,
}

#[derive(Clone, Copy, Debug, Default)]
struct Bin {
    weight: f64,
    shade: f64,
    best: f64,
    best_phi: f64,
    hit: bool,
    group: Option<usize>,
    multi: bool,
}

impl Bin {
    fn add(&mut self, weight: f64, lambert: f64, phi: f64, group: usize) {
        let contribution = weight * (lambert + 1e-3);
        if !self.hit || contribution > self.best {
            self.best = contribution;
            self.best_phi = phi;
        }
        self.hit = true;
        self.weight += weight;
        self.shade += weight * lambert;
        match self.group {
            None => self.group = Some(group),
            Some(g) if g != group => self.multi = true,
            _ => {}
        }
    }
}

/// Renders the frame seen from `pose` (world <- sensor).
pub fn render(
    terrain: &Terrain,
    pose: &RigidMotion,
    config: &SensorConfig,
    opts: &RenderOptions,
) -> Result<Rendered> {
    config.validate()?;
    let (n_range, n_az) = config.shape();
    let half = config.half_aperture();
    let n_phi = opts.n_phi.max(2);
    let dphi = config.elevation_aperture / n_phi as f64;

    let mut intensity = Array2::zeros((n_range, n_az));
    let mut phi_map = Array2::zeros((n_range, n_az));
    let mut valid = Array2::from_elem((n_range, n_az), false);
    let mut cloud = Vec::new();
    let mut multi_hit_pixels = 0;

    let mut hits: Vec<Option<Hit>> = Vec::with_capacity(n_phi);
    let mut bins = vec![Bin::default(); n_range];
    for col in 0..n_az {
        let theta = config.theta_of_col(col);
        hits.clear();
        for k in 0..n_phi {
            let phi = -half + (k as f64 + 0.5) * dphi;
            hits.push(cast(terrain, pose, config, opts, theta, phi));
        }
        bins.iter_mut().for_each(|b| *b = Bin::default());

        let connected = |a: &Hit, b: &Hit| (a.r - b.r).abs() <= opts.max_gap;
        let mut group = 0;
        for k in 0..n_phi {
            let Some(h) = hits[k] else {
                continue;
            };
            if h.r >= config.r_min && h.r < config.r_max {
                cloud.push(h.point);
            }
            let prev_linked = k > 0 && hits[k - 1].is_some_and(|p| connected(&p, &h));
            if !prev_linked {
                group += 1;
                deposit_point(&mut bins, config, h.r, 0.5 * dphi, h.lambert, h.phi, group);
            }
            match hits.get(k + 1).copied().flatten() {
                Some(next) if connected(&h, &next) => {
                    deposit_segment(&mut bins, config, &h, &next, dphi, group);
                }
                _ => deposit_point(&mut bins, config, h.r, 0.5 * dphi, h.lambert, h.phi, group),
            }
        }

        for (row, b) in bins.iter().enumerate() {
            if !b.hit {
                continue;
            }
            let mut v = if b.weight > 0.0 { opts.gain * b.shade / b.weight } else { 0.0 };
            if opts.spreading {
                let r = config.range_of_row(row);
                v *= (config.r_min / r).powi(2);
            }
            intensity[(row, col)] = v.clamp(0.0, 1.0);
            phi_map[(row, col)] = b.best_phi.clamp(-half, half);
            valid[(row, col)] = true;
            if b.multi {
                multi_hit_pixels += 1;
            }
        }
    }

    Ok(Rendered {
        image: PolarImage::new(intensity, *config, *pose)?,
        elevation: ElevationMap::new(phi_map, valid, *config)?,
        cloud: PointCloud::new(cloud),
        multi_hit_pixels,
    })
}

fn deposit_point(
    bins: &mut [Bin],
    config: &SensorConfig,
    r: f64,
    weight: f64,
    lambert: f64,
    phi: f64,
    group: usize,
) {
    let idx = ((r - config.r_min) / config.range_resolution()).floor();
    if idx >= 0.0 && (idx as usize) < bins.len() {
        bins[idx as usize].add(weight, lambert, phi, group);
    }
}

/// Spreads the angular extent between two adjacent hits over the bins
/// their range interval covers, interpolating shading and elevation.
fn deposit_segment(bins: &mut [Bin], config: &SensorConfig, a: &Hit, b: &Hit, dphi: f64, group: usize) {
    let rho = config.range_resolution();
    let (lo, hi) = if a.r <= b.r { (a, b) } else { (b, a) };
    let span = hi.r - lo.r;
    if span <= 1e-12 {
        let lambert = 0.5 * (a.lambert + b.lambert);
        deposit_point(bins, config, lo.r, dphi, lambert, 0.5 * (a.phi + b.phi), group);
        return;
    }
    let first = ((lo.r - config.r_min) / rho).floor().max(0.0) as usize;
    let last = ((hi.r - config.r_min) / rho).floor();
    if last < 0.0 {
        return;
    }
    let last = (last as usize).min(bins.len().saturating_sub(1));
    for (idx, bin) in bins.iter_mut().enumerate().take(last + 1).skip(first) {
        let bin_lo = config.r_min + idx as f64 * rho;
        let a_r = lo.r.max(bin_lo);
        let b_r = hi.r.min(bin_lo + rho);
        if b_r <= a_r {
            continue;
        }
        let mid = ((0.5 * (a_r + b_r)) - lo.r) / span;
        let weight = dphi * (b_r - a_r) / span;
        let lambert = lo.lambert + (hi.lambert - lo.lambert) * mid;
        let phi = lo.phi + (hi.phi - lo.phi) * mid;
        bin.add(weight, lambert, phi, group);
    }
}

/// First terrain hit along the ray `(theta, phi)` within `r_max`.
///
/// Hits closer than `r_min` still occlude; they are returned and filtered by
/// the caller's range window.
fn cast(
    terrain: &Terrain,
    pose: &RigidMotion,
    config: &SensorConfig,
    opts: &RenderOptions,
    theta: f64,
    phi: f64,
) -> Option<Hit> {
    let dir_s = backproject(PolarCoord::new(1.0, theta, phi)).coords;
    let dir = pose.rotation * dir_s;
    let origin = pose.translation;
    let clearance = |t: f64| -> Option<f64> {
        let p = origin + dir * t;
        terrain.height_at(p.x, p.y).map(|h| p.z - h)
    };

    let step = opts.march_step.max(1e-4);
    let mut t_prev = 0.0;
    let mut c_prev = clearance(0.0);
    if c_prev.is_some_and(|c| c <= 0.0) {
        return None;
    }
    let mut t = step;
    while t_prev < config.r_max {
        let t_cur = t.min(config.r_max);
        let c_cur = clearance(t_cur);
        if let (Some(_), Some(c)) = (c_prev, c_cur) {
            if c <= 0.0 {
                let (mut a, mut b) = (t_prev, t_cur);
                for _ in 0..40 {
                    let m = 0.5 * (a + b);
                    match clearance(m) {
                        Some(cm) if cm > 0.0 => a = m,
                        _ => b = m,
                    }
                }
                let r = 0.5 * (a + b);
                if r < config.r_min || r >= config.r_max {
                    return None;
                }
                let p = origin + dir * r;
                let (_, hx, hy) = terrain.sample(p.x, p.y)?;
                let normal = Vec3::new(-hx, -hy, 1.0).normalize();
                let lambert = (-normal.dot(&dir)).max(0.0);
                return Some(Hit {
                    r,
                    phi,
                    lambert,
                    point: Point3::from(dir_s * r),
                });
            }
        }
        t_prev = t_cur;
        c_prev = c_cur;
        t += step;
    }
    None
}
