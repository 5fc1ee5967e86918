//! Motion field of a forward-looking sonar.
//!
//! Differentiating `s = [I_2 0] p / cos(phi)` along a rigid motion gives the
//! pixel velocity
//!
//! ```text
//! ds/dt = [I_2 0] (dp/dt) / cos(phi) + tan(phi) s dphi/dt
//! dphi/dt = (-cos(theta) sin(phi), -sin(theta) sin(phi), cos(phi)) . dp/dt / r
//! dp/dt = omega x p - t
//! ```
//!
//! [`exact_field`] is the closed form of that composition with every term
//! kept. [`approx_field`] drops the `1/cos(phi)` and `sin(phi) tan(phi)`
//! corrections, which are below 1.5% inside a +/-7 degree aperture. The
//! single-axis closed forms show which motions carry elevation information:
//! horizontal motion (`t_x`, `t_y`, `omega_z`) does not depend on `phi` at
//! all, roll (`omega_x`) and heave (`t_z`) do at a measurable scale, and
//! pitch (`omega_y`) does, but weakly.

use std::io::Write;

use nalgebra::Vector2;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::{PixelCoord, PolarCoord, SensorConfig, Twist, Vec3};
use crate::raster::ElevationMap;

/// Pixel displacement `(dx_s/dt, dy_s/dt)`, metres per unit motion.
pub type Displacement = Vector2<f64>;

/// Velocity of a stationary scene point seen from a sensor moving by `xi`.
pub fn point_velocity(p: &Vec3, xi: &Twist) -> Vec3 {
    xi.omega.cross(p) - xi.t
}

/// Rate of change of elevation for a point at `c` moving with velocity `dp`.
pub fn elevation_rate(c: PolarCoord, dp: &Vec3) -> Result<f64> {
    if !(c.r > 0.0) {
        return Err(Error::Domain(format!("elevation rate needs r > 0, got {}", c.r)));
    }
    let (sp, cp) = c.phi.sin_cos();
    let (st, ct) = c.theta.sin_cos();
    Ok((-ct * sp * dp.x - st * sp * dp.y + cp * dp.z) / c.r)
}

fn pixel_range(s: &PixelCoord) -> Result<f64> {
    let r = s.range();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("pixel range must be positive, got {r}")));
    }
    Ok(r)
}

/// Motion field with all second-order elevation terms.
///
/// `r` is the slant range `|s|`; `phi` is the pixel's elevation.
pub fn exact_field(s: PixelCoord, phi: f64, xi: &Twist) -> Result<Displacement> {
    let r = pixel_range(&s)?;
    let (x, y) = (s.x, s.y);
    let (sp, cp) = phi.sin_cos();
    let tp = sp / cp;
    let st = sp * tp;
    let [tx, ty, tz, wx, wy, wz] = xi.components();
    let r2 = r * r;

    let dx = -tx / cp - (tz * sp / r) * x - wz * y
        + (st * tx / r2) * x * x
        + (st * ty / r2 + tp * wx / r) * x * y
        + (tp * wy / r) * y * y;
    let dy = -ty / cp - (tz * sp / r) * y + wz * x
        + (st * ty / r2) * y * y
        + (st * tx / r2 - tp * wy / r) * x * y
        - (tp * wx / r) * x * x;
    Ok(Displacement::new(dx, dy))
}

/// Small-aperture motion field: `cos(phi) -> 1`, `sin(phi) tan(phi) -> 0`.
pub fn approx_field(s: PixelCoord, phi: f64, xi: &Twist) -> Result<Displacement> {
    let r = pixel_range(&s)?;
    let (x, y) = (s.x, s.y);
    let sp = phi.sin();
    let tp = phi.tan();
    let [tx, ty, tz, wx, wy, wz] = xi.components();

    let dx = -tx - (tz * sp / r) * x - wz * y + (tp * wx / r) * x * y + (tp * wy / r) * y * y;
    let dy = -ty - (tz * sp / r) * y + wz * x - (tp * wy / r) * x * y - (tp * wx / r) * x * x;
    Ok(Displacement::new(dx, dy))
}

/// Horizontal motion (`t_x`, `t_y`, `omega_z`). Elevation does not enter.
pub fn basic_horizontal(s: PixelCoord, tx: f64, ty: f64, wz: f64) -> Displacement {
    Displacement::new(-tx - wz * s.y, -ty + wz * s.x)
}

/// Roll (`omega_x`): `r w tan(phi) (cos sin, -cos^2)`.
pub fn basic_roll(s: PixelCoord, phi: f64, wx: f64) -> Displacement {
    let (r, theta) = (s.range(), s.theta());
    let (st, ct) = theta.sin_cos();
    let k = r * wx * phi.tan();
    Displacement::new(k * ct * st, -k * ct * ct)
}

/// Pitch (`omega_y`): `r w tan(phi) (sin^2, -cos sin)`.
pub fn basic_pitch(s: PixelCoord, phi: f64, wy: f64) -> Displacement {
    let (r, theta) = (s.range(), s.theta());
    let (st, ct) = theta.sin_cos();
    let k = r * wy * phi.tan();
    Displacement::new(k * st * st, -k * ct * st)
}

/// Heave (`t_z`): `-t_z sin(phi) (cos, sin)`.
pub fn basic_ztrans(s: PixelCoord, phi: f64, tz: f64) -> Displacement {
    let (st, ct) = s.theta().sin_cos();
    let k = tz * phi.sin();
    Displacement::new(-k * ct, -k * st)
}

/// Which closed form to evaluate on a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldModel {
    Exact,
    Approx,
}

/// Per-pixel motion field over an elevation map.
#[derive(Clone, Debug)]
pub struct MotionFieldGrid {
    pub dx: Array2<f64>,
    pub dy: Array2<f64>,
    pub valid: Array2<bool>,
    pub twist: Twist,
    pub config: SensorConfig,
}

impl MotionFieldGrid {
    /// Largest displacement magnitude over valid pixels.
    pub fn peak_magnitude(&self) -> f64 {
        ndarray::Zip::from(&self.dx)
            .and(&self.dy)
            .and(&self.valid)
            .fold(0.0f64, |acc, dx, dy, v| if *v { acc.max(dx.hypot(*dy)) } else { acc })
    }

    /// Writes `row,col,r_m,theta_deg,dx_m,dy_m,valid` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,r_m,theta_deg,dx_m,dy_m,valid")?;
        for ((row, col), v) in self.valid.indexed_iter() {
            writeln!(
                w,
                "{row},{col},{},{},{},{},{}",
                self.config.range_of_row(row),
                self.config.theta_of_col(col).to_degrees(),
                self.dx[(row, col)],
                self.dy[(row, col)],
                u8::from(*v)
            )?;
        }
        Ok(())
    }
}

/// Evaluates the motion field at every valid pixel of `elevation`.
pub fn field_grid(elevation: &ElevationMap, xi: &Twist, model: FieldModel) -> MotionFieldGrid {
    let config = elevation.config;
    let shape = config.shape();
    let mut dx = Array2::zeros(shape);
    let mut dy = Array2::zeros(shape);
    let mut valid = elevation.valid.clone();
    for ((row, col), v) in valid.indexed_iter_mut() {
        if !*v {
            continue;
        }
        let s = crate::geometry::pixel_of(config.polar_of(row, col, 0.0));
        let phi = elevation.phi[(row, col)];
        let d = match model {
            FieldModel::Exact => exact_field(s, phi, xi),
            FieldModel::Approx => approx_field(s, phi, xi),
        };
        match d {
            Ok(d) if d.iter().all(|c| c.is_finite()) => {
                dx[(row, col)] = d.x;
                dy[(row, col)] = d.y;
            }
            _ => *v = false,
        }
    }
    MotionFieldGrid {
        dx,
        dy,
        valid,
        twist: *xi,
        config,
    }
}

/// Displacement along an azimuth sweep at fixed range and elevation.
#[derive(Clone, Debug)]
pub struct SensitivityScan {
    pub r: f64,
    pub phi: f64,
    pub twist: Twist,
    pub theta: Vec<f64>,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    /// Range resolution of the sensor.
    pub rho: f64,
    /// Tangential resolution at `r`.
    pub gamma: f64,
}

impl SensitivityScan {
    pub fn peak_abs_dx(&self) -> f64 {
        self.dx.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn peak_abs_dy(&self) -> f64 {
        self.dy.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// True if some sample moves by more than `rho` in x or `gamma` in y.
    pub fn is_resolvable(&self) -> bool {
        self.peak_abs_dx() > self.rho || self.peak_abs_dy() > self.gamma
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SCAN_CSV_HEADER}")?;
        for i in 0..self.theta.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.theta[i].to_degrees(),
                self.dx[i],
                self.dy[i],
                self.rho,
                self.gamma
            )?;
        }
        Ok(())
    }
}

pub const SCAN_CSV_HEADER: &str = "theta_deg,dx_m,dy_m,rho_m,gamma_m";

/// Tabulates [`exact_field`] for `n_samples` azimuths evenly covering
/// `theta_range` (inclusive).
pub fn sensitivity_scan(
    config: &SensorConfig,
    r: f64,
    phi: f64,
    xi: &Twist,
    theta_range: (f64, f64),
    n_samples: usize,
) -> Result<SensitivityScan> {
    if n_samples < 2 {
        return Err(Error::Config("a scan needs at least 2 samples".into()));
    }
    let (lo, hi) = theta_range;
    let half_fov = 0.5 * config.azimuth_fov;
    if lo > hi || lo < -half_fov - 1e-12 || hi > half_fov + 1e-12 {
        return Err(Error::Config(format!(
            "scan range [{lo}, {hi}] rad outside the +/-{half_fov} rad field of view"
        )));
    }
    let mut scan = SensitivityScan {
        r,
        phi,
        twist: *xi,
        theta: Vec::with_capacity(n_samples),
        dx: Vec::with_capacity(n_samples),
        dy: Vec::with_capacity(n_samples),
        rho: config.range_resolution(),
        gamma: config.tangential_resolution(r),
    };
    for i in 0..n_samples {
        let theta = lo + (hi - lo) * i as f64 / (n_samples - 1) as f64;
        let d = exact_field(crate::geometry::pixel_of(PolarCoord::new(r, theta, phi)), phi, xi)?;
        scan.theta.push(theta);
        scan.dx.push(d.x);
        scan.dy.push(d.y);
    }
    Ok(scan)
}

/// How far the top and bottom of the aperture disagree about where a pixel
/// moves, in units of the sensor's resolution.
///
/// For every bin centre the difference between the exact fields at
/// `phi = +aperture/2` and `phi = -aperture/2` is split into its radial and
/// tangential parts, which are divided by the range resolution `rho` and the
/// tangential resolution `gamma(r)` respectively. The score is the largest of
/// these ratios over the grid. Below 1 the motion cannot reveal elevation at
/// this sensor's resolution.
pub fn degeneracy_score(xi: &Twist, config: &SensorConfig) -> f64 {
    let half = config.half_aperture();
    let rho = config.range_resolution();
    let mut score = 0.0f64;
    for row in 0..config.n_range {
        let r = config.range_of_row(row);
        let gamma = config.tangential_resolution(r);
        for col in 0..config.n_azimuth {
            let theta = config.theta_of_col(col);
            let s = crate::geometry::pixel_of(PolarCoord::new(r, theta, 0.0));
            let (Ok(up), Ok(down)) = (exact_field(s, half, xi), exact_field(s, -half, xi)) else {
                continue;
            };
            let d = up - down;
            let (st, ct) = theta.sin_cos();
            let radial = d.x * ct + d.y * st;
            let tangential = -d.x * st + d.y * ct;
            score = score.max(radial.abs() / rho).max(tangential.abs() / gamma);
        }
    }
    score
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{backproject, exp_twist, pixel_of, project};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn deg(v: f64) -> f64 {
        v.to_radians()
    }

    /// Pixel velocity by pushing the 3D point through a tiny finite motion.
    fn finite_difference_field(c: PolarCoord, xi: &Twist, dt: f64) -> Displacement {
        let p = backproject(c);
        let moved = exp_twist(&(*xi * dt)).apply(&p);
        let s0 = pixel_of(project(&p).unwrap());
        let s1 = pixel_of(project(&moved).unwrap());
        (s1.as_vector() - s0.as_vector()) / dt
    }

    #[test]
    fn point_velocity_examples() {
        let v = point_velocity(&Vec3::new(0.3, 2.0, -1.0), &Twist::translation(0.1, 0.0, 0.0));
        assert_eq!(v, Vec3::new(-0.1, 0.0, 0.0));
        let v = point_velocity(&Vec3::new(1.0, 0.0, 0.0), &Twist::rotation(0.0, 0.0, 1.0));
        assert_eq!(v, Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(point_velocity(&Vec3::new(1.0, 2.0, 3.0), &Twist::zero()), Vec3::zeros());
    }

    #[test]
    fn elevation_rate_examples() {
        let c = PolarCoord::new(2.5, 0.3, 0.1);
        let radial = backproject(c).coords / c.r;
        assert!(elevation_rate(c, &radial).unwrap().abs() < 1e-15);

        let up = elevation_rate(PolarCoord::new(1.0, 0.0, 0.0), &Vec3::z()).unwrap();
        assert_eq!(up, 1.0);

        let v = elevation_rate(PolarCoord::new(2.0, 0.0, deg(30.0)), &Vec3::x()).unwrap();
        assert_relative_eq!(v, -0.25, epsilon = 1e-15);

        assert!(elevation_rate(PolarCoord::new(0.0, 0.0, 0.0), &Vec3::x()).is_err());
    }

    #[test]
    fn exact_field_examples() {
        let xi = Twist::translation(0.1, 0.0, 0.0);
        for (r, th) in [(1.0, 0.0), (3.3, 0.2), (4.9, -0.25)] {
            let d = exact_field(pixel_of(PolarCoord::new(r, th, 0.0)), 0.0, &xi).unwrap();
            assert_relative_eq!(d, Displacement::new(-0.1, 0.0), epsilon = 1e-16);
        }

        let xi = Twist::rotation(0.174533, 0.0, 0.0);
        let d = exact_field(pixel_of(PolarCoord::new(3.5, 0.0, 0.0)), deg(3.5), &xi).unwrap();
        assert_eq!(d.x, 0.0);
        assert_relative_eq!(d.y, -0.037363, epsilon = 1e-6);

        assert!(exact_field(PixelCoord::new(0.0, 0.0), 0.0, &xi).is_err());
    }

    #[test]
    fn approx_matches_exact_where_dropped_terms_vanish() {
        let xi = Twist::from_components([0.1, -0.05, 0.08, 0.1, -0.2, 0.15]);
        let s = pixel_of(PolarCoord::new(3.1, 0.12, 0.0));
        assert_eq!(exact_field(s, 0.0, &xi).unwrap(), approx_field(s, 0.0, &xi).unwrap());

        let roll = Twist::rotation(deg(10.0), 0.0, 0.0);
        for th in [-0.2, 0.0, 0.13] {
            let s = pixel_of(PolarCoord::new(3.5, th, 0.0));
            let e = exact_field(s, deg(3.5), &roll).unwrap();
            let a = approx_field(s, deg(3.5), &roll).unwrap();
            assert_relative_eq!(e, a, epsilon = 1e-15);
        }
    }

    #[test]
    fn approx_discrepancy_small_inside_aperture() {
        // |t| = 0.12 m and |omega| = 10 deg, mixed directions, phi = +/-7 deg.
        let t = Vec3::new(0.07, -0.06, 0.075).normalize() * 0.12;
        let w = Vec3::new(0.5, -0.3, 0.6).normalize() * deg(10.0);
        let xi = Twist::new(t, w);
        let config = SensorConfig::aris_explorer_3000();
        let mut peak = 0.0f64;
        let mut worst = 0.0f64;
        for phi in [deg(-7.0), deg(7.0)] {
            for row in (0..config.n_range).step_by(7) {
                for col in 0..config.n_azimuth {
                    let s = pixel_of(config.polar_of(row, col, 0.0));
                    let e = exact_field(s, phi, &xi).unwrap();
                    let a = approx_field(s, phi, &xi).unwrap();
                    peak = peak.max(e.x.abs()).max(e.y.abs());
                    worst = worst.max((e.x - a.x).abs()).max((e.y - a.y).abs());
                }
            }
        }
        assert!(worst <= 0.02 * peak, "discrepancy {worst} vs peak {peak}");
    }

    #[test]
    fn basic_closed_form_examples() {
        let s = PixelCoord::new(2.0, 1.0);
        assert_eq!(basic_horizontal(s, 0.1, 0.0, 0.0), Displacement::new(-0.1, 0.0));
        let d = basic_horizontal(s, 0.0, 0.0, 0.1);
        assert_relative_eq!(d, Displacement::new(-0.1, 0.2), epsilon = 1e-16);
        assert_eq!(basic_horizontal(s, 0.0, 0.0, 0.0), Displacement::zeros());

        let on_axis = PixelCoord::new(3.5, 0.0);
        let d = basic_roll(on_axis, deg(3.5), deg(10.0));
        assert_eq!(d.x, 0.0);
        assert_relative_eq!(d.y, -0.037363, epsilon = 1e-6);

        let d = basic_ztrans(on_axis, deg(3.5), 0.1745);
        assert_relative_eq!(d.x, -0.010653, epsilon = 1e-6);
        assert_eq!(d.y, 0.0);

        assert_eq!(basic_pitch(on_axis, deg(3.5), deg(10.0)), Displacement::zeros());
    }

    #[test]
    fn scan_examples() {
        let config = SensorConfig::aris_explorer_3000();
        let range = (deg(-15.0), deg(15.0));
        let roll = sensitivity_scan(&config, 3.5, deg(3.5), &Twist::rotation(deg(10.0), 0.0, 0.0), range, 301).unwrap();
        assert_relative_eq!(roll.peak_abs_dy(), 0.037363, epsilon = 1e-6);
        assert_eq!(roll.dy[150], -roll.peak_abs_dy());
        assert!(roll.dy.iter().all(|v| *v <= 0.0));
        assert!(roll.is_resolvable());

        let pitch = sensitivity_scan(&config, 3.5, deg(3.5), &Twist::rotation(0.0, deg(10.0), 0.0), range, 301).unwrap();
        assert_relative_eq!(pitch.peak_abs_dx(), 0.0025028, epsilon = 1e-6);
        assert!(pitch.peak_abs_dx() < pitch.rho);
        assert!(!pitch.is_resolvable());
        // dx is even in theta, dy odd.
        for i in 0..301 {
            assert_relative_eq!(pitch.dx[i], pitch.dx[300 - i], epsilon = 1e-15);
            assert_relative_eq!(pitch.dy[i], -pitch.dy[300 - i], epsilon = 1e-15);
        }

        assert_relative_eq!(roll.gamma, 0.0143, epsilon = 1e-4);
        assert!(sensitivity_scan(&config, 3.5, 0.0, &Twist::zero(), range, 1).is_err());
    }

    #[test]
    fn scan_csv_header() {
        let config = SensorConfig::aris_explorer_3000();
        let scan = sensitivity_scan(&config, 3.5, 0.06, &Twist::zero(), (-0.1, 0.1), 3).unwrap();
        let mut buf = Vec::new();
        scan.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("theta_deg,dx_m,dy_m,rho_m,gamma_m"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn degeneracy_examples() {
        let config = SensorConfig::aris_explorer_3000();
        assert!(degeneracy_score(&Twist::translation(0.1, 0.0, 0.0), &config) < 1.0);
        assert!(degeneracy_score(&Twist::rotation(deg(10.0), 0.0, 0.0), &config) > 10.0);
        assert_eq!(degeneracy_score(&Twist::zero(), &config), 0.0);
    }

    fn twist_strategy() -> impl Strategy<Value = Twist> {
        prop::array::uniform6(-0.3f64..0.3).prop_map(Twist::from_components)
    }

    fn pixel_strategy() -> impl Strategy<Value = (PolarCoord, f64)> {
        (0.5f64..10.0, -0.6f64..0.6, -0.13f64..0.13)
            .prop_map(|(r, th, phi)| (PolarCoord::new(r, th, phi), phi))
    }

    proptest! {
        #[test]
        fn exact_field_is_linear_in_twist(a in twist_strategy(), b in twist_strategy(), (c, phi) in pixel_strategy()) {
            let s = pixel_of(c);
            let sum = exact_field(s, phi, &(a + b)).unwrap();
            let parts = exact_field(s, phi, &a).unwrap() + exact_field(s, phi, &b).unwrap();
            prop_assert!((sum - parts).abs().max() <= 1e-12);
        }

        #[test]
        fn basic_forms_superpose_to_approx_field(xi in twist_strategy(), (c, phi) in pixel_strategy()) {
            let s = pixel_of(c);
            let [tx, ty, tz, wx, wy, wz] = xi.components();
            let sum = basic_horizontal(s, tx, ty, wz)
                + basic_roll(s, phi, wx)
                + basic_pitch(s, phi, wy)
                + basic_ztrans(s, phi, tz);
            let a = approx_field(s, phi, &xi).unwrap();
            prop_assert!((sum - a).abs().max() <= 1e-12);
        }

        #[test]
        fn horizontal_motion_ignores_elevation((c, phi) in pixel_strategy(), tx in -0.2f64..0.2, ty in -0.2f64..0.2, wz in -0.2f64..0.2) {
            let s = pixel_of(c);
            let xi = Twist::new(Vec3::new(tx, ty, 0.0), Vec3::new(0.0, 0.0, wz));
            prop_assert_eq!(approx_field(s, phi, &xi).unwrap(), approx_field(s, -phi, &xi).unwrap());
            // The exact field is even in phi for these motions.
            let e = exact_field(s, phi, &xi).unwrap() - exact_field(s, -phi, &xi).unwrap();
            prop_assert!(e.abs().max() <= 1e-15);
        }

        #[test]
        fn exact_field_matches_elevation_rate_route(xi in twist_strategy(), (c, phi) in pixel_strategy()) {
            let s = pixel_of(c);
            let p = backproject(c).coords;
            let dp = point_velocity(&p, &xi);
            let dphi = elevation_rate(c, &dp).unwrap();
            let direct = Displacement::new(dp.x, dp.y) / phi.cos() + s.as_vector() * phi.tan() * dphi;
            let closed = exact_field(s, phi, &xi).unwrap();
            prop_assert!((direct - closed).abs().max() <= 1e-12 * (1.0 + c.r));
        }

        #[test]
        fn exact_field_matches_finite_differences(xi in twist_strategy(), (c, phi) in pixel_strategy()) {
            let fd = finite_difference_field(c, &xi, 1e-6);
            let e = exact_field(pixel_of(c), phi, &xi).unwrap();
            let scale = e.norm().max(1e-6);
            prop_assert!((fd - e).norm() / scale < 1e-4, "fd {:?} exact {:?}", fd, e);
        }
    }
}
