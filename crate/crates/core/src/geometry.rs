//! Sensor frame conventions, the sonar projection model and rigid-motion algebra.
//!
//! The sensor frame has `x` along the acoustic axis, `y` to starboard and `z`
//! up. Azimuth `theta` is measured in the `z = 0` plane from `+x` toward `+y`
//! and elevation `phi` from that plane toward `+z`:
//!
//! ```text
//! p = (r cos(phi) cos(theta), r cos(phi) sin(theta), r sin(phi))
//! s = (r cos(theta), r sin(theta))          // the pixel drops phi
//! ```
//!
//! The frame is left-handed, so vector algebra is written in coordinates: a
//! [`Twist`] `(t, omega)` moves a stationary scene point as
//! `dp/dt = omega x p - t`, where `x` is the coordinate cross product. This
//! is the rigid-body relation with the physical (right-hand rule) cross
//! product evaluated in a left-handed frame, and it is the sign convention
//! under which the closed-form motion fields in [`crate::motion_field`] hold.
//!
//! All angles are radians. Degrees only appear in files and on the command line.

use std::ops::{Add, Mul, Neg};

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Polar imaging grid and physical resolution of a forward-looking sonar.
///
/// Rows index range bins from `r_min` to `r_max`, columns index azimuth beams
/// from `-azimuth_fov / 2` to `+azimuth_fov / 2`. Pixel values are sampled at
/// bin centres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "SensorConfigFile", try_from = "SensorConfigFile")]
pub struct SensorConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub n_range: usize,
    pub n_azimuth: usize,
    pub azimuth_fov: f64,
    pub elevation_aperture: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self::aris_explorer_3000()
    }
}

impl SensorConfig {
    /// ARIS Explorer 3000-like profile: 14 degree elevation aperture,
    /// 3 mm range bins over 1..5 m, 128 beams over 30 degrees.
    pub fn aris_explorer_3000() -> Self {
        Self {
            r_min: 1.0,
            r_max: 5.0,
            n_range: 1333,
            n_azimuth: 128,
            azimuth_fov: 30f64.to_radians(),
            elevation_aperture: 14f64.to_radians(),
        }
    }

    /// Coarse grid used for the simulated datasets, sized so that per-triplet
    /// optimization stays in the seconds range on one core.
    pub fn simulation() -> Self {
        Self {
            r_min: 2.0,
            r_max: 5.0,
            n_range: 160,
            n_azimuth: 64,
            azimuth_fov: 30f64.to_radians(),
            elevation_aperture: 14f64.to_radians(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.r_min,
            self.r_max,
            self.azimuth_fov,
            self.elevation_aperture,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("non-finite sensor parameter".into()));
        }
        if self.r_min <= 0.0 || self.r_max <= self.r_min {
            return Err(Error::Config(format!(
                "need 0 < r_min < r_max, got r_min={} r_max={}",
                self.r_min, self.r_max
            )));
        }
        if self.n_range < 2 || self.n_azimuth < 2 {
            return Err(Error::Config(format!(
                "need at least 2x2 bins, got {}x{}",
                self.n_range, self.n_azimuth
            )));
        }
        if self.azimuth_fov <= 0.0 || self.azimuth_fov >= std::f64::consts::PI {
            return Err(Error::Config("azimuth_fov must lie in (0, 180) deg".into()));
        }
        if self.elevation_aperture <= 0.0 || self.elevation_aperture >= std::f64::consts::PI {
            return Err(Error::Config(
                "elevation_aperture must lie in (0, 180) deg".into(),
            ));
        }
        Ok(())
    }

    /// Range resolution `rho`, metres per range bin.
    pub fn range_resolution(&self) -> f64 {
        (self.r_max - self.r_min) / self.n_range as f64
    }

    /// Angular width of one azimuth beam.
    pub fn azimuth_step(&self) -> f64 {
        self.azimuth_fov / self.n_azimuth as f64
    }

    /// Tangential resolution `gamma(r)`: arc length of one beam at range `r`.
    pub fn tangential_resolution(&self, r: f64) -> f64 {
        r * self.azimuth_step()
    }

    pub fn half_aperture(&self) -> f64 {
        0.5 * self.elevation_aperture
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_range, self.n_azimuth)
    }

    pub fn range_of_row(&self, row: usize) -> f64 {
        self.r_min + (row as f64 + 0.5) * self.range_resolution()
    }

    pub fn theta_of_col(&self, col: usize) -> f64 {
        -0.5 * self.azimuth_fov + (col as f64 + 0.5) * self.azimuth_step()
    }

    /// Continuous row coordinate of range `r`; bin centres fall on integers.
    pub fn row_coord(&self, r: f64) -> f64 {
        (r - self.r_min) / self.range_resolution() - 0.5
    }

    /// Continuous column coordinate of azimuth `theta`.
    pub fn col_coord(&self, theta: f64) -> f64 {
        (theta + 0.5 * self.azimuth_fov) / self.azimuth_step() - 0.5
    }

    /// The `(row, col)` bin containing `(r, theta)`, if it lies on the grid.
    pub fn bin_of(&self, r: f64, theta: f64) -> Option<(usize, usize)> {
        let row = ((r - self.r_min) / self.range_resolution()).floor();
        let col = ((theta + 0.5 * self.azimuth_fov) / self.azimuth_step()).floor();
        if row < 0.0 || col < 0.0 || row >= self.n_range as f64 || col >= self.n_azimuth as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// Polar coordinate of the centre of bin `(row, col)` at elevation `phi`.
    pub fn polar_of(&self, row: usize, col: usize, phi: f64) -> PolarCoord {
        PolarCoord::new(self.range_of_row(row), self.theta_of_col(col), phi)
    }
}

/// On-disk form of [`SensorConfig`]; angles in degrees.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct SensorConfigFile {
    r_min: f64,
    r_max: f64,
    n_range: usize,
    n_azimuth: usize,
    azimuth_fov: f64,
    elevation_aperture: f64,
}

impl From<SensorConfig> for SensorConfigFile {
    fn from(c: SensorConfig) -> Self {
        Self {
            r_min: c.r_min,
            r_max: c.r_max,
            n_range: c.n_range,
            n_azimuth: c.n_azimuth,
            azimuth_fov: c.azimuth_fov.to_degrees(),
            elevation_aperture: c.elevation_aperture.to_degrees(),
        }
    }
}

impl TryFrom<SensorConfigFile> for SensorConfig {
    type Error = Error;

    fn try_from(f: SensorConfigFile) -> Result<Self> {
        let c = SensorConfig {
            r_min: f.r_min,
            r_max: f.r_max,
            n_range: f.n_range,
            n_azimuth: f.n_azimuth,
            azimuth_fov: f.azimuth_fov.to_radians(),
            elevation_aperture: f.elevation_aperture.to_radians(),
        };
        c.validate()?;
        Ok(c)
    }
}

/// Spherical sonar coordinates: slant range, azimuth, elevation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarCoord {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl PolarCoord {
    pub const fn new(r: f64, theta: f64, phi: f64) -> Self {
        Self { r, theta, phi }
    }
}

/// Cartesian image-plane position of a pixel, metres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Slant range of the pixel.
    pub fn range(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn theta(&self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// 3D point for a polar coordinate.
pub fn backproject(c: PolarCoord) -> Point3 {
    let (sp, cp) = c.phi.sin_cos();
    let (st, ct) = c.theta.sin_cos();
    Point3::new(c.r * cp * ct, c.r * cp * st, c.r * sp)
}

/// Inverse of [`backproject`]. Angles outside the aperture (including the
/// poles) are returned as-is; clipping is the caller's business.
pub fn project(p: &Point3) -> Result<PolarCoord> {
    let r = p.coords.norm();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("cannot project point with norm {r}")));
    }
    let theta = p.y.atan2(p.x);
    let phi = (p.z / r).clamp(-1.0, 1.0).asin();
    Ok(PolarCoord::new(r, theta, phi))
}

/// Image position of a polar coordinate. Elevation does not enter.
pub fn pixel_of(c: PolarCoord) -> PixelCoord {
    let (st, ct) = c.theta.sin_cos();
    PixelCoord::new(c.r * ct, c.r * st)
}

/// Small sensor motion over unit time, expressed in the sensor frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    /// Translation `(t_x, t_y, t_z)`, metres.
    pub t: Vec3,
    /// Rotation `(omega_x, omega_y, omega_z)`, radians.
    pub omega: Vec3,
}

impl Twist {
    pub fn new(t: Vec3, omega: Vec3) -> Self {
        Self { t, omega }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn translation(tx: f64, ty: f64, tz: f64) -> Self {
        Self::new(Vec3::new(tx, ty, tz), Vec3::zeros())
    }

    pub fn rotation(wx: f64, wy: f64, wz: f64) -> Self {
        Self::new(Vec3::zeros(), Vec3::new(wx, wy, wz))
    }

    pub fn is_finite(&self) -> bool {
        self.t.iter().chain(self.omega.iter()).all(|v| v.is_finite())
    }

    /// Components in `(t_x, t_y, t_z, omega_x, omega_y, omega_z)` order.
    pub fn components(&self) -> [f64; 6] {
        [
            self.t.x,
            self.t.y,
            self.t.z,
            self.omega.x,
            self.omega.y,
            self.omega.z,
        ]
    }

    pub fn from_components(c: [f64; 6]) -> Self {
        Self::new(Vec3::new(c[0], c[1], c[2]), Vec3::new(c[3], c[4], c[5]))
    }
}

impl Add for Twist {
    type Output = Twist;

    fn add(self, rhs: Twist) -> Twist {
        Twist::new(self.t + rhs.t, self.omega + rhs.omega)
    }
}

impl Mul<f64> for Twist {
    type Output = Twist;

    fn mul(self, k: f64) -> Twist {
        Twist::new(self.t * k, self.omega * k)
    }
}

impl Neg for Twist {
    type Output = Twist;

    fn neg(self) -> Twist {
        self * -1.0
    }
}

/// Finite rigid transform `p -> R p + t`.
///
/// Used as `M_{t->s}`, mapping target-frame points into a source frame, and
/// as frame poses (world <- sensor).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
}

impl Default for RigidMotion {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidMotion {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a motion from a raw matrix, checking orthonormality and
    /// determinant to 1e-9.
    pub fn from_matrix(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-9) || !((det - 1.0).abs() <= 1e-9) {
            return Err(Error::Domain(format!(
                "rotation is not proper orthonormal (|R^T R - I|={ortho:e}, det={det})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("non-finite translation".into()));
        }
        Ok(Self::new(
            Rotation3::from_matrix_unchecked(rotation),
            translation,
        ))
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &RigidMotion) -> RigidMotion {
        RigidMotion::new(
            self.rotation * first.rotation,
            self.rotation * first.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidMotion {
        let r_inv = self.rotation.inverse();
        RigidMotion::new(r_inv, -(r_inv * self.translation))
    }

    pub fn is_identity(&self) -> bool {
        self.translation == Vec3::zeros() && self.rotation.matrix() == &Matrix3::identity()
    }
}

/// `R p + t`.
pub fn transform(m: &RigidMotion, p: &Point3) -> Point3 {
    m.apply(p)
}

/// Point map produced by holding twist `xi` for unit time.
///
/// Integrates `dp/dt = omega x p - t` exactly: the rotation is the Rodrigues
/// exponential of `omega` and the translation is `-V(omega) t` with `V` the
/// left Jacobian of SO(3). Coordinates of a stationary point in the frame
/// before the motion map to its coordinates in the frame after it, so
/// `exp_twist(xi)` is `M_{t->s}` when the source follows the target by `xi`.
pub fn exp_twist(xi: &Twist) -> RigidMotion {
    let w = xi.omega;
    let angle = w.norm();
    let k = w.cross_matrix();
    let (a, b) = if angle < 1e-6 {
        // Taylor series of (1 - cos x) / x^2 and (x - sin x) / x^3.
        let a2 = angle * angle;
        (0.5 - a2 / 24.0, 1.0 / 6.0 - a2 / 120.0)
    } else {
        let a2 = angle * angle;
        ((1.0 - angle.cos()) / a2, (angle - angle.sin()) / (a2 * angle))
    };
    let v = Matrix3::identity() + k * a + k * k * b;
    RigidMotion::new(Rotation3::new(w), -(v * xi.t))
}

impl Serialize for RigidMotion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let m = self.rotation.matrix();
        let rows: [[f64; 3]; 3] = [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ];
        RigidMotionFile {
            rotation: rows,
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidMotion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = RigidMotionFile::deserialize(d)?;
        let r = f.rotation;
        let m = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        RigidMotion::from_matrix(m, Vec3::from(f.translation)).map_err(serde::de::Error::custom)
    }
}

/// Row-major rotation and translation, as written to JSON.
#[derive(Serialize, Deserialize)]
struct RigidMotionFile {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn deg(v: f64) -> f64 {
        v.to_radians()
    }

    #[test]
    fn backproject_examples() {
        let p = backproject(PolarCoord::new(2.0, 0.0, 0.0));
        assert_eq!(p, Point3::new(2.0, 0.0, 0.0));

        let p = backproject(PolarCoord::new(2.0, FRAC_PI_2, 0.0));
        assert_relative_eq!(p.coords, Vec3::new(0.0, 2.0, 0.0), epsilon = 1e-15);

        let p = backproject(PolarCoord::new(3.5, deg(10.0), deg(3.5)));
        assert_relative_eq!(p.x, 3.440398, epsilon = 1e-6);
        assert_relative_eq!(p.y, 0.606635, epsilon = 1e-6);
        assert_relative_eq!(p.z, 0.213670, epsilon = 1e-6);
    }

    #[test]
    fn project_examples() {
        let c = project(&Point3::new(2.0, 0.0, 0.0)).unwrap();
        assert_eq!((c.r, c.theta, c.phi), (2.0, 0.0, 0.0));

        let c = project(&Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((c.r, c.theta), (1.0, 0.0));
        assert_relative_eq!(c.phi, FRAC_PI_2);

        let c = project(&Point3::new(3.4406, 0.6067, 0.2137)).unwrap();
        assert_relative_eq!(c.r, 3.5, epsilon = 1e-3);
        assert_relative_eq!(c.theta, deg(10.0), epsilon = 1e-3);
        assert_relative_eq!(c.phi, deg(3.5), epsilon = 1e-3);

        assert!(matches!(
            project(&Point3::origin()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn pixel_examples() {
        for phi in [-0.1, 0.0, 0.05] {
            let s = pixel_of(PolarCoord::new(2.0, 0.0, phi));
            assert_eq!((s.x, s.y), (2.0, 0.0));
        }
        let s = pixel_of(PolarCoord::new(3.5, deg(30.0), 0.0));
        assert_relative_eq!(s.x, 3.0311, epsilon = 1e-4);
        assert_relative_eq!(s.y, 1.75, epsilon = 1e-12);
    }

    #[test]
    fn exp_twist_examples() {
        assert!(exp_twist(&Twist::zero()).is_identity());

        let m = exp_twist(&Twist::translation(0.1, 0.0, 0.0));
        assert_eq!(m.rotation, Rotation3::identity());
        let q = m.apply(&Point3::new(2.0, 0.5, -0.3));
        assert_relative_eq!(q.coords, Vec3::new(1.9, 0.5, -0.3), epsilon = 1e-15);

        let m = exp_twist(&Twist::rotation(FRAC_PI_2, 0.0, 0.0));
        let oracle = UnitQuaternion::from_axis_angle(&Vec3::x_axis(), FRAC_PI_2);
        let r = m.rotation.matrix();
        assert_relative_eq!(*r, oracle.to_rotation_matrix().into_inner(), epsilon = 1e-12);
        assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(m.translation.norm(), 0.0);
    }

    #[test]
    fn transform_examples() {
        let p = Point3::new(0.3, -1.2, 4.0);
        assert_eq!(transform(&RigidMotion::identity(), &p), p);

        let m = RigidMotion::new(Rotation3::identity(), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(transform(&m, &Point3::origin()), Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn rejects_improper_rotation() {
        let flip = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(RigidMotion::from_matrix(flip, Vec3::zeros()).is_err());
    }

    #[test]
    fn sensor_config_json_uses_degrees() {
        let c = SensorConfig::aris_explorer_3000();
        let json = serde_json::to_value(c).unwrap();
        assert_relative_eq!(json["elevation_aperture"].as_f64().unwrap(), 14.0, epsilon = 1e-12);
        assert_relative_eq!(json["azimuth_fov"].as_f64().unwrap(), 30.0, epsilon = 1e-12);
        let back: SensorConfig = serde_json::from_value(json).unwrap();
        assert_relative_eq!(back.elevation_aperture, c.elevation_aperture, epsilon = 1e-15);

        let bad = serde_json::json!({
            "r_min": 2.0, "r_max": 1.0, "n_range": 10, "n_azimuth": 10,
            "azimuth_fov": 30.0, "elevation_aperture": 14.0
        });
        assert!(serde_json::from_value::<SensorConfig>(bad).is_err());
    }

    #[test]
    fn aris_profile_resolutions() {
        let c = SensorConfig::aris_explorer_3000();
        assert_relative_eq!(c.range_resolution(), 0.003, epsilon = 1e-6);
        assert_relative_eq!(c.half_aperture(), deg(7.0));
        assert_relative_eq!(c.tangential_resolution(3.5), 0.014317, epsilon = 1e-6);
    }

    #[test]
    fn grid_coordinates_round_trip() {
        let c = SensorConfig::simulation();
        for row in [0, 7, c.n_range - 1] {
            assert_relative_eq!(c.row_coord(c.range_of_row(row)), row as f64, epsilon = 1e-9);
        }
        for col in [0, 31, c.n_azimuth - 1] {
            assert_relative_eq!(c.col_coord(c.theta_of_col(col)), col as f64, epsilon = 1e-9);
            assert_eq!(c.bin_of(c.range_of_row(3), c.theta_of_col(col)), Some((3, col)));
        }
        assert_eq!(c.bin_of(c.r_max + 0.01, 0.0), None);
    }

    fn polar_strategy() -> impl Strategy<Value = PolarCoord> {
        (0.1f64..50.0, -1.5f64..1.5, -0.7f64..0.7).prop_map(|(r, t, p)| PolarCoord::new(r, t, p))
    }

    fn twist_strategy() -> impl Strategy<Value = Twist> {
        prop::array::uniform6(-0.5f64..0.5).prop_map(Twist::from_components)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn project_inverts_backproject(c in polar_strategy()) {
            let back = project(&backproject(c)).unwrap();
            prop_assert!(((back.r - c.r) / c.r).abs() < 1e-12);
            prop_assert!((back.theta - c.theta).abs() < 1e-12);
            prop_assert!((back.phi - c.phi).abs() < 1e-12);
        }

        #[test]
        fn pixel_is_backprojection_over_cos_phi(c in polar_strategy()) {
            let s = pixel_of(c);
            let p = backproject(c);
            let cp = c.phi.cos();
            prop_assert!((s.x * cp - p.x).abs() <= 1e-12 * c.r);
            prop_assert!((s.y * cp - p.y).abs() <= 1e-12 * c.r);
        }
    }

    proptest! {
        #[test]
        fn exp_twist_velocity_matches_rigid_body_model(
            xi in twist_strategy(),
            c in polar_strategy(),
        ) {
            let p = backproject(c);
            let dt = 1e-6;
            let moved = exp_twist(&(xi * dt)).apply(&p);
            let fd = (moved - p) / dt;
            let model = xi.omega.cross(&p.coords) - xi.t;
            let scale = model.norm().max(xi.t.norm()).max(1e-3);
            prop_assert!((fd - model).norm() / scale < 1e-4);
        }

        #[test]
        fn motions_compose_and_invert(a in twist_strategy(), b in twist_strategy(), c in polar_strategy()) {
            let (m1, m2) = (exp_twist(&a), exp_twist(&b));
            let p = backproject(c);
            let seq = m2.apply(&m1.apply(&p));
            let composed = m2.compose(&m1).apply(&p);
            prop_assert!((seq - composed).norm() < 1e-12 * (1.0 + c.r));
            let id = m1.inverse().compose(&m1);
            prop_assert!((id.rotation.matrix() - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!(id.translation.norm() < 1e-9);
        }
    }
}
