//! Argument value parsers shared by the subcommands. Angles arrive in
//! degrees and leave in radians.

use std::path::PathBuf;

use fls_core::geometry::{SensorConfig, Twist, Vec3};
use fls_core::simulator::{MotionRange, MotionTag};

/// `aris`, `sim`, or a path to a JSON sensor description.
#[derive(Clone, Debug, PartialEq)]
pub enum SensorArg {
    Aris,
    Simulation,
    File(PathBuf),
}

impl SensorArg {
    pub fn load(&self) -> anyhow::Result<SensorConfig> {
        Ok(match self {
            SensorArg::Aris => SensorConfig::aris_explorer_3000(),
            SensorArg::Simulation => SensorConfig::simulation(),
            SensorArg::File(path) => fls_core::io::read_json(path)?,
        })
    }
}

pub fn parse_sensor(s: &str) -> Result<SensorArg, String> {
    match s {
        "aris" => Ok(SensorArg::Aris),
        "sim" => Ok(SensorArg::Simulation),
        _ => {
            let path = PathBuf::from(s);
            if path.is_file() {
                Ok(SensorArg::File(path))
            } else {
                Err(format!("expected `aris`, `sim` or an existing JSON file, got {s:?}"))
            }
        }
    }
}

pub fn parse_tag(s: &str) -> Result<MotionTag, String> {
    s.parse().map_err(|e: fls_core::Error| e.to_string())
}

fn parse_f64(s: &str, what: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("{what}: {s:?} is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{what}: {s:?} is not finite"))
    }
}

/// `lo:hi` magnitude bounds, in the motion's display unit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeArg {
    pub lo: f64,
    pub hi: f64,
}

impl RangeArg {
    /// Converts to metres or radians for `tag`.
    pub fn to_range(self, tag: MotionTag) -> MotionRange {
        let k = if tag.is_rotation() { 1f64.to_radians() } else { 1.0 };
        MotionRange {
            lo: self.lo * k,
            hi: self.hi * k,
        }
    }
}

pub fn parse_range(s: &str) -> Result<RangeArg, String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let r = RangeArg {
        lo: parse_f64(lo, "range")?,
        hi: parse_f64(hi, "range")?,
    };
    if r.lo < 0.0 || r.lo > r.hi {
        return Err(format!("range {s:?} needs 0 <= lo <= hi"));
    }
    Ok(r)
}

/// Azimuth sweep `start:end:samples`, degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanArg {
    pub start_deg: f64,
    pub end_deg: f64,
    pub samples: usize,
}

pub fn parse_scan(s: &str) -> Result<ScanArg, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts[..] else {
        return Err(format!("expected start:end:samples, got {s:?}"));
    };
    let samples: usize = n.trim().parse().map_err(|_| format!("sample count {n:?} is not an integer"))?;
    if samples < 2 {
        return Err("a scan needs at least 2 samples".into());
    }
    Ok(ScanArg {
        start_deg: parse_f64(a, "scan start")?,
        end_deg: parse_f64(b, "scan end")?,
        samples,
    })
}

/// `tx,ty,tz,wx,wy,wz`: translations in metres, rotations in degrees.
pub fn parse_twist(s: &str) -> Result<Twist, String> {
    let v: Vec<f64> = s.split(',').map(|c| parse_f64(c, "twist")).collect::<Result<_, _>>()?;
    let [tx, ty, tz, wx, wy, wz] = v[..] else {
        return Err(format!("a twist has 6 components, got {}", v.len()));
    };
    Ok(Twist::new(
        Vec3::new(tx, ty, tz),
        Vec3::new(wx.to_radians(), wy.to_radians(), wz.to_radians()),
    ))
}

pub fn parse_threshold(s: &str) -> Result<f64, String> {
    let v = parse_f64(s, "threshold")?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("threshold {s:?} must be positive"))
    }
}
