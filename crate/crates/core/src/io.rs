//! On-disk formats.
//!
//! Rasters use a small binary layout:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "FLSRASTR"
//! 8       4     format version, u32 LE (currently 1)
//! 12      4     kind, u32 LE: 0 intensity, 1 elevation + validity, 2 intensity + validity
//! 16      4     H (range bins), u32 LE
//! 20      4     W (azimuth beams), u32 LE
//! 24      ...   planes of H*W f32 LE, row-major; validity planes hold 0.0 / 1.0
//! ```
//!
//! Each raster `x` has a JSON sidecar `x.json` carrying the sensor config and
//! the frame pose. Point clouds are ASCII PLY, metres. Every writer goes
//! through a temporary file and a rename.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidMotion, SensorConfig};
use crate::raster::{ElevationMap, PointCloud, PolarImage};

pub const RASTER_MAGIC: &[u8; 8] = b"FLSRASTR";
pub const RASTER_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum RasterKind {
    Intensity = 0,
    Elevation = 1,
    MaskedIntensity = 2,
}

impl RasterKind {
    fn planes(self) -> usize {
        match self {
            RasterKind::Intensity => 1,
            RasterKind::Elevation | RasterKind::MaskedIntensity => 2,
        }
    }

    fn from_u32(v: u32) -> Option<Self> {
        match v {
            0 => Some(RasterKind::Intensity),
            1 => Some(RasterKind::Elevation),
            2 => Some(RasterKind::MaskedIntensity),
            _ => None,
        }
    }
}

/// Sidecar metadata stored next to every raster.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub config: SensorConfig,
    /// World <- sensor.
    pub pose: RigidMotion,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

fn encode(kind: RasterKind, planes: &[Array2<f64>]) -> Vec<u8> {
    let (h, w) = planes[0].dim();
    let mut out = Vec::with_capacity(HEADER_LEN + planes.len() * h * w * 4);
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for plane in planes {
        for v in plane.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

fn decode(path: &Path, bytes: &[u8]) -> Result<(RasterKind, Vec<Array2<f64>>)> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != RASTER_MAGIC {
        return Err(Error::format(path, "missing raster magic"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(8);
    if version != RASTER_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let kind = RasterKind::from_u32(word(12))
        .ok_or_else(|| Error::format(path, format!("unknown raster kind {}", word(12))))?;
    let (h, w) = (word(16) as usize, word(20) as usize);
    let n = h * w;
    let expected = HEADER_LEN + kind.planes() * n * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes for {h}x{w}, found {}", bytes.len()),
        ));
    }
    let planes = (0..kind.planes())
        .map(|p| {
            let start = HEADER_LEN + p * n * 4;
            let values = bytes[start..start + n * 4]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            Array2::from_shape_vec((h, w), values).expect("length checked above")
        })
        .collect();
    Ok((kind, planes))
}

fn bool_plane(mask: &Array2<bool>) -> Array2<f64> {
    mask.mapv(|v| if v { 1.0 } else { 0.0 })
}

fn read_raster(path: &Path, want: RasterKind) -> Result<(Vec<Array2<f64>>, FrameMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (kind, planes) = decode(path, &bytes)?;
    if kind != want {
        return Err(Error::format(path, format!("expected {want:?} raster, found {kind:?}")));
    }
    let meta: FrameMeta = read_json(&sidecar_path(path))?;
    if planes[0].dim() != meta.config.shape() {
        return Err(Error::format(path, "raster shape disagrees with sidecar config"));
    }
    Ok((planes, meta))
}

pub fn write_polar_image(path: &Path, image: &PolarImage) -> Result<()> {
    write_atomic(path, &encode(RasterKind::Intensity, std::slice::from_ref(&image.data)))?;
    write_json(
        &sidecar_path(path),
        &FrameMeta {
            config: image.config,
            pose: image.pose,
        },
    )
}

pub fn read_polar_image(path: &Path) -> Result<PolarImage> {
    let (mut planes, meta) = read_raster(path, RasterKind::Intensity)?;
    PolarImage::new(planes.remove(0), meta.config, meta.pose)
}

/// Intensity image with a validity plane, the storage form of a signal mask.
pub fn write_masked_image(path: &Path, image: &PolarImage, mask: &Array2<bool>) -> Result<()> {
    if mask.dim() != image.data.dim() {
        return Err(Error::Mismatch("mask and image shapes differ".into()));
    }
    write_atomic(
        path,
        &encode(RasterKind::MaskedIntensity, &[image.data.clone(), bool_plane(mask)]),
    )?;
    write_json(
        &sidecar_path(path),
        &FrameMeta {
            config: image.config,
            pose: image.pose,
        },
    )
}

pub fn read_masked_image(path: &Path) -> Result<(PolarImage, Array2<bool>)> {
    let (planes, meta) = read_raster(path, RasterKind::MaskedIntensity)?;
    let image = PolarImage::new(planes[0].clone(), meta.config, meta.pose)?;
    Ok((image, planes[1].mapv(|v| v != 0.0)))
}

pub fn write_elevation_map(path: &Path, map: &ElevationMap, pose: &RigidMotion) -> Result<()> {
    write_atomic(
        path,
        &encode(RasterKind::Elevation, &[map.phi.clone(), bool_plane(&map.valid)]),
    )?;
    write_json(
        &sidecar_path(path),
        &FrameMeta {
            config: map.config,
            pose: *pose,
        },
    )
}

/// Reads an elevation map and the pose from its sidecar.
pub fn read_elevation_map(path: &Path) -> Result<(ElevationMap, RigidMotion)> {
    let (planes, meta) = read_raster(path, RasterKind::Elevation)?;
    let half = meta.config.half_aperture();
    let valid = planes[1].mapv(|v| v != 0.0);
    // f32 storage can round a value at the aperture edge just past it.
    let phi = planes[0].mapv(|v| v.clamp(-half, half));
    Ok((ElevationMap::new(phi, valid, meta.config)?, meta.pose))
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = Vec::with_capacity(64 + cloud.len() * 40);
    write!(
        out,
        "ply\nformat ascii 1.0\ncomment units: metres\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )
    .expect("writing to a Vec cannot fail");
    for p in &cloud.points {
        writeln!(out, "{} {} {}", p.x, p.y, p.z).expect("writing to a Vec cannot fail");
    }
    write_atomic(path, &out)
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut next = || -> Result<Option<String>> {
        lines.next().transpose().map_err(|e| Error::io(path, e))
    };
    if next()?.as_deref() != Some("ply") {
        return Err(Error::format(path, "not a PLY file"));
    }
    let mut count = None;
    loop {
        let line = next()?.ok_or_else(|| Error::format(path, "truncated header"))?;
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if line.starts_with("format") && line != "format ascii 1.0" {
            return Err(Error::format(path, "only ASCII PLY is supported"));
        }
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(
                n.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::format(path, "bad vertex count"))?,
            );
        }
    }
    let count = count.ok_or_else(|| Error::format(path, "no vertex element"))?;
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let line = next()?.ok_or_else(|| Error::format(path, format!("missing vertex {i}")))?;
        let xyz: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, format!("bad vertex {i}")))?;
        if xyz.len() != 3 || !xyz.iter().all(|v| v.is_finite()) {
            return Err(Error::format(path, format!("bad vertex {i}")));
        }
        points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
    }
    Ok(PointCloud::new(points))
}
