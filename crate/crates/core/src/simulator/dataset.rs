//! Triplet datasets for the six basic sensor motions.
//!
//! Each triplet is a target frame flanked by a past and a future source
//! frame. The sensor moves by a single-component twist between consecutive
//! frames; the magnitude of each step is drawn uniformly from the tag's range.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{render, RenderOptions, Rendered};
use super::terrain::{Terrain, TerrainParams};
use crate::error::{Error, Result};
use crate::geometry::{exp_twist, RigidMotion, SensorConfig, Twist, Vec3};
use crate::io;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// The six single-component sensor motions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionTag {
    Tx,
    Ty,
    Tz,
    Wx,
    Wy,
    Wz,
}

impl MotionTag {
    pub const ALL: [MotionTag; 6] = [
        MotionTag::Tx,
        MotionTag::Ty,
        MotionTag::Tz,
        MotionTag::Wx,
        MotionTag::Wy,
        MotionTag::Wz,
    ];

    /// Index of the driven component in `Twist::components` order.
    pub fn component(self) -> usize {
        self as usize
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, MotionTag::Wx | MotionTag::Wy | MotionTag::Wz)
    }

    /// Motions that change what the sensor sees as elevation changes.
    pub fn is_effective(self) -> bool {
        matches!(self, MotionTag::Tz | MotionTag::Wx)
    }

    /// Default per-step magnitude range, metres or radians.
    pub fn default_range(self) -> MotionRange {
        match self {
            MotionTag::Tx | MotionTag::Ty | MotionTag::Tz => MotionRange { lo: 0.08, hi: 0.12 },
            MotionTag::Wx | MotionTag::Wz => MotionRange {
                lo: 5f64.to_radians(),
                hi: 10f64.to_radians(),
            },
            MotionTag::Wy => MotionRange {
                lo: 2f64.to_radians(),
                hi: 4f64.to_radians(),
            },
        }
    }

    /// Twist with `magnitude` on this tag's component and zeros elsewhere.
    pub fn twist(self, magnitude: f64) -> Twist {
        let mut c = [0.0; 6];
        c[self.component()] = magnitude;
        Twist::from_components(c)
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionTag::Tx => "tx",
            MotionTag::Ty => "ty",
            MotionTag::Tz => "tz",
            MotionTag::Wx => "wx",
            MotionTag::Wy => "wy",
            MotionTag::Wz => "wz",
        }
    }
}

impl fmt::Display for MotionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| *c != '_')
            .collect::<String>()
            .to_ascii_lowercase()
            .replace("omega", "w");
        MotionTag::ALL
            .into_iter()
            .find(|t| t.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown motion tag {s:?}; expected one of tx ty tz wx wy wz")))
    }
}

/// Closed magnitude interval, metres or radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionRange {
    pub lo: f64,
    pub hi: f64,
}

impl MotionRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo < 0.0 || self.lo > self.hi {
            return Err(Error::Config(format!(
                "motion range [{}, {}] is empty or invalid",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

/// How target poses are drawn over a terrain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Height above the terrain under the sensor, metres.
    pub altitude: (f64, f64),
    /// Downward pitch of the acoustic axis, degrees.
    pub tilt_deg: (f64, f64),
    /// Half-width of the square around the terrain centre where the sensor may sit, metres.
    pub spread: f64,
    /// Accepted fraction of valid pixels in the target frame.
    pub coverage: (f64, f64),
    pub max_attempts: usize,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            altitude: (0.9, 1.1),
            tilt_deg: (17.0, 21.0),
            spread: 2.0,
            coverage: (0.6, 0.9),
            max_attempts: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub tag: MotionTag,
    pub n_triplets: usize,
    pub range: MotionRange,
    pub seed: u64,
    pub split: Split,
    pub config: SensorConfig,
    pub render: RenderOptions,
    pub placement: Placement,
}

impl DatasetSpec {
    /// Spec with the tag's default range and the simulation sensor profile.
    pub fn new(tag: MotionTag, n_triplets: usize, seed: u64) -> Self {
        Self {
            tag,
            n_triplets,
            range: tag.default_range(),
            seed,
            split: Split::Train,
            config: SensorConfig::simulation(),
            render: RenderOptions::default(),
            placement: Placement::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.range.validate()?;
        self.config.validate()?;
        let p = &self.placement;
        if p.altitude.0 > p.altitude.1 || p.tilt_deg.0 > p.tilt_deg.1 || p.coverage.0 > p.coverage.1 {
            return Err(Error::Config("placement intervals must have lo <= hi".into()));
        }
        if p.max_attempts == 0 || !(p.spread >= 0.0) {
            return Err(Error::Config("placement needs max_attempts >= 1 and spread >= 0".into()));
        }
        Ok(())
    }
}

/// One source frame and how it relates to the target.
#[derive(Clone, Debug)]
pub struct SourceSample {
    pub frame: Rendered,
    /// Sensor step between the two frames, in temporal order.
    pub twist: Twist,
    /// Maps target-frame points into this source's frame.
    pub motion: RigidMotion,
}

/// A rendered triplet held in memory.
#[derive(Clone, Debug)]
pub struct TripletSample {
    pub target: Rendered,
    /// Past source first, then future.
    pub sources: [SourceSample; 2],
    pub coverage: f64,
}

fn triplet_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Renders triplet `index` of `spec` over `terrain`. Deterministic in
/// `(spec.seed, index)`.
pub fn generate_triplet(terrain: &Terrain, spec: &DatasetSpec, index: usize) -> Result<TripletSample> {
    spec.validate()?;
    let mut rng = triplet_rng(spec.seed, index);
    let place = &spec.placement;
    let n_pixels = (spec.config.n_range * spec.config.n_azimuth) as f64;
    let ((x_lo, x_hi), (y_lo, y_hi)) = terrain.bounds();
    let (cx, cy) = (0.5 * (x_lo + x_hi), 0.5 * (y_lo + y_hi));
    let band_distance = |c: f64| (place.coverage.0 - c).max(c - place.coverage.1).max(0.0);

    let mut best: Option<(RigidMotion, Rendered, f64)> = None;
    for _ in 0..place.max_attempts {
        let x = cx + uniform(&mut rng, (-place.spread, place.spread));
        let y = cy + uniform(&mut rng, (-place.spread, place.spread));
        let heading = uniform(&mut rng, (-std::f64::consts::PI, std::f64::consts::PI));
        let altitude = uniform(&mut rng, place.altitude);
        let tilt = uniform(&mut rng, place.tilt_deg).to_radians();
        let Some(ground) = terrain.height_at(x, y) else {
            continue;
        };
        let rotation = Rotation3::from_axis_angle(&Vector3::z_axis(), heading)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), tilt);
        let pose = RigidMotion::new(rotation, Vec3::new(x, y, ground + altitude));
        let frame = render(terrain, &pose, &spec.config, &spec.render)?;
        let coverage = frame.elevation.valid_count() as f64 / n_pixels;
        let better = best
            .as_ref()
            .is_none_or(|(_, _, c)| band_distance(coverage) < band_distance(*c));
        if better {
            best = Some((pose, frame, coverage));
        }
        if band_distance(coverage) == 0.0 {
            break;
        }
    }
    let (pose, target, coverage) =
        best.ok_or_else(|| Error::Config("no sensor placement lands over the terrain".into()))?;

    // Same sign for both steps so the three frames follow one motion sequence.
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let past_step = spec.tag.twist(sign * uniform(&mut rng, (spec.range.lo, spec.range.hi)));
    let future_step = spec.tag.twist(sign * uniform(&mut rng, (spec.range.lo, spec.range.hi)));

    // A sensor step by xi moves world points by exp(xi) in the sensor frame,
    // so the sensor pose advances by its inverse.
    let past_pose = pose.compose(&exp_twist(&past_step));
    let future_pose = pose.compose(&exp_twist(&future_step).inverse());

    let source = |src_pose: RigidMotion, twist: Twist| -> Result<SourceSample> {
        Ok(SourceSample {
            frame: render(terrain, &src_pose, &spec.config, &spec.render)?,
            twist,
            motion: src_pose.inverse().compose(&pose),
        })
    };
    Ok(TripletSample {
        sources: [source(past_pose, past_step)?, source(future_pose, future_step)?],
        target,
        coverage,
    })
}

/// File set of one rendered frame, paths relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: String,
    pub image: PathBuf,
    pub elevation: PathBuf,
    pub cloud: PathBuf,
    /// World <- sensor.
    pub pose: RigidMotion,
    pub valid_pixels: usize,
    pub multi_hit_pixels: usize,
}

impl FrameRecord {
    pub fn files(&self) -> [&Path; 3] {
        [&self.image, &self.elevation, &self.cloud]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceRole {
    Past,
    Future,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub role: SourceRole,
    pub frame: FrameRecord,
    pub twist: Twist,
    /// Target frame -> source frame.
    pub motion: RigidMotion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    /// Index into `DatasetManifest::terrains`.
    pub terrain: usize,
    pub target: FrameRecord,
    pub sources: Vec<SourceRecord>,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub tag: MotionTag,
    pub split: Split,
    pub seed: u64,
    pub range: MotionRange,
    pub config: SensorConfig,
    pub render: RenderOptions,
    pub terrains: Vec<TerrainParams>,
    pub triplets: Vec<TripletRecord>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: DatasetManifest = io::read_json(path)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::format(path, format!("unsupported manifest version {}", manifest.version)));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    /// Checks that every referenced file exists under `root` and that every
    /// twist drives only the tag's component within the recorded range.
    pub fn validate(&self, root: &Path) -> Result<()> {
        self.range.validate()?;
        let k = self.tag.component();
        for t in &self.triplets {
            let frames = std::iter::once(&t.target).chain(t.sources.iter().map(|s| &s.frame));
            for f in frames {
                for file in f.files() {
                    let full = root.join(file);
                    if !full.is_file() {
                        return Err(Error::format(&full, format!("referenced by triplet {} but missing", t.id)));
                    }
                }
            }
            for s in &t.sources {
                let c = s.twist.components();
                let stray = c.iter().enumerate().any(|(i, v)| i != k && *v != 0.0);
                // The recorded twist may have passed through a decimal round trip.
                let tol = 1e-12 * self.range.hi.max(1.0);
                let magnitude = c[k].abs();
                if stray || magnitude < self.range.lo - tol || magnitude > self.range.hi + tol {
                    return Err(Error::Config(format!(
                        "triplet {}: twist {:?} is not a {} step within [{}, {}]",
                        t.id, c, self.tag, self.range.lo, self.range.hi
                    )));
                }
            }
        }
        Ok(())
    }
}

fn write_frame(root: &Path, id: &str, frame: &Rendered) -> Result<FrameRecord> {
    let rel = |ext: &str| PathBuf::from("frames").join(format!("{id}.{ext}"));
    let record = FrameRecord {
        id: id.to_string(),
        image: rel("img"),
        elevation: rel("elev"),
        cloud: rel("ply"),
        pose: frame.image.pose,
        valid_pixels: frame.elevation.valid_count(),
        multi_hit_pixels: frame.multi_hit_pixels,
    };
    io::write_polar_image(&root.join(&record.image), &frame.image)?;
    io::write_elevation_map(&root.join(&record.elevation), &frame.elevation, &frame.image.pose)?;
    io::write_ply(&root.join(&record.cloud), &frame.cloud)?;
    Ok(record)
}

/// Renders `spec.n_triplets` triplets, cycling through `terrains`, writes
/// them under `out_dir` and saves the manifest there.
pub fn gen_dataset(terrains: &[Terrain], spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    if spec.n_triplets > 0 && terrains.is_empty() {
        return Err(Error::Config("at least one terrain is required".into()));
    }
    let mut triplets = Vec::with_capacity(spec.n_triplets);
    for index in 0..spec.n_triplets {
        let terrain_idx = index % terrains.len();
        let sample = generate_triplet(&terrains[terrain_idx], spec, index)?;
        let id = format!("{}_{index:04}", spec.tag);
        let target = write_frame(out_dir, &format!("{id}_target"), &sample.target)?;
        let roles = [(SourceRole::Past, "past"), (SourceRole::Future, "future")];
        let sources = sample
            .sources
            .iter()
            .zip(roles)
            .map(|(s, (role, name))| {
                Ok(SourceRecord {
                    role,
                    frame: write_frame(out_dir, &format!("{id}_{name}"), &s.frame)?,
                    twist: s.twist,
                    motion: s.motion,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        triplets.push(TripletRecord {
            id,
            terrain: terrain_idx,
            target,
            sources,
            coverage: sample.coverage,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        tag: spec.tag,
        split: spec.split,
        seed: spec.seed,
        range: spec.range,
        config: spec.config,
        render: spec.render,
        terrains: terrains.iter().map(|t| t.params).collect(),
        triplets,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
