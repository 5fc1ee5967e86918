use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use rayon::prelude::*;

use fls_core::simulator::{gen_dataset, gen_terrain, DatasetSpec, MotionTag, Split, TerrainParams};

use crate::args::{parse_range, parse_sensor, parse_tag, RangeArg, SensorArg};

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Motion tag: tx, ty, tz, wx, wy or wz.
    #[arg(long, value_parser = parse_tag)]
    motion: MotionTag,
    /// Number of triplets.
    #[arg(long)]
    n: usize,
    /// Output directory; the manifest is written to `<out>/manifest.json`.
    #[arg(long)]
    out: PathBuf,
    /// Seed for poses and motion magnitudes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the first terrain; terrain `i` uses `terrain_seed + i`.
    /// Defaults to `--seed`.
    #[arg(long)]
    terrain_seed: Option<u64>,
    /// Number of terrains the triplets cycle through.
    #[arg(long, default_value_t = 5)]
    terrains: usize,
    /// Step magnitude bounds `lo:hi`, metres or degrees.
    #[arg(long, value_parser = parse_range)]
    range: Option<RangeArg>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// `aris`, `sim` or a JSON sensor file.
    #[arg(long, value_parser = parse_sensor, default_value = "sim")]
    config: SensorArg,
}

pub fn run(a: GenArgs) -> anyhow::Result<()> {
    if a.terrains == 0 {
        anyhow::bail!("--terrains must be at least 1");
    }
    let mut spec = DatasetSpec::new(a.motion, a.n, a.seed);
    spec.split = a.split;
    spec.config = a.config.load()?;
    if let Some(r) = a.range {
        spec.range = r.to_range(a.motion);
    }
    spec.validate()?;

    let first = a.terrain_seed.unwrap_or(a.seed);
    let used = a.terrains.min(a.n.max(1));
    let terrains = (0..used as u64)
        .into_par_iter()
        .map(|i| gen_terrain(&TerrainParams::with_seed(first.wrapping_add(i))))
        .collect::<Result<Vec<_>, _>>()?;

    let manifest = gen_dataset(&terrains, &spec, &a.out)
        .with_context(|| format!("generating dataset in {}", a.out.display()))?;

    let unit = |v: f64| {
        if a.motion.is_rotation() {
            format!("{:.3} deg", v.to_degrees())
        } else {
            format!("{v:.3} m")
        }
    };
    println!("dataset  {}", a.out.display());
    println!("motion   {} in [{}, {}]", manifest.tag, unit(manifest.range.lo), unit(manifest.range.hi));
    println!("split    {:?}, seed {}, terrains {}..{}", manifest.split, manifest.seed, first, first + used as u64 - 1);
    println!("triplets {}", manifest.triplets.len());
    if !manifest.triplets.is_empty() {
        let n = manifest.triplets.len() as f64;
        let coverage = manifest.triplets.iter().map(|t| t.coverage).sum::<f64>() / n;
        let steps = manifest
            .triplets
            .iter()
            .flat_map(|t| t.sources.iter().map(|s| s.twist.components()[a.motion.component()].abs()));
        let (lo, hi) = steps.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        println!("coverage {:.1}% mean", 100.0 * coverage);
        println!("steps    {} .. {}", unit(lo), unit(hi));
    }
    Ok(())
}
