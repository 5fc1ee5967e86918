use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args};

use fls_core::geometry::{SensorConfig, Twist};
use fls_core::motion_field::{degeneracy_score, sensitivity_scan, SensitivityScan};
use fls_core::simulator::MotionTag;

use crate::args::{parse_scan, parse_sensor, parse_tag, parse_twist, ScanArg, SensorArg};

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("motion_source").required(true).args(["twist", "motion", "fig3"])))]
pub struct AnalyzeArgs {
    /// `aris`, `sim` or a JSON sensor file.
    #[arg(long, value_parser = parse_sensor, default_value = "aris")]
    config: SensorArg,
    /// Slant range of the scanned point, metres.
    #[arg(long, default_value_t = 3.5)]
    r: f64,
    /// Elevation of the scanned point, degrees.
    #[arg(long, default_value_t = 3.5, allow_hyphen_values = true)]
    phi: f64,
    /// Twist `tx,ty,tz,wx,wy,wz` (metres, degrees).
    #[arg(long, value_parser = parse_twist, allow_hyphen_values = true, conflicts_with_all = ["motion", "fig3"])]
    twist: Option<Twist>,
    /// Basic motion to scan, with `--magnitude`.
    #[arg(long, value_parser = parse_tag, requires = "magnitude", conflicts_with = "fig3")]
    motion: Option<MotionTag>,
    /// Step of `--motion`, metres or degrees.
    #[arg(long, allow_hyphen_values = true)]
    magnitude: Option<f64>,
    /// Azimuth sweep `start:end:samples`, degrees.
    #[arg(long, value_parser = parse_scan, default_value = "-15:15:301", allow_hyphen_values = true)]
    scan_theta: ScanArg,
    /// CSV output for a single scan.
    #[arg(long, conflicts_with = "fig3")]
    out: Option<PathBuf>,
    /// Write the roll, pitch and heave scans into this directory.
    #[arg(long)]
    fig3: Option<PathBuf>,
}

/// Roll, pitch and heave steps of the reference sensitivity figure.
pub const FIG3_CASES: [(&str, MotionTag, f64); 3] = [
    ("roll", MotionTag::Wx, 10.0),
    ("pitch", MotionTag::Wy, 10.0),
    ("heave", MotionTag::Tz, 0.1745),
];

fn tag_twist(tag: MotionTag, magnitude: f64) -> Twist {
    tag.twist(if tag.is_rotation() { magnitude.to_radians() } else { magnitude })
}

fn scan(config: &SensorConfig, a: &AnalyzeArgs, xi: &Twist) -> anyhow::Result<SensitivityScan> {
    let s = a.scan_theta;
    Ok(sensitivity_scan(
        config,
        a.r,
        a.phi.to_radians(),
        xi,
        (s.start_deg.to_radians(), s.end_deg.to_radians()),
        s.samples,
    )?)
}

fn write_scan(path: &Path, scan: &SensitivityScan) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    scan.write_csv(&mut buf)?;
    fls_core::io::write_atomic(path, &buf)?;
    Ok(())
}

fn report(label: &str, scan: &SensitivityScan, score: f64) {
    let verdict = if scan.is_resolvable() { "resolvable" } else { "sub-resolution" };
    println!(
        "{label}: peak |dx| {:.6} m, peak |dy| {:.6} m (rho {:.6} m, gamma {:.6} m, {verdict}); grid degeneracy score {:.4}",
        scan.peak_abs_dx(),
        scan.peak_abs_dy(),
        scan.rho,
        scan.gamma,
        score
    );
}

pub fn run(a: AnalyzeArgs) -> anyhow::Result<()> {
    let config = a.config.load()?;
    if !(a.r > 0.0) {
        anyhow::bail!("--r must be positive");
    }
    if let Some(dir) = &a.fig3 {
        for (name, tag, magnitude) in FIG3_CASES {
            let xi = tag_twist(tag, magnitude);
            let s = scan(&config, &a, &xi)?;
            write_scan(&dir.join(format!("{name}.csv")), &s)?;
            report(name, &s, degeneracy_score(&xi, &config));
        }
        return Ok(());
    }
    let xi = match (a.twist, a.motion, a.magnitude) {
        (Some(xi), _, _) => xi,
        (None, Some(tag), Some(m)) => tag_twist(tag, m),
        _ => anyhow::bail!("give --twist, --motion with --magnitude, or --fig3"),
    };
    let s = scan(&config, &a, &xi)?;
    if let Some(out) = &a.out {
        write_scan(out, &s)?;
    }
    report("scan", &s, degeneracy_score(&xi, &config));
    Ok(())
}
