//! Procedural seabed heightfields.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-octave value-noise parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainParams {
    pub seed: u64,
    /// Side length of the square patch, metres. The patch is centred on the origin.
    pub extent: f64,
    /// Grid spacing, metres.
    pub cell: f64,
    /// Peak height deviation, metres.
    pub amplitude: f64,
    /// Wavelength of the first octave, metres.
    pub wavelength: f64,
    pub octaves: u32,
    pub lacunarity: f64,
    pub gain: f64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            seed: 0,
            extent: 16.0,
            cell: 0.04,
            amplitude: 0.3,
            wavelength: 2.5,
            octaves: 5,
            lacunarity: 2.0,
            gain: 0.5,
        }
    }
}

impl TerrainParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Heightfield `z = h(x, y)` sampled on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Terrain {
    /// Heights indexed `[iy, ix]`.
    pub heights: Array2<f64>,
    /// World position of sample `[0, 0]`.
    pub origin: (f64, f64),
    pub cell: f64,
    pub params: TerrainParams,
}

/// Builds the heightfield for `params`. Same parameters, same bits.
pub fn gen_terrain(params: &TerrainParams) -> Result<Terrain> {
    if !(params.extent > 0.0) || !(params.cell > 0.0) {
        return Err(Error::Config("terrain extent and cell must be positive".into()));
    }
    if !(params.wavelength > 0.0) || params.octaves == 0 || !(params.lacunarity > 0.0) {
        return Err(Error::Config("noise needs wavelength > 0, octaves >= 1, lacunarity > 0".into()));
    }
    let n = (params.extent / params.cell).round() as usize + 1;
    if n < 4 {
        return Err(Error::Config("terrain needs at least 4x4 samples".into()));
    }
    let half = 0.5 * params.cell * (n - 1) as f64;
    let origin = (-half, -half);

    let mut norm = 0.0;
    let mut a = 1.0;
    for _ in 0..params.octaves {
        norm += a;
        a *= params.gain;
    }

    let heights = Array2::from_shape_fn((n, n), |(iy, ix)| {
        if params.amplitude == 0.0 {
            return 0.0;
        }
        let x = origin.0 + ix as f64 * params.cell;
        let y = origin.1 + iy as f64 * params.cell;
        let mut freq = 1.0 / params.wavelength;
        let mut amp = 1.0;
        let mut sum = 0.0;
        for octave in 0..params.octaves {
            sum += amp * value_noise(x * freq, y * freq, params.seed, octave);
            freq *= params.lacunarity;
            amp *= params.gain;
        }
        params.amplitude * sum / norm
    });

    Ok(Terrain {
        heights,
        origin,
        cell: params.cell,
        params: *params,
    })
}

fn hash(ix: i64, iy: i64, seed: u64, octave: u32) -> u64 {
    // splitmix64 over the packed lattice key.
    let mut z = seed
        ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ u64::from(octave).wrapping_mul(0x1656_67B1_9E37_79F9);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(ix: i64, iy: i64, seed: u64, octave: u32) -> f64 {
    let h = hash(ix, iy, seed, octave) >> 11;
    (h as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Smoothly interpolated lattice noise in `[-1, 1]`.
fn value_noise(x: f64, y: f64, seed: u64, octave: u32) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (fade(x - x0), fade(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice(ix, iy, seed, octave);
    let v10 = lattice(ix + 1, iy, seed, octave);
    let v01 = lattice(ix, iy + 1, seed, octave);
    let v11 = lattice(ix + 1, iy + 1, seed, octave);
    let a = v00 + (v10 - v00) * fx;
    let b = v01 + (v11 - v01) * fx;
    a + (b - a) * fy
}

/// Catmull-Rom weights and their derivatives at fractional offset `t`.
fn catmull_rom(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ];
    let dw = [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ];
    (w, dw)
}

impl Terrain {
    /// World-space bounds `(min, max)` of the patch along x and y.
    pub fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let (ny, nx) = self.heights.dim();
        (
            (self.origin.0, self.origin.0 + (nx - 1) as f64 * self.cell),
            (self.origin.1, self.origin.1 + (ny - 1) as f64 * self.cell),
        )
    }

    /// Height and gradient `(h, dh/dx, dh/dy)` by bicubic interpolation, or
    /// `None` off the patch.
    pub fn sample(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        let (ny, nx) = self.heights.dim();
        let gx = (x - self.origin.0) / self.cell;
        let gy = (y - self.origin.1) / self.cell;
        if !(gx >= 0.0 && gy >= 0.0 && gx <= (nx - 1) as f64 && gy <= (ny - 1) as f64) {
            return None;
        }
        let ix = (gx.floor() as usize).min(nx - 2);
        let iy = (gy.floor() as usize).min(ny - 2);
        let (wx, dwx) = catmull_rom(gx - ix as f64);
        let (wy, dwy) = catmull_rom(gy - iy as f64);
        let mut h = 0.0;
        let mut hx = 0.0;
        let mut hy = 0.0;
        for (j, (wyj, dwyj)) in wy.iter().zip(dwy.iter()).enumerate() {
            let yy = (iy + j).saturating_sub(1).min(ny - 1);
            let mut row = 0.0;
            let mut drow = 0.0;
            for (i, (wxi, dwxi)) in wx.iter().zip(dwx.iter()).enumerate() {
                let xx = (ix + i).saturating_sub(1).min(nx - 1);
                let v = self.heights[(yy, xx)];
                row += wxi * v;
                drow += dwxi * v;
            }
            h += wyj * row;
            hx += wyj * drow;
            hy += dwyj * row;
        }
        Some((h, hx / self.cell, hy / self.cell))
    }

    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        self.sample(x, y).map(|s| s.0)
    }
}
