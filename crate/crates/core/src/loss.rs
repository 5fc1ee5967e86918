//! Photometric self-supervision objective and its gradient.
//!
//! The reconstruction term mixes windowed SSIM and L1 between the target
//! image and its synthesized counterpart. The smoothness term penalizes
//! elevation differences between neighbouring pixels, down-weighted across
//! image edges. Both come with analytic gradients with respect to the
//! synthesized intensities and the elevation map respectively.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Half-width of the square SSIM window (7x7).
pub const SSIM_RADIUS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Share of SSIM in the reconstruction term; L1 gets the rest.
    pub ssim: f64,
    pub recon: f64,
    pub smooth: f64,
    /// Skip smoothness terms that straddle the mask boundary.
    pub exclude_mask_boundary: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ssim: 0.3,
            recon: 2.0,
            smooth: 1.0,
            exclude_mask_boundary: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ssim) {
            return Err(Error::Config(format!("ssim share {} outside [0, 1]", self.ssim)));
        }
        if !(self.recon >= 0.0 && self.smooth >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub recon: f64,
    pub smooth: f64,
    pub total: f64,
    /// d total / d phi per pixel, radians^-1.
    pub grad: Array2<f64>,
    pub weights: LossWeights,
}

fn check_dims(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Mismatch(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

fn masked_count(mask: &Array2<bool>) -> Result<usize> {
    match mask.iter().filter(|v| **v).count() {
        0 => Err(Error::EmptyMask("loss")),
        n => Ok(n),
    }
}

/// Sum over the clipped `(2r+1)^2` window centred on every pixel.
pub fn box_sum(x: &Array2<f64>, radius: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    // Summed-area table with a zero border row and column.
    let mut sat = Array2::<f64>::zeros((h + 1, w + 1));
    for i in 0..h {
        let mut row = 0.0;
        for j in 0..w {
            row += x[(i, j)];
            sat[(i + 1, j + 1)] = sat[(i, j + 1)] + row;
        }
    }
    Array2::from_shape_fn((h, w), |(i, j)| {
        let (i0, i1) = (i.saturating_sub(radius), (i + radius + 1).min(h));
        let (j0, j1) = (j.saturating_sub(radius), (j + radius + 1).min(w));
        sat[(i1, j1)] - sat[(i0, j1)] - sat[(i1, j0)] + sat[(i0, j0)]
    })
}

/// Per-window statistics shared by the SSIM value and its gradient.
struct SsimStats {
    count: Array2<f64>,
    mu_a: Array2<f64>,
    mu_b: Array2<f64>,
    var_a: Array2<f64>,
    var_b: Array2<f64>,
    cov: Array2<f64>,
}

impl SsimStats {
    fn new(a: &Array2<f64>, b: &Array2<f64>) -> Self {
        let r = SSIM_RADIUS;
        let count = box_sum(&Array2::ones(a.dim()), r);
        let mean = |x: &Array2<f64>| box_sum(x, r) / &count;
        let mu_a = mean(a);
        let mu_b = mean(b);
        let var_a = mean(&(a * a)) - &mu_a * &mu_a;
        let var_b = mean(&(b * b)) - &mu_b * &mu_b;
        let cov = mean(&(a * b)) - &mu_a * &mu_b;
        Self {
            count,
            mu_a,
            mu_b,
            var_a,
            var_b,
            cov,
        }
    }

    fn ssim_at(&self, i: usize, j: usize) -> f64 {
        let (ma, mb) = (self.mu_a[(i, j)], self.mu_b[(i, j)]);
        let n1 = 2.0 * ma * mb + SSIM_C1;
        let n2 = 2.0 * self.cov[(i, j)] + SSIM_C2;
        let d1 = ma * ma + mb * mb + SSIM_C1;
        let d2 = self.var_a[(i, j)] + self.var_b[(i, j)] + SSIM_C2;
        n1 * n2 / (d1 * d2)
    }
}

#[derive(Clone, Debug)]
pub struct SsimMap {
    pub map: Array2<f64>,
    /// Mean of `map` over the masked pixels.
    pub mean: f64,
}

/// Windowed SSIM of `a` against `b` (7x7 uniform window, clipped at the
/// borders) and its mean over `mask`.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>, mask: &Array2<bool>) -> Result<SsimMap> {
    check_dims(a.dim(), b.dim(), "ssim images")?;
    check_dims(a.dim(), mask.dim(), "ssim mask")?;
    let n = masked_count(mask)?;
    let stats = SsimStats::new(a, b);
    let map = Array2::from_shape_fn(a.dim(), |(i, j)| stats.ssim_at(i, j));
    let mean = Zip::from(&map).and(mask).fold(0.0, |acc, s, m| if *m { acc + s } else { acc }) / n as f64;
    Ok(SsimMap { map, mean })
}

/// `ssim * mean(1 - SSIM) + (1 - ssim) * mean |target - synth|`, both means
/// over `mask`.
pub fn recon_loss(target: &Array2<f64>, synth: &Array2<f64>, mask: &Array2<bool>, ssim_share: f64) -> Result<f64> {
    Ok(recon_with_grad(target, synth, mask, ssim_share, false)?.0)
}

/// Reconstruction loss and, when asked, its gradient with respect to `synth`.
fn recon_with_grad(
    target: &Array2<f64>,
    synth: &Array2<f64>,
    mask: &Array2<bool>,
    ssim_share: f64,
    want_grad: bool,
) -> Result<(f64, Array2<f64>)> {
    check_dims(target.dim(), synth.dim(), "reconstruction images")?;
    check_dims(target.dim(), mask.dim(), "reconstruction mask")?;
    if !(0.0..=1.0).contains(&ssim_share) {
        return Err(Error::Config(format!("ssim share {ssim_share} outside [0, 1]")));
    }
    let n = masked_count(mask)? as f64;
    let stats = SsimStats::new(target, synth);
    let dim = target.dim();

    let mut dssim = 0.0;
    let mut l1 = 0.0;
    for ((i, j), m) in mask.indexed_iter() {
        if *m {
            dssim += 1.0 - stats.ssim_at(i, j);
            l1 += (target[(i, j)] - synth[(i, j)]).abs();
        }
    }
    let loss = ssim_share * dssim / n + (1.0 - ssim_share) * l1 / n;
    if !want_grad {
        return Ok((loss, Array2::zeros((0, 0))));
    }

    // d(1 - S_p)/d synth_q, collected through the windows containing q:
    // grad_q = box(alpha) + synth_q * box(beta) + target_q * box(gamma).
    let mut alpha = Array2::zeros(dim);
    let mut beta = Array2::zeros(dim);
    let mut gamma = Array2::zeros(dim);
    for ((i, j), m) in mask.indexed_iter() {
        if !*m {
            continue;
        }
        let (ma, mb) = (stats.mu_a[(i, j)], stats.mu_b[(i, j)]);
        let n1 = 2.0 * ma * mb + SSIM_C1;
        let n2 = 2.0 * stats.cov[(i, j)] + SSIM_C2;
        let d1 = ma * ma + mb * mb + SSIM_C1;
        let d2 = stats.var_a[(i, j)] + stats.var_b[(i, j)] + SSIM_C2;
        let s = n1 * n2 / (d1 * d2);
        let ds_dmu = 2.0 * ma * n2 / (d1 * d2) - s * 2.0 * mb / d1;
        let ds_dvar = -s / d2;
        let ds_dcov = 2.0 * n1 / (d1 * d2);
        let w = -ssim_share / (n * stats.count[(i, j)]);
        alpha[(i, j)] = w * (ds_dmu - 2.0 * mb * ds_dvar - ma * ds_dcov);
        beta[(i, j)] = w * 2.0 * ds_dvar;
        gamma[(i, j)] = w * ds_dcov;
    }
    let (ba, bb, bg) = (
        box_sum(&alpha, SSIM_RADIUS),
        box_sum(&beta, SSIM_RADIUS),
        box_sum(&gamma, SSIM_RADIUS),
    );
    let l1_scale = (1.0 - ssim_share) / n;
    let grad = Array2::from_shape_fn(dim, |q| {
        let mut g = ba[q] + synth[q] * bb[q] + target[q] * bg[q];
        if mask[q] {
            // d|t - s|/ds = -sign(t - s).
            let d = target[q] - synth[q];
            if d != 0.0 {
                g -= l1_scale * d.signum();
            }
        }
        g
    });
    Ok((loss, grad))
}

/// One forward-difference pair `(p, p + step)` of the smoothness term.
fn smooth_pairs(
    dim: (usize, usize),
    mask: &Array2<bool>,
    exclude_boundary: bool,
    axis: usize,
) -> impl Iterator<Item = ((usize, usize), (usize, usize))> + '_ {
    let (h, w) = dim;
    (0..h).flat_map(move |i| (0..w).map(move |j| (i, j))).filter_map(move |p| {
        let q = if axis == 0 { (p.0 + 1, p.1) } else { (p.0, p.1 + 1) };
        if q.0 >= h || q.1 >= w {
            return None;
        }
        let keep = if exclude_boundary {
            mask[p] && mask[q]
        } else {
            mask[p] || mask[q]
        };
        keep.then_some((p, q))
    })
}

fn smooth_with_grad(
    phi: &Array2<f64>,
    image: &Array2<f64>,
    mask: &Array2<bool>,
    exclude_boundary: bool,
    want_grad: bool,
) -> Result<(f64, Array2<f64>)> {
    check_dims(phi.dim(), image.dim(), "smoothness image")?;
    check_dims(phi.dim(), mask.dim(), "smoothness mask")?;
    masked_count(mask)?;
    let masked = |p: (usize, usize)| if mask[p] { phi[p] } else { 0.0 };
    let mut grad = Array2::zeros(if want_grad { phi.dim() } else { (0, 0) });
    let mut loss = 0.0;
    for axis in 0..2 {
        let pairs: Vec<_> = smooth_pairs(phi.dim(), mask, exclude_boundary, axis).collect();
        if pairs.is_empty() {
            continue;
        }
        let n = pairs.len() as f64;
        let mut sum = 0.0;
        for (p, q) in pairs {
            let weight = (-(image[q] - image[p]).abs()).exp();
            let d = masked(q) - masked(p);
            sum += weight * d.abs();
            if want_grad && d != 0.0 {
                let g = weight * d.signum() / n;
                if mask[q] {
                    grad[q] += g;
                }
                if mask[p] {
                    grad[p] -= g;
                }
            }
        }
        loss += sum / n;
    }
    Ok((loss, grad))
}

/// Edge-aware smoothness of the masked elevation map: per axis, the mean over
/// neighbouring pairs touching the mask of `|d(mask * phi)| * exp(-|d image|)`,
/// summed over the range and azimuth axes.
pub fn smooth_loss(phi: &Array2<f64>, image: &Array2<f64>, mask: &Array2<bool>, exclude_boundary: bool) -> Result<f64> {
    Ok(smooth_with_grad(phi, image, mask, exclude_boundary, false)?.0)
}

/// Weighted total loss and its gradient with respect to `phi`.
///
/// `jacobian` is d synth / d phi from the warp; pixels outside `mask` must
/// carry the target value in `synth` so that SSIM windows see no seams.
pub fn total_loss(
    target: &Array2<f64>,
    synth: &Array2<f64>,
    jacobian: &Array2<f64>,
    phi: &Array2<f64>,
    mask: &Array2<bool>,
    smooth_mask: &Array2<bool>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    check_dims(target.dim(), jacobian.dim(), "jacobian")?;
    let (recon, d_synth) = recon_with_grad(target, synth, mask, weights.ssim, true)?;
    let (smooth, d_phi) = smooth_with_grad(phi, target, smooth_mask, weights.exclude_mask_boundary, true)?;
    let grad = weights.recon * d_synth * jacobian + weights.smooth * d_phi;
    Ok(LossBreakdown {
        recon,
        smooth,
        total: weights.recon * recon + weights.smooth * smooth,
        grad,
        weights: *weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full(h: usize, w: usize) -> Array2<bool> {
        Array2::from_elem((h, w), true)
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0))
    }

    /// Direct window statistics, the way one would do them by hand.
    fn naive_ssim(a: &Array2<f64>, b: &Array2<f64>, i: usize, j: usize) -> f64 {
        let (h, w) = a.dim();
        let mut xs = Vec::new();
        for ii in i.saturating_sub(3)..(i + 4).min(h) {
            for jj in j.saturating_sub(3)..(j + 4).min(w) {
                xs.push((a[(ii, jj)], b[(ii, jj)]));
            }
        }
        let n = xs.len() as f64;
        let ma = xs.iter().map(|x| x.0).sum::<f64>() / n;
        let mb = xs.iter().map(|x| x.1).sum::<f64>() / n;
        let va = xs.iter().map(|x| (x.0 - ma).powi(2)).sum::<f64>() / n;
        let vb = xs.iter().map(|x| (x.1 - mb).powi(2)).sum::<f64>() / n;
        let cv = xs.iter().map(|x| (x.0 - ma) * (x.1 - mb)).sum::<f64>() / n;
        (2.0 * ma * mb + SSIM_C1) * (2.0 * cv + SSIM_C2) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 12, 9);
        let s = ssim(&a, &a, &full(12, 9)).unwrap();
        assert!(s.map.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert_relative_eq!(s.mean, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ssim_matches_direct_window_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 11, 13);
        let b = random_image(&mut rng, 11, 13);
        let s = ssim(&a, &b, &full(11, 13)).unwrap();
        for ((i, j), v) in s.map.indexed_iter() {
            assert_relative_eq!(*v, naive_ssim(&a, &b, i, j), epsilon = 1e-12);
        }
    }

    #[test]
    fn inverted_checkerboard() {
        let a = Array2::from_shape_fn((14, 14), |(i, j)| ((i + j) % 2) as f64);
        let b = a.mapv(|v| 1.0 - v);
        let s = ssim(&a, &b, &full(14, 14)).unwrap();
        for i in 3..11 {
            for j in 3..11 {
                // 49 samples: 25 of one value, 24 of the other.
                let ones = if (i + j) % 2 == 0 { 24.0 } else { 25.0 };
                let ma = ones / 49.0;
                let mb = 1.0 - ma;
                let var = ma * (1.0 - ma);
                let expected = (2.0 * ma * mb + SSIM_C1) * (-2.0 * var + SSIM_C2)
                    / ((ma * ma + mb * mb + SSIM_C1) * (2.0 * var + SSIM_C2));
                assert_relative_eq!(s.map[(i, j)], expected, epsilon = 1e-12);
                assert!(s.map[(i, j)] < -0.99);
            }
        }
    }

    #[test]
    fn constant_offset_closed_form() {
        let a = Array2::from_elem((10, 10), 0.4);
        let b = Array2::from_elem((10, 10), 0.5);
        let expected = (2.0 * 0.4 * 0.5 + SSIM_C1) / (0.4f64 * 0.4 + 0.5 * 0.5 + SSIM_C1);
        let s = ssim(&a, &b, &full(10, 10)).unwrap();
        assert!(s.map.iter().all(|v| (v - expected).abs() < 1e-12));

        let recon = recon_loss(&a, &b, &full(10, 10), 0.3).unwrap();
        assert_relative_eq!(recon, 0.3 * (1.0 - expected) + 0.7 * 0.1, epsilon = 1e-12);
    }

    #[test]
    fn recon_endpoints_and_empty_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 9, 9);
        let b = random_image(&mut rng, 9, 9);
        let m = full(9, 9);
        assert_eq!(recon_loss(&a, &a, &m, 0.3).unwrap(), 0.0);
        let s = ssim(&a, &b, &m).unwrap().mean;
        assert_relative_eq!(recon_loss(&a, &b, &m, 1.0).unwrap(), 1.0 - s, epsilon = 1e-12);
        let l1 = (&a - &b).mapv(f64::abs).mean().unwrap();
        assert_relative_eq!(recon_loss(&a, &b, &m, 0.0).unwrap(), l1, epsilon = 1e-12);
        let empty = Array2::from_elem((9, 9), false);
        assert!(matches!(recon_loss(&a, &b, &empty, 0.3), Err(Error::EmptyMask(_))));
        assert!(matches!(smooth_loss(&a, &b, &empty, false), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn smoothness_of_ramps_and_constants() {
        let img = Array2::from_elem((8, 6), 0.3);
        let m = full(8, 6);
        let flat = Array2::from_elem((8, 6), 0.05);
        assert_eq!(smooth_loss(&flat, &img, &m, false).unwrap(), 0.0);
        let ramp = Array2::from_shape_fn((8, 6), |(i, _)| 0.01 * i as f64);
        assert_relative_eq!(smooth_loss(&ramp, &img, &m, false).unwrap(), 0.01, epsilon = 1e-15);
        let both = Array2::from_shape_fn((8, 6), |(i, j)| 0.01 * i as f64 - 0.02 * j as f64);
        assert_relative_eq!(smooth_loss(&both, &img, &m, false).unwrap(), 0.03, epsilon = 1e-15);
    }

    #[test]
    fn smoothness_is_down_weighted_at_image_edges() {
        let m = full(8, 6);
        let ramp = Array2::from_shape_fn((8, 6), |(i, _)| 0.01 * i as f64);
        let plain = Array2::from_elem((8, 6), 0.3);
        let striped = Array2::from_shape_fn((8, 6), |(i, _)| if i % 2 == 0 { 0.0 } else { 1.0 });
        assert!(smooth_loss(&ramp, &striped, &m, false).unwrap() < smooth_loss(&ramp, &plain, &m, false).unwrap());
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (random_image(&mut rng, 9, 9), random_image(&mut rng, 9, 9));
        let phi = random_image(&mut rng, 9, 9) * 0.1;
        let m = full(9, 9);
        let out = total_loss(&a, &b, &Array2::zeros((9, 9)), &phi, &m, &m, &LossWeights::default()).unwrap();
        assert_relative_eq!(out.total, 2.0 * out.recon + out.smooth, epsilon = 1e-12);
    }

    #[test]
    fn fixed_point_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_image(&mut rng, 12, 12);
        let jac = random_image(&mut rng, 12, 12);
        let phi = Array2::from_elem((12, 12), 0.02);
        let m = full(12, 12);
        let out = total_loss(&a, &a, &jac, &phi, &m, &m, &LossWeights::default()).unwrap();
        assert!(out.grad.iter().all(|g| g.abs() < 1e-12), "{:?}", out.grad);
    }

    fn numeric_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, q: (usize, usize), h: f64) -> f64 {
        let mut p = x.clone();
        p[q] += h;
        let mut m = x.clone();
        m[q] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    }

    #[test]
    fn recon_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_image(&mut rng, 13, 11);
        let b = random_image(&mut rng, 13, 11);
        let mask = Array2::from_shape_fn((13, 11), |(i, j)| (i * 7 + j * 3) % 5 != 0);
        let (_, grad) = recon_with_grad(&a, &b, &mask, 0.3, true).unwrap();
        for q in [(0, 0), (6, 5), (12, 10), (3, 9), (9, 1)] {
            let fd = numeric_grad(|s| recon_loss(&a, s, &mask, 0.3).unwrap(), &b, q, 1e-6);
            assert_relative_eq!(grad[q], fd, epsilon = 1e-8, max_relative = 1e-5);
        }
    }

    #[test]
    fn smooth_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let phi = random_image(&mut rng, 9, 10) * 0.2;
        let img = random_image(&mut rng, 9, 10);
        let mask = Array2::from_shape_fn((9, 10), |(i, j)| (i + 2 * j) % 7 != 0);
        for exclude in [false, true] {
            let (_, grad) = smooth_with_grad(&phi, &img, &mask, exclude, true).unwrap();
            for q in [(0, 0), (4, 4), (8, 9), (2, 7)] {
                let fd = numeric_grad(|p| smooth_loss(p, &img, &mask, exclude).unwrap(), &phi, q, 1e-7);
                assert_relative_eq!(grad[q], fd, epsilon = 1e-7);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ssim_is_symmetric_and_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_image(&mut rng, 10, 8);
            let b = random_image(&mut rng, 10, 8);
            let m = full(10, 8);
            let ab = ssim(&a, &b, &m).unwrap();
            let ba = ssim(&b, &a, &m).unwrap();
            for (x, y) in ab.map.iter().zip(ba.map.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
                prop_assert!(*x >= -1.0 - 1e-12 && *x <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn recon_is_non_negative_and_l1_obeys_triangle(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (random_image(&mut rng, 8, 8), random_image(&mut rng, 8, 8), random_image(&mut rng, 8, 8));
            let m = full(8, 8);
            prop_assert!(recon_loss(&a, &b, &m, 0.3).unwrap() >= 0.0);
            let l1 = |x: &Array2<f64>, y: &Array2<f64>| recon_loss(x, y, &m, 0.0).unwrap();
            prop_assert!(l1(&a, &c) <= l1(&a, &b) + l1(&b, &c) + 1e-12);
        }

        #[test]
        fn smoothness_ignores_constant_offsets(seed in any::<u64>(), offset in -0.1f64..0.1) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = random_image(&mut rng, 7, 9) * 0.1;
            let img = random_image(&mut rng, 7, 9);
            let m = full(7, 9);
            let shifted = &phi + offset;
            let a = smooth_loss(&phi, &img, &m, false).unwrap();
            let b = smooth_loss(&shifted, &img, &m, false).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
