//! Signal masks by intensity thresholding.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub threshold: f64,
    /// 4-connected components with fewer pixels are dropped.
    pub min_component: usize,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            min_component: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignalMask {
    pub valid: Array2<bool>,
    pub params: MaskParams,
}

impl SignalMask {
    pub fn count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Marks pixels brighter than `threshold`, then removes specks smaller than
/// `min_component` pixels.
pub fn binarize(image: &Array2<f64>, params: MaskParams) -> Result<SignalMask> {
    if !(0.0..=1.0).contains(&params.threshold) {
        return Err(Error::Config(format!("mask threshold {} outside [0, 1]", params.threshold)));
    }
    let mut valid = image.mapv(|v| v > params.threshold);
    if params.min_component > 1 {
        remove_small_components(&mut valid, params.min_component);
    }
    Ok(SignalMask { valid, params })
}

fn remove_small_components(valid: &mut Array2<bool>, min_size: usize) {
    let (h, w) = valid.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..h * w {
        let start = (start / w, start % w);
        if !valid[start] || seen[start] {
            continue;
        }
        component.clear();
        stack.push(start);
        seen[start] = true;
        while let Some((i, j)) = stack.pop() {
            component.push((i, j));
            let neighbours = [
                (i.wrapping_sub(1), j),
                (i + 1, j),
                (i, j.wrapping_sub(1)),
                (i, j + 1),
            ];
            for n in neighbours {
                if n.0 < h && n.1 < w && valid[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        if component.len() < min_size {
            for p in &component {
                valid[*p] = false;
            }
        }
    }
}
