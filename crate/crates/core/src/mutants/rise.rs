use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{stream_rng, Stream};
use super::MutantError;
use crate::imaging::SaliencyMap;

/// Parameters of the RISE random-mask generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiseMaskParams {
    /// Cells per side of the coarse Bernoulli grid.
    pub grid: usize,
    /// Probability that a grid cell is kept.
    pub keep_prob: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for RiseMaskParams {
    fn default() -> Self {
        Self {
            grid: 8,
            keep_prob: 0.1,
            count: 2000,
            seed: 0,
        }
    }
}

impl RiseMaskParams {
    pub fn validate(&self) -> Result<(), MutantError> {
        if self.grid == 0 {
            return Err(MutantError::InvalidParams("grid must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.keep_prob) {
            return Err(MutantError::InvalidParams(format!(
                "keep probability {} outside [0, 1]",
                self.keep_prob
            )));
        }
        if self.count == 0 {
            return Err(MutantError::InvalidParams("mask count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Random-access RISE masks: mask `i` depends only on `(seed, i)`.
#[derive(Debug, Clone)]
pub struct RiseMaskGenerator {
    params: RiseMaskParams,
    height: usize,
    width: usize,
    cell_h: usize,
    cell_w: usize,
    // Bilinear source coordinates for every row/col of the upsampled grid.
    row_taps: Vec<(usize, usize, f64)>,
    col_taps: Vec<(usize, usize, f64)>,
}

fn taps(out_len: usize, grid: usize) -> Vec<(usize, usize, f64)> {
    let scale = grid as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (grid - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(grid - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

impl RiseMaskGenerator {
    pub fn new(params: RiseMaskParams, shape: (usize, usize)) -> Result<Self, MutantError> {
        params.validate()?;
        let (height, width) = shape;
        if height == 0 || width == 0 {
            return Err(MutantError::InvalidParams("image must be non-empty".into()));
        }
        let cell_h = height.div_ceil(params.grid);
        let cell_w = width.div_ceil(params.grid);
        Ok(Self {
            params,
            height,
            width,
            cell_h,
            cell_w,
            row_taps: taps(height + cell_h, params.grid),
            col_taps: taps(width + cell_w, params.grid),
        })
    }

    pub fn len(&self) -> usize {
        self.params.count
    }

    pub fn is_empty(&self) -> bool {
        self.params.count == 0
    }

    pub fn params(&self) -> &RiseMaskParams {
        &self.params
    }

    /// Row-major mask values in `[0, 1]` for mask `index`.
    pub fn mask(&self, index: usize) -> Vec<f64> {
        let s = self.params.grid;
        let mut rng = stream_rng(self.params.seed, Stream::RiseMasks, index as u64);
        let grid: Vec<f64> = (0..s * s)
            .map(|_| {
                if rng.random::<f64>() < self.params.keep_prob {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let off_r = rng.random_range(0..self.cell_h);
        let off_c = rng.random_range(0..self.cell_w);

        let mut out = Vec::with_capacity(self.height * self.width);
        for r in 0..self.height {
            let (r0, r1, fr) = self.row_taps[r + off_r];
            for c in 0..self.width {
                let (c0, c1, fc) = self.col_taps[c + off_c];
                let top = grid[r0 * s + c0] * (1.0 - fc) + grid[r0 * s + c1] * fc;
                let bottom = grid[r1 * s + c0] * (1.0 - fc) + grid[r1 * s + c1] * fc;
                out.push((top * (1.0 - fr) + bottom * fr).clamp(0.0, 1.0));
            }
        }
        out
    }
}

/// All `params.count` masks for an image of `shape`.
pub fn rise_masks(
    params: RiseMaskParams,
    shape: (usize, usize),
) -> Result<Vec<SaliencyMap>, MutantError> {
    let generator = RiseMaskGenerator::new(params, shape)?;
    Ok((0..generator.len())
        .map(|i| {
            SaliencyMap::new(shape.0, shape.1, generator.mask(i))
                .expect("interpolated masks are finite")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(keep_prob: f64, count: usize) -> RiseMaskParams {
        RiseMaskParams {
            grid: 8,
            keep_prob,
            count,
            seed: 0,
        }
    }

    #[test]
    fn extreme_probabilities_give_constant_masks() {
        for m in rise_masks(params(1.0, 5), (20, 13)).unwrap() {
            assert!(m.values().iter().all(|&v| v == 1.0));
        }
        for m in rise_masks(params(0.0, 5), (20, 13)).unwrap() {
            assert!(m.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mean_matches_keep_probability() {
        let masks = rise_masks(params(0.1, 2000), (64, 64)).unwrap();
        assert_eq!(masks.len(), 2000);
        let total: f64 = masks.iter().flat_map(|m| m.values()).sum();
        let mean = total / (2000.0 * 64.0 * 64.0);
        assert!((mean - 0.1).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn masks_are_replayable_and_soft() {
        let a = rise_masks(params(0.5, 4), (17, 23)).unwrap();
        let b = rise_masks(params(0.5, 4), (17, 23)).unwrap();
        assert_eq!(a, b);
        let values: Vec<f64> = a.iter().flat_map(|m| m.values().to_vec()).collect();
        assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(values.iter().any(|&v| v > 0.0 && v < 1.0), "bilinear upsampling should blur edges");
    }

    #[test]
    fn random_access_matches_sequence() {
        let gen = RiseMaskGenerator::new(params(0.3, 10), (16, 16)).unwrap();
        let all = rise_masks(params(0.3, 10), (16, 16)).unwrap();
        assert_eq!(gen.mask(7), all[7].values());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(rise_masks(RiseMaskParams { grid: 0, ..params(0.1, 1) }, (8, 8)).is_err());
        assert!(rise_masks(params(1.5, 1), (8, 8)).is_err());
        assert!(rise_masks(params(0.1, 0), (8, 8)).is_err());
    }
}
