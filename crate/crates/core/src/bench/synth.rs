use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::BenchError;
use crate::imaging::io::{save_image, save_mask};
use crate::imaging::{BinaryMask, Image, Rect};
use crate::mutants::rng::{stream_rng, Stream};

const BACKGROUND_MAX: f64 = 0.3;
const BLOB_MIN: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive range of blob side lengths; height and width are drawn
    /// independently.
    pub blob_min: usize,
    pub blob_max: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            count: 50,
            height: 64,
            width: 64,
            blob_min: 8,
            blob_max: 16,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.blob_min == 0 || self.blob_min > self.blob_max {
            return Err(BenchError::InvalidParams(format!(
                "blob side range {}..={} is empty",
                self.blob_min, self.blob_max
            )));
        }
        if self.blob_max > self.height.min(self.width) {
            return Err(BenchError::InvalidParams(format!(
                "blob side {} does not fit a {}x{} image",
                self.blob_max, self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Image and blob mask for item `index`.
pub(crate) fn synth_item(params: &SynthParams, index: usize) -> (Image, BinaryMask) {
    let mut rng = stream_rng(params.seed, Stream::Synth, index as u64);
    let bh = rng.random_range(params.blob_min..=params.blob_max);
    let bw = rng.random_range(params.blob_min..=params.blob_max);
    let r0 = rng.random_range(0..=params.height - bh);
    let c0 = rng.random_range(0..=params.width - bw);
    let rect = Rect::new(r0, c0, r0 + bh, c0 + bw);
    let mut data = Vec::with_capacity(params.height * params.width);
    for r in 0..params.height {
        for c in 0..params.width {
            data.push(if rect.contains(r, c) {
                rng.random_range(BLOB_MIN..=1.0)
            } else {
                rng.random_range(0.0..=BACKGROUND_MAX)
            });
        }
    }
    let image = Image::new(params.height, params.width, 1, data).expect("values in [0, 1]");
    (image, BinaryMask::from_rect(params.height, params.width, rect))
}

/// Writes `count` grayscale images, each with one bright axis-aligned blob
/// on uniform noise, plus the blob masks and `manifest.csv` (all rows
/// labelled positive). Returns the manifest path.
pub fn synth_dataset(params: &SynthParams, out_dir: &Path) -> Result<PathBuf, BenchError> {
    params.validate()?;
    let write_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| BenchError::Write { path, source }
    };
    fs::create_dir_all(out_dir).map_err(write_err(out_dir))?;
    let mut csv = String::from("image,mask,label\n");
    for i in 0..params.count {
        let (image, mask) = synth_item(params, i);
        let image_name = format!("img_{i:04}.png");
        let mask_name = format!("mask_{i:04}.png");
        save_image(&image, &out_dir.join(&image_name))?;
        save_mask(&mask, &out_dir.join(&mask_name))?;
        csv.push_str(&format!("{image_name},{mask_name},{}\n", super::DEFAULT_POSITIVE));
    }
    let manifest = out_dir.join("manifest.csv");
    fs::write(&manifest, csv).map_err(write_err(&manifest))?;
    Ok(manifest)
}
