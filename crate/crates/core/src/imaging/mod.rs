//! Image, mask and saliency containers plus the pixel-level primitives every
//! other module builds on: connected components, centroids and occlusion.
//!
//! All grids are stored row-major. Images are channel-last.

mod components;
pub mod io;
mod occlusion;

pub use components::{centroid, connected_components, Connectivity, Region};
pub use occlusion::{apply_occlusion, OcclusionStrategy, Occluder};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("buffer holds {actual} values, expected {expected}")]
    BadLength { expected: usize, actual: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    BadChannels(usize),
    #[error("value {value} at index {index} is outside the unit interval")]
    OutOfRange { index: usize, value: f64 },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("invalid occlusion: {0}")]
    InvalidOcclusion(String),
    #[error("segment-mean occlusion needs a segmentation")]
    MissingSegmentation,
}

/// H×W×C intensities in `[0, 1]`, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, ImagingError> {
        if channels != 1 && channels != 3 {
            return Err(ImagingError::BadChannels(channels));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ImagingError::BadLength {
                expected,
                actual: data.len(),
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ImagingError::OutOfRange { index, value });
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Constant image. `value` is clamped into `[0, 1]`.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            height,
            width,
            channels,
            data: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    /// Single-channel image built from a per-pixel function; values are clamped.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c).clamp(0.0, 1.0));
            }
        }
        Self {
            height,
            width,
            channels: 1,
            data,
        }
    }

    pub(crate) fn from_raw_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Channel values of the pixel at row-major index `idx`.
    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    /// Channel-averaged intensity of every pixel, row-major.
    pub fn intensities(&self) -> Vec<f64> {
        let c = self.channels as f64;
        self.data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / c)
            .collect()
    }

    pub(crate) fn check_mask(&self, mask: &BinaryMask) -> Result<(), ImagingError> {
        if mask.shape() != self.shape() {
            return Err(ImagingError::DimensionMismatch {
                expected: self.shape(),
                actual: mask.shape(),
            });
        }
        Ok(())
    }
}

/// H×W boolean grid used for explanations and ground-truth masks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, ImagingError> {
        if bits.len() != height * width {
            return Err(ImagingError::BadLength {
                expected: height * width,
                actual: bits.len(),
            });
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    /// Mask with the half-open rectangle `[row0, row1) × [col0, col1)` set.
    pub fn from_rect(height: usize, width: usize, rect: Rect) -> Self {
        Self::from_fn(height, width, |r, c| rect.contains(r, c))
    }

    /// Mask with exactly the listed pixels set. Out-of-range pixels are ignored.
    pub fn from_pixels(height: usize, width: usize, pixels: &[(usize, usize)]) -> Self {
        let mut mask = Self::empty(height, width);
        for &(r, c) in pixels {
            if r < height && c < width {
                mask.set(r, c, true);
            }
        }
        mask
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn set_index(&mut self, idx: usize, value: bool) {
        self.bits[idx] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels as `(row, col)`, row-major.
    pub fn set_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        debug_assert_eq!(self.shape(), other.shape());
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect(),
        }
    }
}

/// Half-open pixel rectangle `[row0, row1) × [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Rect {
    pub fn new(row0: usize, col0: usize, row1: usize, col1: usize) -> Self {
        Self {
            row0,
            col0,
            row1,
            col1,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, height, width)
    }

    pub fn height(&self) -> usize {
        self.row1.saturating_sub(self.row0)
    }

    pub fn width(&self) -> usize {
        self.col1.saturating_sub(self.col0)
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row1 && col >= self.col0 && col < self.col1
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.row0 < other.row1
            && other.row0 < self.row1
            && self.col0 < other.col1
            && other.col0 < self.col1
    }
}

/// Per-pixel importance scores, H×W, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, ImagingError> {
        if values.len() != height * width {
            return Err(ImagingError::BadLength {
                expected: height * width,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ImagingError::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Row-major index of the maximum value; ties go to the smallest index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((i, v)),
            }
        }
        best.map(|(i, _)| i)
    }

    /// True when every value is identical, i.e. the map ranks nothing.
    pub fn is_flat(&self) -> bool {
        match self.values.first() {
            Some(&first) => self.values.iter().all(|&v| v == first),
            None => true,
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range_and_bad_length() {
        assert!(matches!(
            Image::new(1, 2, 1, vec![0.0, 1.5]),
            Err(ImagingError::OutOfRange { index: 1, .. })
        ));
        assert!(matches!(
            Image::new(2, 2, 1, vec![0.0; 3]),
            Err(ImagingError::BadLength { .. })
        ));
        assert!(matches!(
            Image::new(1, 1, 2, vec![0.0; 2]),
            Err(ImagingError::BadChannels(2))
        ));
    }

    #[test]
    fn intensities_average_channels() {
        let img = Image::new(1, 2, 3, vec![0.0, 0.3, 0.6, 1.0, 1.0, 1.0]).unwrap();
        let i = img.intensities();
        assert!((i[0] - 0.3).abs() < 1e-12);
        assert!((i[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saliency_rejects_nan() {
        assert!(matches!(
            SaliencyMap::new(1, 2, vec![0.0, f64::NAN]),
            Err(ImagingError::NonFinite(1))
        ));
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let s = SaliencyMap::new(2, 2, vec![1.0, 3.0, 3.0, 0.0]).unwrap();
        assert_eq!(s.argmax(), Some(1));
        assert!(!s.is_flat());
        assert!(SaliencyMap::zeros(3, 3).is_flat());
    }

    #[test]
    fn rect_geometry() {
        let r = Rect::new(2, 3, 5, 7);
        assert_eq!(r.area(), 12);
        assert!(r.contains(2, 3) && !r.contains(5, 3));
        assert!(r.intersects(&Rect::new(4, 6, 9, 9)));
        assert!(!r.intersects(&Rect::new(5, 0, 9, 9)));
    }
}
