//! Overlap scores between an explanation mask and an expert annotation.
//!
//! `d` follows `d = 1 − E/E_max`: coincident centroids give 1. Prose
//! descriptions that call `d = 0` "same location" contradict this formula
//! and the perfect-alignment anchor `pdc = 1`, so they are not followed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{centroid, connected_components, BinaryMask, Connectivity, Region};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("dice is undefined for two empty masks")]
    BothEmpty,
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("expert annotation is empty")]
    InvalidHpe,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("mask shapes differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("cannot summarize an empty sequence")]
    EmptyInput,
}

/// Size-penalty factors: `s` for undersized, `b` for oversized explanations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdcParams {
    pub s: f64,
    pub b: f64,
}

impl Default for PdcParams {
    fn default() -> Self {
        Self { s: 1.0, b: 1.0 }
    }
}

impl PdcParams {
    pub fn new(s: f64, b: f64) -> Result<Self, MetricError> {
        let p = Self { s, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        for (name, v) in [("s", self.s), ("b", self.b)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(MetricError::InvalidParams(format!("{name} = {v} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Per-explanation score. `dc`, `d` and `r` are means over the connected
/// regions of the explanation, so `pdc = (d + r + dc) / 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdcBreakdown {
    pub dc: f64,
    pub d: f64,
    pub r: f64,
    pub pdc: f64,
    pub count: usize,
}

impl PdcBreakdown {
    pub const EMPTY: PdcBreakdown = PdcBreakdown {
        dc: 0.0,
        d: 0.0,
        r: 0.0,
        pdc: 0.0,
        count: 0,
    };
}

fn same_shape(x: &BinaryMask, y: &BinaryMask) -> Result<(), MetricError> {
    if x.shape() != y.shape() {
        return Err(MetricError::DimensionMismatch(x.shape(), y.shape()));
    }
    Ok(())
}

pub fn dice(x: &BinaryMask, y: &BinaryMask) -> Result<f64, MetricError> {
    same_shape(x, y)?;
    let total = x.count() + y.count();
    if total == 0 {
        return Err(MetricError::BothEmpty);
    }
    Ok(2.0 * x.intersection_count(y) as f64 / total as f64)
}

/// Largest distance from `point` to an image corner, in pixel-index
/// coordinates.
fn max_corner_distance(point: (f64, f64), shape: (usize, usize)) -> f64 {
    let (h, w) = ((shape.0 - 1) as f64, (shape.1 - 1) as f64);
    [(0.0, 0.0), (0.0, w), (h, 0.0), (h, w)]
        .iter()
        .map(|&(r, c)| (point.0 - r).hypot(point.1 - c))
        .fold(0.0, f64::max)
}

fn d_from_centroids(exp: (f64, f64), hpe: (f64, f64), shape: (usize, usize)) -> f64 {
    let e_max = max_corner_distance(hpe, shape);
    if e_max == 0.0 {
        return 1.0;
    }
    let e = (exp.0 - hpe.0).hypot(exp.1 - hpe.1);
    (1.0 - e / e_max).clamp(0.0, 1.0)
}

pub fn distance_component(exp: &BinaryMask, hpe: &BinaryMask) -> Result<f64, MetricError> {
    same_shape(exp, hpe)?;
    let ce = centroid(exp).map_err(|_| MetricError::EmptyMask)?;
    let ch = centroid(hpe).map_err(|_| MetricError::EmptyMask)?;
    Ok(d_from_centroids(ce, ch, hpe.shape()))
}

pub fn size_ratio(exp_size: usize, hpe_size: usize, params: PdcParams) -> Result<f64, MetricError> {
    params.validate()?;
    if hpe_size == 0 {
        return Err(MetricError::InvalidHpe);
    }
    let (e, h) = (exp_size as f64, hpe_size as f64);
    Ok(match exp_size.cmp(&hpe_size) {
        std::cmp::Ordering::Less => params.s * e / h,
        std::cmp::Ordering::Greater => params.b * h / e,
        std::cmp::Ordering::Equal => 1.0,
    })
}

/// Penalized Dice Coefficient of `exp` against the expert annotation `hpe`.
///
/// Each connected region of `exp` is scored against the whole `hpe` using
/// its own centroid and area; the result is the mean over regions.
pub fn pdc(
    exp: &BinaryMask,
    hpe: &BinaryMask,
    params: PdcParams,
    connectivity: Connectivity,
) -> Result<PdcBreakdown, MetricError> {
    same_shape(exp, hpe)?;
    params.validate()?;
    if hpe.is_empty() {
        return Err(MetricError::InvalidHpe);
    }
    let regions = connected_components(exp, connectivity);
    if regions.is_empty() {
        return Ok(PdcBreakdown::EMPTY);
    }
    let hpe_centroid = centroid(hpe).map_err(|_| MetricError::InvalidHpe)?;
    let hpe_size = hpe.count();
    let (mut dc, mut d, mut r) = (0.0, 0.0, 0.0);
    for region in &regions {
        let (rdc, rd, rr) = region_terms(region, hpe, hpe_centroid, hpe_size, params)?;
        dc += rdc;
        d += rd;
        r += rr;
    }
    let n = regions.len() as f64;
    let (dc, d, r) = (dc / n, d / n, r / n);
    Ok(PdcBreakdown {
        dc,
        d,
        r,
        pdc: (d + r + dc) / 3.0,
        count: regions.len(),
    })
}

fn region_terms(
    region: &Region,
    hpe: &BinaryMask,
    hpe_centroid: (f64, f64),
    hpe_size: usize,
    params: PdcParams,
) -> Result<(f64, f64, f64), MetricError> {
    let overlap = region
        .pixels
        .iter()
        .filter(|&&(r, c)| hpe.get(r, c))
        .count();
    let dc = 2.0 * overlap as f64 / (region.area() + hpe_size) as f64;
    let d = d_from_centroids(region.centroid, hpe_centroid, hpe.shape());
    let r = size_ratio(region.area(), hpe_size, params)?;
    Ok((dc, d, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StdKind {
    /// `n − 1` denominator.
    #[default]
    Sample,
    Population,
}

/// Arithmetic mean and sample standard deviation (0 for a single value).
pub fn summarize(values: &[f64]) -> Result<(f64, f64), MetricError> {
    summarize_with(values, StdKind::Sample)
}

pub fn summarize_with(values: &[f64], kind: StdKind) -> Result<(f64, f64), MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = match kind {
        StdKind::Sample if values.len() == 1 => return Ok((mean, 0.0)),
        StdKind::Sample => n - 1.0,
        StdKind::Population => n,
    };
    Ok((mean, (ss / denom).sqrt()))
}
