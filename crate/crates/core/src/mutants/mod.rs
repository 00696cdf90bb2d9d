//! Seeded perturbation machinery shared by the explainers.
//!
//! Every generator draws from its own [`rng::Stream`], and item `i` of a
//! sequence depends only on `(seed, i)`, so sequences can be split across
//! workers by index range without changing their contents.

mod coalition;
mod partition;
mod rise;
pub mod rng;
mod segment;

pub use coalition::{coalition_samples, CoalitionScheme};
pub use partition::{rex_partition, Partition};
pub use rise::{rise_masks, RiseMaskGenerator, RiseMaskParams};
pub use segment::{segment_image, Segmentation};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MutantError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("rectangle {height}x{width} is too small to partition (need at least 2x2)")]
    RectTooSmall { height: usize, width: usize },
}
