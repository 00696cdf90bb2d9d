//! Greedy rank-and-query conversion of a heatmap into a mask.

use serde::{Deserialize, Serialize};

use crate::explain::ExplainError;
use crate::imaging::{BinaryMask, Image, ImagingError, Occluder, OcclusionStrategy, SaliencyMap};
use crate::oracle::{Oracle, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionParams {
    /// Fraction of all pixels added per round, in `(0, 1]`.
    pub step: f64,
    /// Round limit; `None` runs until the whole image is kept.
    pub max_rounds: Option<usize>,
    pub occlusion: OcclusionStrategy,
    /// Also require this much confidence in the target label.
    pub min_confidence: Option<f64>,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self {
            step: 0.01,
            max_rounds: None,
            occlusion: OcclusionStrategy::Zero,
            min_confidence: None,
        }
    }
}

impl ExtractionParams {
    pub fn validate(&self) -> Result<(), ExplainError> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(ExplainError::InvalidParams(format!("step {} outside (0, 1]", self.step)));
        }
        if self.max_rounds == Some(0) {
            return Err(ExplainError::InvalidParams("max rounds must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether `prediction` counts as the target classification.
    pub fn accepts(&self, prediction: &Prediction, target: &str) -> bool {
        prediction.label == target
            && self
                .min_confidence
                .is_none_or(|m| prediction.score_for(target) >= m)
    }
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub mask: BinaryMask,
    /// Oracle queries issued, one per round.
    pub rounds: usize,
}

/// Pixel indices by descending saliency; ties keep row-major order.
pub fn rank_pixels(saliency: &SaliencyMap) -> Vec<usize> {
    let values = saliency.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Keeps the top `ceil(r·step·N)` pixels in round `r = 1, 2, …` and returns
/// the first keep-mask the oracle classifies as `target`.
///
/// Rounds that would add no pixel are skipped without a query.
pub fn extract_minimal_mask(
    saliency: &SaliencyMap,
    image: &Image,
    oracle: &dyn Oracle,
    target: &str,
    params: &ExtractionParams,
) -> Result<Extraction, ExplainError> {
    params.validate()?;
    if saliency.shape() != image.shape() {
        return Err(ImagingError::DimensionMismatch {
            expected: image.shape(),
            actual: saliency.shape(),
        }
        .into());
    }
    let occluder = Occluder::new(image, params.occlusion, None)?;
    let order = rank_pixels(saliency);
    let n = order.len();
    let (h, w) = image.shape();
    let mut keep = BinaryMask::empty(h, w);
    let mut kept = 0;
    let mut queries = 0;
    for round in 1.. {
        if params.max_rounds.is_some_and(|m| round > m) {
            break;
        }
        // The small offset stops 0.07·100 = 7.000000000000001 from rounding up.
        let want = ((round as f64 * params.step * n as f64 - 1e-9).ceil() as usize).min(n);
        if want == kept {
            continue;
        }
        for &idx in &order[kept..want] {
            keep.set_index(idx, true);
        }
        kept = want;
        queries += 1;
        let mutant = occluder.apply(&keep)?;
        if params.accepts(&oracle.classify(&mutant)?, target) {
            return Ok(Extraction {
                mask: keep,
                rounds: queries,
            });
        }
        if kept == n {
            break;
        }
    }
    Err(ExplainError::NoExplanation(format!(
        "no keep-mask up to {kept} of {n} pixels yields {target}"
    )))
}
