use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lstsq::weighted_lstsq;
use super::{coalition_keep, Budget, ExplainError, ExplainerConfig, SegmentAttribution, Target};
use crate::imaging::{BinaryMask, Image, Occluder, OcclusionStrategy, SaliencyMap};
use crate::mutants::{coalition_samples, CoalitionScheme, Segmentation};
use crate::oracle::Oracle;

// Weights this close to zero are round-off from a flat response.
const WEIGHT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimeParams {
    /// Width of the exponential kernel on the fraction of segments switched
    /// off.
    pub kernel_width: f64,
    /// Fill used while growing the mask. Zero keeps masks comparable with
    /// extracted ones.
    pub mask_occlusion: OcclusionStrategy,
}

impl Default for LimeParams {
    fn default() -> Self {
        Self {
            kernel_width: 0.25,
            mask_occlusion: OcclusionStrategy::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFit {
    pub attribution: SegmentAttribution,
    /// The design was rank-deficient; the ridge solution was used.
    pub singular: bool,
}

#[derive(Debug, Clone)]
pub struct LimeOutput {
    pub attribution: SegmentAttribution,
    pub saliency: SaliencyMap,
    pub mask: BinaryMask,
    pub target: String,
    pub singular: bool,
    pub queries: usize,
}

/// Weighted least squares of `responses` on the coalition indicators plus an
/// intercept, with sample weight `exp(−(1−a)²/width²)` where `a` is the
/// fraction of segments on.
pub fn fit_surrogate(
    coalitions: &[Vec<bool>],
    responses: &[f64],
    kernel_width: f64,
) -> Result<SurrogateFit, ExplainError> {
    let n = coalitions.len();
    if n == 0 || n != responses.len() {
        return Err(ExplainError::InvalidParams(format!(
            "{n} coalitions for {} responses",
            responses.len()
        )));
    }
    if kernel_width <= 0.0 || !kernel_width.is_finite() {
        return Err(ExplainError::InvalidParams(format!("kernel width {kernel_width}")));
    }
    let k = coalitions[0].len();
    if k == 0 || coalitions.iter().any(|c| c.len() != k) {
        return Err(ExplainError::InvalidParams("coalitions must share a positive length".into()));
    }
    let x = DMatrix::from_fn(n, k + 1, |i, j| {
        if j == k || coalitions[i][j] {
            1.0
        } else {
            0.0
        }
    });
    let weights: Vec<f64> = coalitions
        .iter()
        .map(|c| {
            let a = c.iter().filter(|&&b| b).count() as f64 / k as f64;
            (-(1.0 - a).powi(2) / kernel_width.powi(2)).exp()
        })
        .collect();
    let fit = weighted_lstsq(&x, responses, &weights);
    Ok(SurrogateFit {
        attribution: SegmentAttribution {
            weights: fit.coef[..k].to_vec(),
            intercept: fit.coef[k],
        },
        singular: fit.ridge,
    })
}

/// Linear surrogate over superpixels, then a greedy mask.
///
/// `k` queries are held back for the mask; the rest sample uniform
/// coalitions (off segments filled per `cfg.occlusion`, segment mean by
/// default). The all-on coalition doubles as the query that fixes the
/// original label. The mask adds positive-weight segments in descending
/// weight order (ties by segment id) until the oracle returns the target.
pub fn explain_lime(
    image: &Image,
    oracle: &dyn Oracle,
    segmentation: &Segmentation,
    cfg: &ExplainerConfig,
    params: &LimeParams,
) -> Result<LimeOutput, ExplainError> {
    cfg.validate()?;
    let k = segmentation.segment_count();
    if segmentation.shape() != image.shape() {
        return Err(ExplainError::InvalidParams("segmentation does not match the image".into()));
    }
    let samples = cfg.budget.saturating_sub(k);
    if samples < 2 {
        return Err(ExplainError::InvalidParams(format!(
            "budget {} is too small for {k} segments",
            cfg.budget
        )));
    }
    let occluder = Occluder::new(
        image,
        cfg.occlusion.unwrap_or(OcclusionStrategy::SegmentMean),
        Some(segmentation),
    )?;
    let mask_occluder = Occluder::new(image, params.mask_occlusion, Some(segmentation))?;
    let coalitions = coalition_samples(k, samples, cfg.seed, CoalitionScheme::Uniform)?;

    let mut budget = Budget::new(oracle, cfg.budget);
    let preds = budget.query_generated(samples, |i| {
        occluder.apply_with(coalition_keep(segmentation, &coalitions[i]))
    })?;
    let target = match &cfg.target {
        Target::OriginalLabel => preds[1].label.clone(),
        Target::Label(l) => l.clone(),
    };
    let responses: Vec<f64> = preds.iter().map(|p| p.score_for(&target)).collect();
    let fit = fit_surrogate(&coalitions, &responses, params.kernel_width)?;
    let saliency = fit.attribution.to_saliency(segmentation);

    let mut order: Vec<usize> = (0..k)
        .filter(|&j| fit.attribution.weights[j] > WEIGHT_EPS)
        .collect();
    order.sort_by(|&a, &b| {
        fit.attribution.weights[b]
            .total_cmp(&fit.attribution.weights[a])
            .then(a.cmp(&b))
    });
    let mut on = vec![false; k];
    for &j in &order {
        on[j] = true;
        let mutant = mask_occluder.apply_with(coalition_keep(segmentation, &on));
        if budget.query_one(&mutant)?.label == target {
            let (h, w) = image.shape();
            let keep = coalition_keep(segmentation, &on);
            let mask = BinaryMask::from_fn(h, w, |r, c| keep(r * w + c));
            return Ok(LimeOutput {
                attribution: fit.attribution,
                saliency,
                mask,
                target,
                singular: fit.singular,
                queries: budget.used(),
            });
        }
    }
    Err(ExplainError::NoExplanation(format!(
        "{} positive-weight segments never reach {target}",
        order.len()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ConstantOracle, FnOracle, Prediction};

    fn all_coalitions(k: usize) -> Vec<Vec<bool>> {
        (0..1usize << k)
            .map(|m| (0..k).map(|j| m & (1 << j) != 0).collect())
            .collect()
    }

    #[test]
    fn single_segment_game_singles_out_that_segment() {
        let coalitions = all_coalitions(4);
        let responses: Vec<f64> = coalitions.iter().map(|c| if c[2] { 1.0 } else { 0.0 }).collect();
        let fit = fit_surrogate(&coalitions, &responses, 0.25).unwrap();
        assert!(!fit.singular);
        let w = &fit.attribution.weights;
        // The response is exactly linear, so least squares recovers it.
        assert!((w[2] - 1.0).abs() < 1e-9);
        for j in [0, 1, 3] {
            assert!(w[j].abs() < 1e-9 && w[j] < w[2]);
        }
        assert!(fit.attribution.intercept.abs() < 1e-9);
    }

    #[test]
    fn constant_response_has_zero_weights() {
        let coalitions = all_coalitions(3);
        let fit = fit_surrogate(&coalitions, &vec![0.7; 8], 0.25).unwrap();
        assert!(fit.attribution.weights.iter().all(|w| w.abs() < 1e-9));
        assert!((fit.attribution.intercept - 0.7).abs() < 1e-9);
    }

    #[test]
    fn duplicated_samples_fall_back_to_ridge() {
        let coalitions = vec![vec![true, false], vec![true, false], vec![false, false]];
        let fit = fit_surrogate(&coalitions, &[1.0, 1.0, 0.0], 0.25).unwrap();
        assert!(fit.singular);
    }

    fn quadrant_segmentation() -> Segmentation {
        let labels = (0..16 * 16).map(|i| (i / 16 / 8) * 2 + (i % 16) / 8).collect();
        Segmentation::new(16, 16, labels).unwrap()
    }

    #[test]
    fn explanation_picks_the_decisive_segment() {
        let seg = quadrant_segmentation();
        let img = Image::from_fn(16, 16, |r, c| if r >= 8 && c < 8 { 0.9 } else { 0.2 });
        // Positive iff the bottom-left quadrant keeps its brightness.
        let oracle = FnOracle::new(|im: &Image| {
            let v = im.get(12, 3, 0);
            if v > 0.5 {
                Prediction::new("tumor", v)
            } else {
                Prediction::new("no_tumor", 1.0 - v)
            }
        });
        let cfg = ExplainerConfig {
            budget: 300,
            occlusion: Some(OcclusionStrategy::Zero),
            ..ExplainerConfig::default()
        };
        let out = explain_lime(&img, &oracle, &seg, &cfg, &LimeParams::default()).unwrap();
        assert_eq!(out.target, "tumor");
        let w = &out.attribution.weights;
        assert!(w[2] > w[0] && w[2] > w[1] && w[2] > w[3]);
        assert_eq!(out.mask, BinaryMask::from_fn(16, 16, |r, c| r >= 8 && c < 8));
        assert!(oracle.query_count() <= 300);
        assert_eq!(out.queries as u64, oracle.query_count());

        let again = explain_lime(&img, &oracle, &seg, &cfg, &LimeParams::default()).unwrap();
        assert_eq!(again.attribution, out.attribution);
    }

    #[test]
    fn constant_oracle_gives_no_mask() {
        let seg = quadrant_segmentation();
        let oracle = ConstantOracle::new("a", 0.6);
        let cfg = ExplainerConfig {
            budget: 100,
            ..ExplainerConfig::default()
        };
        let err = explain_lime(&Image::filled(16, 16, 1, 0.3), &oracle, &seg, &cfg, &LimeParams::default());
        assert!(matches!(err, Err(ExplainError::NoExplanation(_))));
    }
}
