use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{resolve_target, Budget, ExplainError, ExplainerConfig, Target, CHUNK};
use crate::imaging::{Image, Occluder, OcclusionStrategy, SaliencyMap};
use crate::mutants::{RiseMaskGenerator, RiseMaskParams};
use crate::oracle::Oracle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiseParams {
    pub grid: usize,
    pub keep_prob: f64,
}

impl Default for RiseParams {
    fn default() -> Self {
        let d = RiseMaskParams::default();
        Self {
            grid: d.grid,
            keep_prob: d.keep_prob,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RiseOutput {
    pub saliency: SaliencyMap,
    pub target: String,
    /// Masks evaluated.
    pub masks: usize,
    pub queries: usize,
}

/// `Sal(x) = (1/(N·p)) Σᵢ confᵢ · mᵢ(x)` over `N` random soft masks.
///
/// `N` is the whole budget, minus one query when the target label must be
/// read off the unmodified image. Occluded pixels blend towards the fill of
/// `cfg.occlusion` (zero by default).
pub fn explain_rise(
    image: &Image,
    oracle: &dyn Oracle,
    cfg: &ExplainerConfig,
    params: &RiseParams,
) -> Result<RiseOutput, ExplainError> {
    cfg.validate()?;
    if params.keep_prob <= 0.0 {
        return Err(ExplainError::InvalidParams(
            "keep probability must be positive".into(),
        ));
    }
    let reserve = usize::from(cfg.target == Target::OriginalLabel);
    let n = cfg.budget.saturating_sub(reserve);
    if n == 0 {
        return Err(ExplainError::InvalidParams(format!(
            "budget {} leaves no queries for masks",
            cfg.budget
        )));
    }
    let generator = RiseMaskGenerator::new(
        RiseMaskParams {
            grid: params.grid,
            keep_prob: params.keep_prob,
            count: n,
            seed: cfg.seed,
        },
        image.shape(),
    )?;
    let occluder = Occluder::new(image, cfg.occlusion.unwrap_or(OcclusionStrategy::Zero), None)?;

    let mut budget = Budget::new(oracle, cfg.budget);
    let target = resolve_target(cfg, image, &mut budget)?;

    let mut sal = vec![0.0; image.pixel_count()];
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let masks: Vec<Vec<f64>> = (start..end).into_par_iter().map(|i| generator.mask(i)).collect();
        let mutants: Vec<Image> = masks.par_iter().map(|m| occluder.blend(m)).collect();
        let preds = budget.query(&mutants)?;
        for (mask, pred) in masks.iter().zip(&preds) {
            let conf = pred.score_for(&target);
            for (s, m) in sal.iter_mut().zip(mask) {
                *s += conf * m;
            }
        }
    }
    let norm = n as f64 * params.keep_prob;
    sal.iter_mut().for_each(|s| *s /= norm);
    Ok(RiseOutput {
        saliency: SaliencyMap::new(image.height(), image.width(), sal)?,
        target,
        masks: n,
        queries: budget.used(),
    })
}
