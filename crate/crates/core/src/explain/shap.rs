use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lstsq::weighted_lstsq;
use super::{coalition_keep, Budget, ExplainError, ExplainerConfig, SegmentAttribution, Target};
use crate::imaging::{Image, Occluder, OcclusionStrategy, SaliencyMap};
use crate::mutants::{coalition_samples, CoalitionScheme, Segmentation};
use crate::oracle::Oracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapMode {
    /// Exact when all `2^k` coalitions fit in the budget.
    #[default]
    Auto,
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapParams {
    pub mode: ShapMode,
    /// Blur window for the default fill; clamped to the largest odd size
    /// that fits the image.
    pub blur_window: usize,
}

impl Default for ShapParams {
    fn default() -> Self {
        Self {
            mode: ShapMode::Auto,
            blur_window: 63,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShapOutput {
    /// `weights` are the Shapley values; `intercept` is the value of the
    /// fully occluded image.
    pub attribution: SegmentAttribution,
    pub saliency: SaliencyMap,
    pub target: String,
    pub exact: bool,
    pub queries: usize,
}

fn coalition_bits(k: usize, m: usize) -> Vec<bool> {
    (0..k).map(|j| m & (1 << j) != 0).collect()
}

/// Exact Shapley values from a table of all `2^k` coalition values, indexed
/// by bitmask (bit `j` set = player `j` present).
fn exact_from_table(k: usize, values: &[f64]) -> Vec<f64> {
    debug_assert_eq!(values.len(), 1 << k);
    // |S|!(k−|S|−1)!/k!, built as a product to avoid factorial overflow.
    let weight: Vec<f64> = (0..k)
        .map(|s| {
            let mut w = 1.0 / k as f64;
            for i in 1..=s {
                w *= i as f64 / (k - i) as f64;
            }
            w
        })
        .collect();
    (0..k)
        .map(|i| {
            let bit = 1 << i;
            (0..values.len())
                .filter(|m| m & bit == 0)
                .map(|m| weight[m.count_ones() as usize] * (values[m | bit] - values[m]))
                .sum()
        })
        .collect()
}

/// Kernel-SHAP estimate from coalitions sampled in proportion to the
/// Shapley kernel. Samples 0 and 1 must be all-off and all-on; they fix the
/// efficiency constraint `Σφ = v(all) − v(none)`, which is eliminated by
/// solving for the last player. Returns `(φ, ridge_used)`.
fn kernel_from_samples(k: usize, coalitions: &[Vec<bool>], values: &[f64]) -> (Vec<f64>, bool) {
    let (v0, v1) = (values[0], values[1]);
    let total = v1 - v0;
    if k == 1 {
        return (vec![total], false);
    }
    let rows = &coalitions[2..];
    let last = k - 1;
    let x = DMatrix::from_fn(rows.len(), last, |r, i| {
        f64::from(u8::from(rows[r][i])) - f64::from(u8::from(rows[r][last]))
    });
    let y: Vec<f64> = rows
        .iter()
        .zip(&values[2..])
        .map(|(c, v)| v - v0 - if c[last] { total } else { 0.0 })
        .collect();
    // Sampling already follows the kernel, so every row has unit weight.
    let fit = weighted_lstsq(&x, &y, &vec![1.0; rows.len()]);
    let mut phi = fit.coef;
    let rest: f64 = phi.iter().sum();
    phi.push(total - rest);
    (phi, fit.ridge)
}

/// Exact Shapley values of the `k`-player game `value`.
pub fn shapley_exact(k: usize, value: impl Fn(&[bool]) -> f64) -> Vec<f64> {
    let table: Vec<f64> = (0..1usize << k).map(|m| value(&coalition_bits(k, m))).collect();
    exact_from_table(k, &table)
}

/// Sampled Shapley values from `n` kernel-distributed coalitions
/// (`n ≥ 2`; the first two are all-off and all-on).
pub fn shapley_sampled(
    k: usize,
    n: usize,
    seed: u64,
    value: impl Fn(&[bool]) -> f64,
) -> Result<Vec<f64>, ExplainError> {
    if n < 2 {
        return Err(ExplainError::InvalidParams("need at least 2 samples".into()));
    }
    let coalitions = coalition_samples(k, n, seed, CoalitionScheme::ShapleyKernel)?;
    let values: Vec<f64> = coalitions.iter().map(|c| value(c)).collect();
    Ok(kernel_from_samples(k, &coalitions, &values).0)
}

/// Shapley values of the superpixels for the target label.
///
/// Absent segments are filled per `cfg.occlusion`, by default a box blur of
/// `params.blur_window`. A flat result (every mutant scored alike) is a
/// valid output; callers decide how to report it.
pub fn explain_shap(
    image: &Image,
    oracle: &dyn Oracle,
    segmentation: &Segmentation,
    cfg: &ExplainerConfig,
    params: &ShapParams,
) -> Result<ShapOutput, ExplainError> {
    cfg.validate()?;
    if segmentation.shape() != image.shape() {
        return Err(ExplainError::InvalidParams("segmentation does not match the image".into()));
    }
    let k = segmentation.segment_count();
    let full = (k < usize::BITS as usize - 1).then(|| 1usize << k);
    let fits = full.is_some_and(|f| f <= cfg.budget);
    let exact = match params.mode {
        ShapMode::Auto => fits,
        ShapMode::Exact if fits => true,
        ShapMode::Exact => {
            return Err(ExplainError::InvalidParams(format!(
                "exact mode needs 2^{k} queries, budget is {}",
                cfg.budget
            )))
        }
        ShapMode::Sampled => false,
    };
    if !exact && cfg.budget < 2 {
        return Err(ExplainError::InvalidParams("sampled mode needs a budget of at least 2".into()));
    }
    let (h, w) = image.shape();
    let strategy = cfg
        .occlusion
        .unwrap_or_else(|| OcclusionStrategy::blur_clamped(params.blur_window, h, w));
    let occluder = Occluder::new(image, strategy, Some(segmentation))?;

    let coalitions: Vec<Vec<bool>> = if exact {
        (0..full.expect("exact implies 2^k fits")).map(|m| coalition_bits(k, m)).collect()
    } else {
        coalition_samples(k, cfg.budget, cfg.seed, CoalitionScheme::ShapleyKernel)?
    };
    let mut budget = Budget::new(oracle, cfg.budget);
    let preds = budget.query_generated(coalitions.len(), |i| {
        occluder.apply_with(coalition_keep(segmentation, &coalitions[i]))
    })?;
    let (none_idx, all_idx) = if exact { (0, coalitions.len() - 1) } else { (0, 1) };
    let target = match &cfg.target {
        Target::OriginalLabel => preds[all_idx].label.clone(),
        Target::Label(l) => l.clone(),
    };
    let values: Vec<f64> = preds.iter().map(|p| p.score_for(&target)).collect();
    let phi = if exact {
        exact_from_table(k, &values)
    } else {
        kernel_from_samples(k, &coalitions, &values).0
    };
    let attribution = SegmentAttribution {
        weights: phi,
        intercept: values[none_idx],
    };
    Ok(ShapOutput {
        saliency: attribution.to_saliency(segmentation),
        attribution,
        target,
        exact,
        queries: budget.used(),
    })
}
