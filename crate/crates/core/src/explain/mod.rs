//! The four black-box explainers.
//!
//! Every explainer queries the oracle only through a [`Budget`], so the
//! number of images submitted never exceeds `ExplainerConfig::budget`.
//! Batches are aggregated in mutant-index order; results do not depend on
//! how the oracle schedules a batch.

mod lime;
mod lstsq;
mod rex;
mod rise;
mod shap;

pub use lime::{explain_lime, fit_surrogate, LimeOutput, LimeParams, SurrogateFit};
pub use rex::{explain_rex, Award, ResponsibilityLandscape, RexOutput, RexParams};
pub use rise::{explain_rise, RiseOutput, RiseParams};
pub use shap::{
    explain_shap, shapley_exact, shapley_sampled, ShapMode, ShapOutput, ShapParams,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{BinaryMask, Image, ImagingError, OcclusionStrategy, SaliencyMap};
use crate::mutants::{MutantError, Segmentation};
use crate::oracle::{Oracle, OracleError, Prediction};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("no explanation: {0}")]
    NoExplanation(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("query budget of {budget} exceeded")]
    BudgetExceeded { budget: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Mutant(#[from] MutantError),
}

/// Which class an explanation is for.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// The oracle's label for the unmodified image.
    #[default]
    OriginalLabel,
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    /// Maximum number of images submitted to the oracle.
    pub budget: usize,
    pub seed: u64,
    pub target: Target,
    /// `None` selects each tool's default fill.
    pub occlusion: Option<OcclusionStrategy>,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            budget: 2000,
            seed: 0,
            target: Target::OriginalLabel,
            occlusion: None,
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<(), ExplainError> {
        if self.budget == 0 {
            return Err(ExplainError::InvalidParams("budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Query allowance wrapped around an oracle.
pub(crate) struct Budget<'a> {
    oracle: &'a dyn Oracle,
    limit: usize,
    used: usize,
}

// Keeps per-batch memory bounded for large budgets.
const CHUNK: usize = 256;

impl<'a> Budget<'a> {
    pub(crate) fn new(oracle: &'a dyn Oracle, limit: usize) -> Self {
        Self {
            oracle,
            limit,
            used: 0,
        }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.limit - self.used
    }

    pub(crate) fn used(&self) -> usize {
        self.used
    }

    pub(crate) fn query(&mut self, images: &[Image]) -> Result<Vec<Prediction>, ExplainError> {
        if images.len() > self.remaining() {
            return Err(ExplainError::BudgetExceeded { budget: self.limit });
        }
        self.used += images.len();
        Ok(self.oracle.classify_batch(images)?)
    }

    pub(crate) fn query_one(&mut self, image: &Image) -> Result<Prediction, ExplainError> {
        Ok(self.query(std::slice::from_ref(image))?.pop().expect("one reply"))
    }

    /// Queries `count` mutants produced by `make`, `CHUNK` at a time.
    pub(crate) fn query_generated(
        &mut self,
        count: usize,
        make: impl Fn(usize) -> Image + Sync,
    ) -> Result<Vec<Prediction>, ExplainError> {
        use rayon::prelude::*;
        let mut out = Vec::with_capacity(count);
        for start in (0..count).step_by(CHUNK) {
            let end = (start + CHUNK).min(count);
            let batch: Vec<Image> = (start..end).into_par_iter().map(&make).collect();
            out.extend(self.query(&batch)?);
        }
        Ok(out)
    }
}

/// Resolves the target label, querying the unmodified image only when the
/// config asks for the original label.
pub(crate) fn resolve_target(
    cfg: &ExplainerConfig,
    image: &Image,
    budget: &mut Budget<'_>,
) -> Result<String, ExplainError> {
    match &cfg.target {
        Target::Label(l) => Ok(l.clone()),
        Target::OriginalLabel => Ok(budget.query_one(image)?.label),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tool {
    Rise,
    Rex,
    Lime,
    Shap,
}

impl Tool {
    pub const ALL: [Tool; 4] = [Tool::Rise, Tool::Rex, Tool::Lime, Tool::Shap];

    /// Whether the tool produces its own mask (otherwise masks come from
    /// greedy extraction).
    pub fn has_native_mask(self) -> bool {
        matches!(self, Tool::Rex | Tool::Lime)
    }

    pub fn needs_segmentation(self) -> bool {
        matches!(self, Tool::Lime | Tool::Shap)
    }
}

impl fmt::Display for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tool::Rise => "rise",
            Tool::Rex => "rex",
            Tool::Lime => "lime",
            Tool::Shap => "shap",
        })
    }
}

impl FromStr for Tool {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rise" => Ok(Tool::Rise),
            "rex" => Ok(Tool::Rex),
            "lime" => Ok(Tool::Lime),
            "shap" => Ok(Tool::Shap),
            other => Err(format!("unknown tool '{other}' (expected rise, rex, lime or shap)")),
        }
    }
}

/// Per-tool parameters for [`explain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolParams {
    pub rise: RiseParams,
    pub rex: RexParams,
    pub lime: LimeParams,
    pub shap: ShapParams,
    /// Target superpixel count for LIME and SHAP.
    pub segments: usize,
}

impl Default for ToolParams {
    fn default() -> Self {
        Self {
            rise: RiseParams::default(),
            rex: RexParams::default(),
            lime: LimeParams::default(),
            shap: ShapParams::default(),
            segments: 40,
        }
    }
}

/// Tool-independent view of an explanation.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub tool: Tool,
    pub target: String,
    pub saliency: SaliencyMap,
    /// Native mask, for tools that produce one.
    pub mask: Option<BinaryMask>,
    /// Fill under which the native mask was verified.
    pub mask_occlusion: Option<OcclusionStrategy>,
    pub queries: usize,
}

/// Runs `tool` on `image`. LIME and SHAP segment the image first.
pub fn explain(
    tool: Tool,
    image: &Image,
    oracle: &dyn Oracle,
    cfg: &ExplainerConfig,
    params: &ToolParams,
) -> Result<Explanation, ExplainError> {
    let segmentation = if tool.needs_segmentation() {
        Some(crate::mutants::segment_image(image, params.segments)?)
    } else {
        None
    };
    explain_with_segmentation(tool, image, oracle, cfg, params, segmentation.as_ref())
}

pub fn explain_with_segmentation(
    tool: Tool,
    image: &Image,
    oracle: &dyn Oracle,
    cfg: &ExplainerConfig,
    params: &ToolParams,
    segmentation: Option<&Segmentation>,
) -> Result<Explanation, ExplainError> {
    let need_seg = || {
        segmentation.ok_or_else(|| ExplainError::InvalidParams(format!("{tool} needs a segmentation")))
    };
    Ok(match tool {
        Tool::Rise => {
            let out = explain_rise(image, oracle, cfg, &params.rise)?;
            Explanation {
                tool,
                target: out.target,
                saliency: out.saliency,
                mask: None,
                mask_occlusion: None,
                queries: out.queries,
            }
        }
        Tool::Rex => {
            let out = explain_rex(image, oracle, cfg, &params.rex)?;
            Explanation {
                tool,
                target: out.target,
                saliency: out.landscape.saliency(params.rex.landscape_sum),
                mask: Some(out.mask),
                mask_occlusion: Some(out.occlusion),
                queries: out.queries,
            }
        }
        Tool::Lime => {
            let out = explain_lime(image, oracle, need_seg()?, cfg, &params.lime)?;
            Explanation {
                tool,
                target: out.target,
                saliency: out.saliency,
                mask: Some(out.mask),
                mask_occlusion: Some(params.lime.mask_occlusion),
                queries: out.queries,
            }
        }
        Tool::Shap => {
            let out = explain_shap(image, oracle, need_seg()?, cfg, &params.shap)?;
            Explanation {
                tool,
                target: out.target,
                saliency: out.saliency,
                mask: None,
                mask_occlusion: None,
                queries: out.queries,
            }
        }
    })
}

/// One weight per segment plus the surrogate intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAttribution {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl SegmentAttribution {
    /// Broadcasts each segment's weight to its pixels.
    pub fn to_saliency(&self, segmentation: &Segmentation) -> SaliencyMap {
        let values = segmentation.labels().iter().map(|&l| self.weights[l]).collect();
        SaliencyMap::new(segmentation.height(), segmentation.width(), values)
            .expect("finite weights")
    }
}

/// Keep-mask covering the segments switched on in `coalition`.
pub(crate) fn coalition_keep<'a>(segmentation: &'a Segmentation, coalition: &'a [bool]) -> impl Fn(usize) -> bool + 'a {
    let labels = segmentation.labels();
    let coalition = coalition.to_vec();
    move |idx| coalition[labels[idx]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ConstantOracle;

    #[test]
    fn tool_names_round_trip() {
        for tool in Tool::ALL {
            assert_eq!(tool.to_string().parse::<Tool>().unwrap(), tool);
        }
        assert!("gradcam".parse::<Tool>().is_err());
    }

    #[test]
    fn budget_refuses_overdraft() {
        let oracle = ConstantOracle::new("a", 1.0);
        let mut budget = Budget::new(&oracle, 2);
        let img = Image::filled(2, 2, 1, 0.0);
        budget.query(&[img.clone(), img.clone()]).unwrap();
        assert_eq!(budget.remaining(), 0);
        assert!(matches!(budget.query_one(&img), Err(ExplainError::BudgetExceeded { budget: 2 })));
        assert_eq!(oracle.query_count(), 2);
    }

    #[test]
    fn generated_queries_keep_index_order() {
        let oracle = crate::oracle::FnOracle::new(|img: &Image| Prediction::new("x", img.get(0, 0, 0)));
        let mut budget = Budget::new(&oracle, 1000);
        let preds = budget
            .query_generated(600, |i| Image::filled(1, 1, 1, i as f64 / 600.0))
            .unwrap();
        for (i, p) in preds.iter().enumerate() {
            assert_eq!(p.confidence, i as f64 / 600.0);
        }
        assert_eq!(budget.used(), 600);
    }
}
