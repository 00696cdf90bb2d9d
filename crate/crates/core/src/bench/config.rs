use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{BenchError, DEFAULT_POSITIVE};
use crate::explain::{Tool, ToolParams};
use crate::extract::ExtractionParams;
use crate::imaging::Connectivity;
use crate::metrics::{PdcParams, StdKind};
use crate::oracle::OracleSpec;

/// Validated benchmark settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Deduplicated, in `Tool` order.
    pub tools: Vec<Tool>,
    pub budget: usize,
    pub seed: u64,
    pub pdc: PdcParams,
    pub connectivity: Connectivity,
    pub extraction: ExtractionParams,
    pub tool_params: ToolParams,
    pub oracle: Option<OracleSpec>,
    pub output: Option<PathBuf>,
    /// Worker threads; `None` uses one per CPU.
    pub workers: Option<usize>,
    pub positive_label: String,
    pub std: StdKind,
    /// Reconnect attempts for remote oracles.
    pub retries: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tools: Tool::ALL.to_vec(),
            budget: 2000,
            seed: 0,
            pdc: PdcParams::default(),
            connectivity: Connectivity::Eight,
            extraction: ExtractionParams::default(),
            tool_params: ToolParams::default(),
            oracle: None,
            output: None,
            workers: None,
            positive_label: DEFAULT_POSITIVE.to_string(),
            std: StdKind::Sample,
            retries: 0,
        }
    }
}

/// Optional settings as read from a config file or command-line flags.
///
/// The file is TOML key-value pairs with these keys:
///
/// ```text
/// tools = ["rise", "rex", "lime", "shap"]
/// budget = 2000
/// seed = 0
/// s = 1.0
/// b = 1.0
/// connectivity = 8
/// step = 0.01
/// min-confidence = 0.5
/// oracle = "blob:8:0.8"
/// output = "out"
/// workers = 4
/// segments = 40
/// shap-blur = 63
/// positive-label = "tumor"
/// population-std = false
/// retries = 0
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigOverrides {
    pub tools: Option<Vec<Tool>>,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub s: Option<f64>,
    pub b: Option<f64>,
    pub connectivity: Option<u8>,
    pub step: Option<f64>,
    pub min_confidence: Option<f64>,
    pub oracle: Option<String>,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
    pub segments: Option<usize>,
    pub shap_blur: Option<usize>,
    pub positive_label: Option<String>,
    pub population_std: Option<bool>,
    pub retries: Option<u32>,
}

impl ConfigOverrides {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.message().to_string()))
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(self, other: ConfigOverrides) -> ConfigOverrides {
        ConfigOverrides {
            tools: other.tools.or(self.tools),
            budget: other.budget.or(self.budget),
            seed: other.seed.or(self.seed),
            s: other.s.or(self.s),
            b: other.b.or(self.b),
            connectivity: other.connectivity.or(self.connectivity),
            step: other.step.or(self.step),
            min_confidence: other.min_confidence.or(self.min_confidence),
            oracle: other.oracle.or(self.oracle),
            output: other.output.or(self.output),
            workers: other.workers.or(self.workers),
            segments: other.segments.or(self.segments),
            shap_blur: other.shap_blur.or(self.shap_blur),
            positive_label: other.positive_label.or(self.positive_label),
            population_std: other.population_std.or(self.population_std),
            retries: other.retries.or(self.retries),
        }
    }
}

impl RunConfig {
    pub fn from_overrides(o: ConfigOverrides) -> Result<Self, BenchError> {
        let d = RunConfig::default();
        let mut tools = o.tools.unwrap_or(d.tools);
        tools.sort();
        tools.dedup();
        let connectivity = match o.connectivity {
            None => d.connectivity,
            Some(4) => Connectivity::Four,
            Some(8) => Connectivity::Eight,
            Some(n) => return Err(BenchError::Config(format!("connectivity must be 4 or 8, got {n}"))),
        };
        let oracle = o
            .oracle
            .map(|s| s.parse::<OracleSpec>())
            .transpose()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        let mut tool_params = d.tool_params;
        if let Some(k) = o.segments {
            tool_params.segments = k;
        }
        if let Some(w) = o.shap_blur {
            tool_params.shap.blur_window = w;
        }
        let cfg = RunConfig {
            tools,
            budget: o.budget.unwrap_or(d.budget),
            seed: o.seed.unwrap_or(d.seed),
            pdc: PdcParams {
                s: o.s.unwrap_or(d.pdc.s),
                b: o.b.unwrap_or(d.pdc.b),
            },
            connectivity,
            extraction: ExtractionParams {
                step: o.step.unwrap_or(d.extraction.step),
                min_confidence: o.min_confidence,
                ..d.extraction
            },
            tool_params,
            oracle,
            output: o.output,
            workers: o.workers,
            positive_label: o.positive_label.unwrap_or(d.positive_label),
            std: if o.population_std.unwrap_or(false) {
                StdKind::Population
            } else {
                StdKind::Sample
            },
            retries: o.retries.unwrap_or(d.retries),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.tools.is_empty() {
            return bad("at least one tool is required".into());
        }
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if self.tool_params.segments == 0 {
            return bad("segments must be at least 1".into());
        }
        if self.tool_params.shap.blur_window % 2 == 0 {
            return bad(format!("shap blur window must be odd, got {}", self.tool_params.shap.blur_window));
        }
        if let Some(m) = self.extraction.min_confidence {
            if !(0.0..=1.0).contains(&m) {
                return bad(format!("min confidence {m} outside [0, 1]"));
            }
        }
        self.pdc.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.extraction
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_overrides(ConfigOverrides::parse("").unwrap()).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn file_keys_are_applied() {
        let text = "tools = [\"shap\", \"rise\", \"rise\"]\nbudget = 100\nconnectivity = 4\noracle = \"blob:8:0.8\"\nshap-blur = 31\npopulation-std = true\n";
        let cfg = RunConfig::from_overrides(ConfigOverrides::parse(text).unwrap()).unwrap();
        assert_eq!(cfg.tools, [Tool::Rise, Tool::Shap]);
        assert_eq!(cfg.budget, 100);
        assert_eq!(cfg.connectivity, Connectivity::Four);
        assert_eq!(cfg.oracle, Some(OracleSpec::Blob { window: 8, threshold: 0.8 }));
        assert_eq!(cfg.tool_params.shap.blur_window, 31);
        assert_eq!(cfg.std, StdKind::Population);
    }

    #[test]
    fn flags_override_file() {
        let file = ConfigOverrides::parse("budget = 100\nseed = 4\n").unwrap();
        let flags = ConfigOverrides {
            budget: Some(7),
            ..ConfigOverrides::default()
        };
        let cfg = RunConfig::from_overrides(file.overlay(flags)).unwrap();
        assert_eq!((cfg.budget, cfg.seed), (7, 4));
    }

    #[test]
    fn invalid_settings_rejected() {
        for text in [
            "tools = []",
            "budget = 0",
            "connectivity = 6",
            "s = 0.0",
            "step = 2.0",
            "oracle = \"blob\"",
            "shap-blur = 64",
            "colour = 1",
            "tools = [\"gradcam\"]",
        ] {
            let result = ConfigOverrides::parse(text).and_then(RunConfig::from_overrides);
            assert!(matches!(result, Err(BenchError::Config(_))), "{text}: {result:?}");
        }
    }
}
