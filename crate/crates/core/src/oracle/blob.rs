use serde::{Deserialize, Serialize};

use super::{Oracle, OracleError, Prediction, QueryCounter};
use crate::imaging::Image;

/// Synthetic "bright blob" classifier: positive iff some `window`×`window`
/// patch has channel-averaged mean intensity at least `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobOracleParams {
    pub window: usize,
    pub threshold: f64,
    pub positive_label: String,
    pub negative_label: String,
}

impl BlobOracleParams {
    pub fn new(window: usize, threshold: f64) -> Self {
        Self {
            window,
            threshold,
            positive_label: "tumor".into(),
            negative_label: "no_tumor".into(),
        }
    }
}

#[derive(Debug)]
pub struct BlobOracle {
    params: BlobOracleParams,
    counter: QueryCounter,
}

pub fn blob_oracle(params: BlobOracleParams) -> Result<BlobOracle, OracleError> {
    if params.window == 0 {
        return Err(OracleError::InvalidParams("window must be at least 1".into()));
    }
    if params.threshold.is_nan() || params.threshold < 0.0 {
        return Err(OracleError::InvalidParams(format!(
            "threshold {} must be a non-negative number",
            params.threshold
        )));
    }
    if params.positive_label == params.negative_label {
        return Err(OracleError::InvalidParams("labels must differ".into()));
    }
    Ok(BlobOracle {
        params,
        counter: QueryCounter::default(),
    })
}

impl BlobOracle {
    pub fn params(&self) -> &BlobOracleParams {
        &self.params
    }

    /// Largest window mean of the channel-averaged intensity.
    pub fn max_window_mean(&self, image: &Image) -> Result<f64, OracleError> {
        let (h, w) = image.shape();
        let k = self.params.window;
        if k > h.min(w) {
            return Err(OracleError::InvalidParams(format!(
                "window {k} exceeds image side {}",
                h.min(w)
            )));
        }
        let intensity = image.intensities();
        let stride = w + 1;
        let mut integral = vec![0.0; (h + 1) * stride];
        for r in 0..h {
            let mut row = 0.0;
            for c in 0..w {
                row += intensity[r * w + c];
                integral[(r + 1) * stride + c + 1] = integral[r * stride + c + 1] + row;
            }
        }
        let mut best = f64::NEG_INFINITY;
        for r in 0..=h - k {
            for c in 0..=w - k {
                let sum = integral[(r + k) * stride + c + k] - integral[r * stride + c + k]
                    - integral[(r + k) * stride + c]
                    + integral[r * stride + c];
                best = best.max(sum);
            }
        }
        Ok(best / (k * k) as f64)
    }
}

impl Oracle for BlobOracle {
    fn classify(&self, image: &Image) -> Result<Prediction, OracleError> {
        self.counter.add(1);
        let mean = self.max_window_mean(image)?.clamp(0.0, 1.0);
        // Integral-image round-off must not flip a saturated window.
        let positive = mean + 1e-12 >= self.params.threshold;
        Ok(if positive {
            Prediction::new(self.params.positive_label.clone(), mean)
        } else {
            Prediction::new(self.params.negative_label.clone(), 1.0 - mean)
        })
    }

    fn query_count(&self) -> u64 {
        self.counter.get()
    }
}
