//! The black-box boundary: anything that maps an [`Image`] to a
//! [`Prediction`].
//!
//! Oracles count the images submitted to them so callers can audit query
//! budgets. All implementations must be deterministic and safe to call from
//! several threads at once.

mod blob;
mod spec;
pub mod wire;

pub use blob::{blob_oracle, BlobOracle, BlobOracleParams};
pub use spec::OracleSpec;
pub use wire::{Endpoint, WireOracle};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::Image;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle unavailable: {0}")]
    Unavailable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("oracle rejected request {id}: {message}")]
    Rejected { id: u64, message: String },
    #[error("invalid oracle parameters: {0}")]
    InvalidParams(String),
    #[error("batch item {index} failed: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<OracleError>,
    },
}

impl OracleError {
    /// The underlying error with any batch wrapping removed.
    pub fn root(&self) -> &OracleError {
        match self {
            OracleError::Batch { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for transport-level failures (endpoint down, connection lost).
    pub fn is_unavailable(&self) -> bool {
        matches!(self.root(), OracleError::Unavailable(_))
    }
}

/// A classifier verdict.
///
/// When `scores` is present, `label` is its argmax (ties broken by the
/// lexicographically smallest label) and `confidence` is the label's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
}

impl Prediction {
    pub fn new(label: impl Into<String>, confidence: f64) -> Self {
        Self {
            label: label.into(),
            confidence,
            scores: None,
        }
    }

    /// Builds a prediction from a full score map. Returns `None` for an
    /// empty map.
    pub fn from_scores(scores: BTreeMap<String, f64>) -> Option<Self> {
        // BTreeMap iterates in label order, so keeping the first maximum
        // implements the lexicographic tie-break.
        let (label, confidence) = scores.iter().fold(None, |best: Option<(&String, f64)>, (l, &s)| {
            match best {
                Some((_, b)) if s <= b => best,
                _ => Some((l, s)),
            }
        })?;
        Some(Self {
            label: label.clone(),
            confidence,
            scores: Some(scores.clone()),
        })
    }

    /// Evidence for `target`.
    ///
    /// Uses the score map when present (missing labels score 0). Without
    /// scores the oracle is treated as binary: the confidence when the label
    /// matches, otherwise its complement.
    pub fn score_for(&self, target: &str) -> f64 {
        match &self.scores {
            Some(scores) => scores.get(target).copied().unwrap_or(0.0),
            None if self.label == target => self.confidence,
            None => 1.0 - self.confidence,
        }
    }

    /// Checks the score-map invariants.
    pub fn is_consistent(&self) -> bool {
        match &self.scores {
            None => true,
            Some(scores) => Prediction::from_scores(scores.clone())
                .is_some_and(|p| p.label == self.label && p.confidence == self.confidence),
        }
    }
}

pub trait Oracle: Send + Sync {
    fn classify(&self, image: &Image) -> Result<Prediction, OracleError>;

    /// Classifies every image; result `i` belongs to image `i`. The first
    /// failing index aborts the batch.
    fn classify_batch(&self, images: &[Image]) -> Result<Vec<Prediction>, OracleError> {
        let results: Vec<_> = images.par_iter().map(|im| self.classify(im)).collect();
        collect_batch(results)
    }

    /// Number of images submitted so far.
    fn query_count(&self) -> u64;
}

pub(crate) fn collect_batch(
    results: Vec<Result<Prediction, OracleError>>,
) -> Result<Vec<Prediction>, OracleError> {
    let mut out = Vec::with_capacity(results.len());
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => out.push(p),
            Err(e) => {
                return Err(OracleError::Batch {
                    index,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}

impl<T: Oracle + ?Sized> Oracle for &T {
    fn classify(&self, image: &Image) -> Result<Prediction, OracleError> {
        (**self).classify(image)
    }

    fn classify_batch(&self, images: &[Image]) -> Result<Vec<Prediction>, OracleError> {
        (**self).classify_batch(images)
    }

    fn query_count(&self) -> u64 {
        (**self).query_count()
    }
}

impl<T: Oracle + ?Sized> Oracle for Box<T> {
    fn classify(&self, image: &Image) -> Result<Prediction, OracleError> {
        (**self).classify(image)
    }

    fn classify_batch(&self, images: &[Image]) -> Result<Vec<Prediction>, OracleError> {
        (**self).classify_batch(images)
    }

    fn query_count(&self) -> u64 {
        (**self).query_count()
    }
}

/// Atomic query counter for oracle implementations.
#[derive(Debug, Default)]
pub struct QueryCounter(AtomicU64);

impl QueryCounter {
    pub fn add(&self, n: usize) {
        self.0.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Returns the same prediction for every input.
#[derive(Debug)]
pub struct ConstantOracle {
    prediction: Prediction,
    counter: QueryCounter,
}

impl ConstantOracle {
    pub fn new(label: impl Into<String>, confidence: f64) -> Self {
        Self {
            prediction: Prediction::new(label, confidence),
            counter: QueryCounter::default(),
        }
    }
}

impl Oracle for ConstantOracle {
    fn classify(&self, _image: &Image) -> Result<Prediction, OracleError> {
        self.counter.add(1);
        Ok(self.prediction.clone())
    }

    fn query_count(&self) -> u64 {
        self.counter.get()
    }
}

/// Wraps a deterministic closure as an oracle.
pub struct FnOracle<F> {
    f: F,
    counter: QueryCounter,
}

impl<F> FnOracle<F>
where
    F: Fn(&Image) -> Prediction + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self {
            f,
            counter: QueryCounter::default(),
        }
    }
}

impl<F> Oracle for FnOracle<F>
where
    F: Fn(&Image) -> Prediction + Send + Sync,
{
    fn classify(&self, image: &Image) -> Result<Prediction, OracleError> {
        self.counter.add(1);
        Ok((self.f)(image))
    }

    fn query_count(&self) -> u64 {
        self.counter.get()
    }
}

/// Forwards to another oracle while keeping a private count, so a shared
/// oracle can be audited per task.
pub struct CountingOracle<'a> {
    inner: &'a dyn Oracle,
    counter: QueryCounter,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn Oracle) -> Self {
        Self {
            inner,
            counter: QueryCounter::default(),
        }
    }
}

impl Oracle for CountingOracle<'_> {
    fn classify(&self, image: &Image) -> Result<Prediction, OracleError> {
        self.counter.add(1);
        self.inner.classify(image)
    }

    fn classify_batch(&self, images: &[Image]) -> Result<Vec<Prediction>, OracleError> {
        self.counter.add(images.len());
        self.inner.classify_batch(images)
    }

    fn query_count(&self) -> u64 {
        self.counter.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_scores_breaks_ties_lexicographically() {
        let scores: BTreeMap<String, f64> =
            [("b".to_string(), 0.4), ("a".to_string(), 0.4), ("c".to_string(), 0.2)].into();
        let p = Prediction::from_scores(scores).unwrap();
        assert_eq!(p.label, "a");
        assert_eq!(p.confidence, 0.4);
        assert!(p.is_consistent());
        assert!(Prediction::from_scores(BTreeMap::new()).is_none());
    }

    #[test]
    fn score_for_binary_complement() {
        let p = Prediction::new("no_tumor", 0.7);
        assert_eq!(p.score_for("no_tumor"), 0.7);
        assert!((p.score_for("tumor") - 0.3).abs() < 1e-12);
        let scored =
            Prediction::from_scores([("x".to_string(), 0.9), ("y".to_string(), 0.1)].into()).unwrap();
        assert_eq!(scored.score_for("y"), 0.1);
        assert_eq!(scored.score_for("z"), 0.0);
    }

    #[test]
    fn inconsistent_scores_detected() {
        let mut p =
            Prediction::from_scores([("x".to_string(), 0.9), ("y".to_string(), 0.1)].into()).unwrap();
        p.label = "y".into();
        assert!(!p.is_consistent());
    }

    #[test]
    fn counting_oracle_counts_its_own_traffic() {
        let base = ConstantOracle::new("a", 0.5);
        let img = Image::filled(2, 2, 1, 0.0);
        base.classify(&img).unwrap();
        let counted = CountingOracle::new(&base);
        counted.classify(&img).unwrap();
        counted.classify_batch(&[img.clone(), img.clone(), img]).unwrap();
        assert_eq!(counted.query_count(), 4);
        assert_eq!(base.query_count(), 5);
    }

    #[test]
    fn batch_failure_reports_first_index() {
        let oracle = FnOracle::new(|img: &Image| Prediction::new("x", img.get(0, 0, 0)));
        let imgs = vec![Image::filled(1, 1, 1, 0.1); 3];
        assert_eq!(oracle.classify_batch(&imgs).unwrap().len(), 3);
        assert!(oracle.classify_batch(&[]).unwrap().is_empty());

        let results = vec![
            Ok(Prediction::new("x", 0.0)),
            Err(OracleError::Protocol("bad".into())),
            Err(OracleError::Unavailable("down".into())),
        ];
        match collect_batch(results) {
            Err(OracleError::Batch { index, source }) => {
                assert_eq!(index, 1);
                assert!(matches!(*source, OracleError::Protocol(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
