//! Black-box saliency explainers for image classifiers, mask extraction,
//! and the Penalized Dice Coefficient for scoring explanations against
//! expert annotations.

pub mod imaging;
pub mod mutants;
pub mod metrics;
pub mod oracle;
pub mod explain;
pub mod extract;
pub mod bench;
