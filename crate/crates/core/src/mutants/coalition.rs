use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{stream_rng, Stream};
use super::MutantError;

/// Distribution of the random coalitions after the two forced ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoalitionScheme {
    /// Every segment independently on with probability 1/2.
    Uniform,
    /// Coalitions drawn with probability proportional to the Shapley kernel
    /// `(k−1) / (C(k,z)·z·(k−z))`: the size `z ∈ 1..k` is drawn with weight
    /// `C(k,z)` times the kernel, i.e. `(k−1) / (z·(k−z))`, and members are
    /// chosen uniformly without replacement.
    ShapleyKernel,
}

/// `n` coalitions over `k` segments. The first two are always all-off and
/// all-on; coalition `i` depends only on `(seed, i)`.
pub fn coalition_samples(
    k: usize,
    n: usize,
    seed: u64,
    scheme: CoalitionScheme,
) -> Result<Vec<Vec<bool>>, MutantError> {
    if k == 0 || n == 0 {
        return Err(MutantError::InvalidParams(format!(
            "need k ≥ 1 and n ≥ 1, got k={k}, n={n}"
        )));
    }
    Ok((0..n).map(|i| coalition(k, i, seed, scheme)).collect())
}

pub(crate) fn coalition(k: usize, index: usize, seed: u64, scheme: CoalitionScheme) -> Vec<bool> {
    match index {
        0 => return vec![false; k],
        1 => return vec![true; k],
        _ => {}
    }
    let mut rng = stream_rng(seed, Stream::Coalitions, index as u64);
    if scheme == CoalitionScheme::Uniform || k < 2 {
        return (0..k).map(|_| rng.random::<bool>()).collect();
    }
    let size = kernel_size(k, rng.random::<f64>());
    let mut bits = vec![false; k];
    for i in sample(&mut rng, k, size) {
        bits[i] = true;
    }
    bits
}

/// Inverse-CDF draw of a coalition size from the kernel size distribution.
fn kernel_size(k: usize, u: f64) -> usize {
    let weight = |z: usize| (k - 1) as f64 / (z * (k - z)) as f64;
    let total: f64 = (1..k).map(weight).sum();
    let mut acc = 0.0;
    for z in 1..k {
        acc += weight(z) / total;
        if u < acc {
            return z;
        }
    }
    k - 1
}
