//! Shared fixtures for the criterion benchmarks.

use mcp_core::experiment::{generate, DistributionSpec};
use mcp_core::{Dataset, RandomStream};

/// Gaussian mean shift `N(−1, 1) → N(1, 1)` at `2n/5`.
pub fn gaussian_series(n: usize, seed: u64) -> Dataset {
    generate(&DistributionSpec::GaussianMean { delta: 1.0 }, n, 2 * n / 5, &RandomStream::new(seed, "bench"))
        .expect("valid gaussian spec")
}

/// Piecewise-constant means with equally spaced changes.
pub fn piecewise_series(n: usize, means: &[f64], seed: u64) -> Dataset {
    let k = means.len() - 1;
    let changepoints = (1..=k).map(|i| i * n / (k + 1)).collect();
    let spec = DistributionSpec::Piecewise {
        means: means.to_vec(),
        changepoints,
    };
    generate(&spec, n, n, &RandomStream::new(seed, "bench")).expect("valid piecewise spec")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_requested_length() {
        assert_eq!(gaussian_series(50, 1).len(), 50);
        assert_eq!(piecewise_series(90, &[0.0, 2.0, -1.0], 1).len(), 90);
    }
}
