use rand_distr::{Cauchy, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::scores::{DensityPair, Gaussian, IdentityFamily, KdeFamily, OracleLrFamily, ScoreFamily};

/// Data-generating process of a synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionSpec {
    /// `N(−δ, 1)` up to `ξ`, `N(δ, 1)` after.
    GaussianMean { delta: f64 },
    /// `Cauchy(−δ, 1)` up to `ξ`, `Cauchy(δ, 1)` after.
    CauchyLocation { delta: f64 },
    /// No change: every point from `N(−δ, 1)`; `δ` only informs the oracle score.
    None {
        #[serde(default = "one")]
        delta: f64,
    },
    /// Unit-variance Gaussian segments with means `means[k]` on `(ξ_k, ξ_{k+1}]`.
    Piecewise { means: Vec<f64>, changepoints: Vec<usize> },
}

fn one() -> f64 {
    1.0
}

/// Draws `n` points with a change after index `ξ` (`ξ = n`: no change).
///
/// `ξ` is ignored by [`DistributionSpec::None`] and
/// [`DistributionSpec::Piecewise`], which carry their own change structure.
pub fn generate(spec: &DistributionSpec, n: usize, xi: usize, rng: &RandomStream) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::config(format!("n must be at least 2, got {n}")));
    }
    if xi < 1 || xi > n {
        return Err(Error::config(format!("changepoint {xi} outside [1, {n}]")));
    }
    let mut g = rng.rng();
    let values: Vec<f64> = match spec {
        DistributionSpec::GaussianMean { delta } => {
            let pre = Normal::new(-delta, 1.0).map_err(|e| Error::config(e.to_string()))?;
            let post = Normal::new(*delta, 1.0).map_err(|e| Error::config(e.to_string()))?;
            (1..=n)
                .map(|t| if t <= xi { pre.sample(&mut g) } else { post.sample(&mut g) })
                .collect()
        }
        DistributionSpec::CauchyLocation { delta } => {
            let pre = Cauchy::new(-delta, 1.0).map_err(|e| Error::config(e.to_string()))?;
            let post = Cauchy::new(*delta, 1.0).map_err(|e| Error::config(e.to_string()))?;
            (1..=n)
                .map(|t| if t <= xi { pre.sample(&mut g) } else { post.sample(&mut g) })
                .collect()
        }
        DistributionSpec::None { delta } => {
            let d = Normal::new(-delta, 1.0).map_err(|e| Error::config(e.to_string()))?;
            (0..n).map(|_| d.sample(&mut g)).collect()
        }
        DistributionSpec::Piecewise { means, changepoints } => {
            if means.len() != changepoints.len() + 1
                || changepoints.windows(2).any(|w| w[0] >= w[1])
                || changepoints.iter().any(|&c| c < 1 || c >= n)
            {
                return Err(Error::config(
                    "piecewise spec needs increasing changepoints in [1, n) and one more mean than changepoints",
                ));
            }
            let mut out = Vec::with_capacity(n);
            for t in 1..=n {
                let seg = changepoints.partition_point(|&c| c < t);
                let d = Normal::new(means[seg], 1.0).map_err(|e| Error::config(e.to_string()))?;
                out.push(d.sample(&mut g));
            }
            out
        }
    };
    Dataset::scalar(values)
}

/// Score family used by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScoreSpec {
    /// Likelihood ratio of the true pre/post distributions.
    Oracle,
    /// Gaussian likelihood ratio `N(−δ,1)` vs `N(δ,1)`, whatever the data.
    GaussianLr { delta: f64 },
    CauchyLr { delta: f64 },
    Kde,
    Identity,
}

impl ScoreSpec {
    pub fn build(&self, dist: &DistributionSpec) -> Result<Box<dyn ScoreFamily>> {
        Ok(match self {
            ScoreSpec::Oracle => match dist {
                DistributionSpec::GaussianMean { delta } | DistributionSpec::None { delta } => {
                    Box::new(OracleLrFamily::new(DensityPair::gaussian_shift(*delta)))
                }
                DistributionSpec::CauchyLocation { delta } => {
                    Box::new(OracleLrFamily::new(DensityPair::cauchy_shift(*delta)))
                }
                DistributionSpec::Piecewise { .. } => {
                    return Err(Error::config(
                        "the oracle score of a piecewise spec depends on the window; use the multi pipeline",
                    ))
                }
            },
            ScoreSpec::GaussianLr { delta } => Box::new(OracleLrFamily::new(DensityPair::gaussian_shift(*delta))),
            ScoreSpec::CauchyLr { delta } => Box::new(OracleLrFamily::new(DensityPair::cauchy_shift(*delta))),
            ScoreSpec::Kde => Box::new(KdeFamily::default()),
            ScoreSpec::Identity => Box::new(IdentityFamily),
        })
    }
}

/// Oracle family for window `k` of a piecewise Gaussian spec: `N(μ_{k−1},1)` vs `N(μ_k,1)`.
pub fn piecewise_oracle(means: &[f64], k: usize) -> Result<OracleLrFamily> {
    if k == 0 || k >= means.len() {
        return Err(Error::config(format!("window {k} has no pair of segment means")));
    }
    Ok(OracleLrFamily::new(DensityPair::new(
        Gaussian::new(means[k - 1], 1.0),
        Gaussian::new(means[k], 1.0),
    )))
}
