//! Offline changepoint localization with a matrix of conformal p-values.
//!
//! Given an ordered sequence `X_1..X_n` with at most one changepoint `ξ`, the
//! procedure builds, for every candidate split `t`, sequential conformal ranks
//! of the points on each side of `t`. Under `H_0t: ξ = t` both sides are
//! exchangeable, so their ranks are i.i.d. uniform, and the Kolmogorov–Smirnov
//! distance of each side's ranks from uniform is a distribution-free test
//! statistic. The per-candidate p-values are inverted into a confidence set
//! `{t : p_t > α}` with finite-sample coverage.
//!
//! Module map:
//!
//! - [`stats`], [`rng`], [`data`]: randomized ranks, KS distances, seeded substreams, datasets.
//! - [`scores`]: score-function families (oracle likelihood ratio, KDE, classifier, identity).
//! - [`engine`]: the p-value matrix, discrepancy statistics and backward p-values.
//! - [`testing`]: empirical, asymptotic and permutation calibration of the discrepancies.
//! - [`combine`]: combining rules, confidence sets and the end-to-end [`combine::localize`].
//! - [`multi`]: kernel changepoint segmentation and per-window localization.
//! - [`experiment`]: synthetic generators, the coverage harness and the rank-power oracle.
//!
//! All indices exposed in results (candidates `t`, rows `r`) are 1-based.

pub mod combine;
pub mod data;
pub mod engine;
mod error;
pub mod experiment;
pub mod multi;
pub mod rng;
pub mod scores;
pub mod stats;
pub mod testing;

pub use data::{Dataset, UnitInterval};
pub use error::{Error, Result, ScoreError, Side};
pub use rng::RandomStream;
pub use scores::ScoreFamily;
pub use testing::{NullQuantileTable, NullTableCache, TestMethod};
pub use combine::{localize, CandidatePValues, Combiner, ConfidenceSet, LocalizeConfig, Localization, LocalizationReport};
