//! Score-function families.
//!
//! A family supplies a left score `s⁽⁰⁾(x; ⟦bag⟧, context)` used on the block
//! before a candidate split and a right score `s⁽¹⁾` used after it. The bag
//! must be used exchangeably; the context (the ordered data on the other side
//! of the split) may be used arbitrarily. Families that never read the context
//! are *non-adaptive*, which makes the left and right p-values independent.
//!
//! Point-level evaluation takes observation indices into a [`Dataset`]. The
//! engine instead asks for a [`PreparedScores`] view that answers
//! `κ⁽ᵗ⁾_{rj}` lookups for one dataset, typically from precomputed tables.

mod classifier;
mod identity;
mod kde;
mod oracle;

pub use classifier::{BinaryClassifierFamily, ClassProbTable, ClassifierFamily};
pub use identity::IdentityFamily;
pub use kde::{BandwidthRule, KdeFamily};
pub use oracle::{Cauchy, Density, DensityPair, Gaussian, OracleLrFamily};

use crate::data::Dataset;
use crate::error::ScoreError;

/// Densities and density estimates are floored here before any division.
pub const DENSITY_FLOOR: f64 = 1e-300;

pub trait ScoreFamily: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether either score reads its context argument.
    fn is_adaptive(&self) -> bool;

    /// Whether either score reads its bag argument. Bag-free families score
    /// each point on its own, which enables sequential-rank shortcuts.
    fn uses_bag(&self) -> bool;

    /// Left score of observation `x` (0-based) against `bag` and `context`.
    fn left(&self, data: &Dataset, x: usize, bag: &[usize], context: &[usize]) -> Result<f64, ScoreError>;

    /// Right score of observation `x` (0-based) against `bag` and `context`.
    fn right(&self, data: &Dataset, x: usize, bag: &[usize], context: &[usize]) -> Result<f64, ScoreError>;

    /// Binds the family to one dataset for matrix construction.
    fn prepare<'a>(&'a self, data: &'a Dataset) -> Result<Box<dyn PreparedScores + 'a>, ScoreError>;
}

/// Score lookups for a bound dataset; all indices are 1-based.
///
/// - `left(t, r, j)`: point `X_j` (`j <= r <= t`), bag `⟦X_1..X_r⟧`, context `(X_{t+1}..X_n)`.
/// - `right(t, r, j)`: point `X_j` (`t < r <= j`), bag `⟦X_r..X_n⟧`, context `(X_1..X_t)`.
///
/// Non-adaptive families must ignore `t`; bag-free families must ignore `r`.
pub trait PreparedScores: Sync {
    fn left(&self, t: usize, r: usize, j: usize) -> Result<f64, ScoreError>;
    fn right(&self, t: usize, r: usize, j: usize) -> Result<f64, ScoreError>;
}

/// Evaluates every lookup through the point-level functions.
///
/// Slow (allocates the bag and context per call); the reference path that the
/// specialised implementations are tested against.
pub struct NaiveScores<'a, F: ?Sized> {
    family: &'a F,
    data: &'a Dataset,
}

impl<'a, F: ScoreFamily + ?Sized> NaiveScores<'a, F> {
    pub fn new(family: &'a F, data: &'a Dataset) -> Self {
        NaiveScores { family, data }
    }
}

impl<F: ScoreFamily + ?Sized> PreparedScores for NaiveScores<'_, F> {
    fn left(&self, t: usize, r: usize, j: usize) -> Result<f64, ScoreError> {
        let n = self.data.len();
        let bag: Vec<usize> = (0..r).collect();
        let ctx: Vec<usize> = (t..n).collect();
        self.family.left(self.data, j - 1, &bag, &ctx)
    }

    fn right(&self, t: usize, r: usize, j: usize) -> Result<f64, ScoreError> {
        let n = self.data.len();
        let bag: Vec<usize> = (r - 1..n).collect();
        let ctx: Vec<usize> = (0..t).collect();
        self.family.right(self.data, j - 1, &bag, &ctx)
    }
}

/// Swaps the left and right scores of a family.
///
/// Running the engine with `Mirrored(f)` on reversed data reproduces the
/// reflected matrix of `f` on the original data.
pub struct Mirrored<F>(pub F);

impl<F: ScoreFamily> ScoreFamily for Mirrored<F> {
    fn name(&self) -> &'static str {
        "mirrored"
    }

    fn is_adaptive(&self) -> bool {
        self.0.is_adaptive()
    }

    fn uses_bag(&self) -> bool {
        self.0.uses_bag()
    }

    fn left(&self, data: &Dataset, x: usize, bag: &[usize], context: &[usize]) -> Result<f64, ScoreError> {
        self.0.right(data, x, bag, context)
    }

    fn right(&self, data: &Dataset, x: usize, bag: &[usize], context: &[usize]) -> Result<f64, ScoreError> {
        self.0.left(data, x, bag, context)
    }

    fn prepare<'a>(&'a self, data: &'a Dataset) -> Result<Box<dyn PreparedScores + 'a>, ScoreError> {
        Ok(Box::new(NaiveScores::new(self, data)))
    }
}

pub(crate) fn require_scalar(family: &'static str, data: &Dataset) -> Result<(), ScoreError> {
    if data.dim() != 1 {
        return Err(ScoreError::UnsupportedDimension {
            family,
            dim: data.dim(),
        });
    }
    Ok(())
}

pub(crate) fn finite(value: f64, index: usize) -> Result<f64, ScoreError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ScoreError::NonFinite { index })
    }
}

/// Pointwise scores precomputed once per dataset (0-based storage).
pub(crate) struct PointwiseScores {
    left: Vec<f64>,
    right: Vec<f64>,
}

impl PointwiseScores {
    pub(crate) fn build(
        n: usize,
        mut left: impl FnMut(usize) -> Result<f64, ScoreError>,
        mut right: impl FnMut(usize) -> Result<f64, ScoreError>,
    ) -> Result<Self, ScoreError> {
        let l = (0..n).map(&mut left).collect::<Result<Vec<_>, _>>()?;
        let r = (0..n).map(&mut right).collect::<Result<Vec<_>, _>>()?;
        Ok(PointwiseScores { left: l, right: r })
    }
}

impl PreparedScores for PointwiseScores {
    fn left(&self, _t: usize, _r: usize, j: usize) -> Result<f64, ScoreError> {
        Ok(self.left[j - 1])
    }

    fn right(&self, _t: usize, _r: usize, j: usize) -> Result<f64, ScoreError> {
        Ok(self.right[j - 1])
    }
}
