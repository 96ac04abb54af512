use super::{require_scalar, PointwiseScores, PreparedScores, ScoreFamily};
use crate::data::Dataset;
use crate::error::ScoreError;

/// `left(x) = x`, `right(x) = −x`.
///
/// The right score is negated so that both sides respond to the same direction
/// of change; only the ordering of scores matters.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFamily;

impl ScoreFamily for IdentityFamily {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn is_adaptive(&self) -> bool {
        false
    }

    fn uses_bag(&self) -> bool {
        false
    }

    fn left(&self, data: &Dataset, x: usize, _bag: &[usize], _context: &[usize]) -> Result<f64, ScoreError> {
        require_scalar("identity", data)?;
        Ok(data.value(x))
    }

    fn right(&self, data: &Dataset, x: usize, _bag: &[usize], _context: &[usize]) -> Result<f64, ScoreError> {
        require_scalar("identity", data)?;
        Ok(-data.value(x))
    }

    fn prepare<'a>(&'a self, data: &'a Dataset) -> Result<Box<dyn PreparedScores + 'a>, ScoreError> {
        require_scalar("identity", data)?;
        let scores = PointwiseScores::build(data.len(), |i| Ok(data.value(i)), |i| Ok(-data.value(i)))?;
        Ok(Box::new(scores))
    }
}
