use std::sync::Arc;

use super::{finite, PointwiseScores, PreparedScores, ScoreFamily, DENSITY_FLOOR};
use crate::data::Dataset;
use crate::error::ScoreError;

/// A probability density on the observation space.
pub trait Density: Send + Sync + std::fmt::Debug {
    fn pdf(&self, x: &[f64]) -> f64;
}

/// Normal density, applied independently to every coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    pub fn new(mean: f64, sd: f64) -> Self {
        Gaussian { mean, sd }
    }
}

impl Density for Gaussian {
    fn pdf(&self, x: &[f64]) -> f64 {
        let norm = 1.0 / (self.sd * (2.0 * std::f64::consts::PI).sqrt());
        x.iter()
            .map(|&v| {
                let z = (v - self.mean) / self.sd;
                norm * (-0.5 * z * z).exp()
            })
            .product()
    }
}

/// Cauchy density, applied independently to every coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cauchy {
    pub location: f64,
    pub scale: f64,
}

impl Cauchy {
    pub fn new(location: f64, scale: f64) -> Self {
        Cauchy { location, scale }
    }
}

impl Density for Cauchy {
    fn pdf(&self, x: &[f64]) -> f64 {
        x.iter()
            .map(|&v| {
                let z = (v - self.location) / self.scale;
                1.0 / (std::f64::consts::PI * self.scale * (1.0 + z * z))
            })
            .product()
    }
}

/// Pre-change density `f0` and post-change density `f1`.
#[derive(Debug, Clone)]
pub struct DensityPair {
    pub f0: Arc<dyn Density>,
    pub f1: Arc<dyn Density>,
}

impl DensityPair {
    pub fn new(f0: impl Density + 'static, f1: impl Density + 'static) -> Self {
        DensityPair {
            f0: Arc::new(f0),
            f1: Arc::new(f1),
        }
    }

    /// `N(−δ, 1)` before the change, `N(δ, 1)` after.
    pub fn gaussian_shift(delta: f64) -> Self {
        Self::new(Gaussian::new(-delta, 1.0), Gaussian::new(delta, 1.0))
    }

    /// `Cauchy(−δ, 1)` before the change, `Cauchy(δ, 1)` after.
    pub fn cauchy_shift(delta: f64) -> Self {
        Self::new(Cauchy::new(-delta, 1.0), Cauchy::new(delta, 1.0))
    }
}

/// Oracle likelihood-ratio scores: `left(x) = f1(x)/f0(x)`, `right(x) = f0(x)/f1(x)`.
#[derive(Debug, Clone)]
pub struct OracleLrFamily {
    densities: DensityPair,
}

impl OracleLrFamily {
    pub fn new(densities: DensityPair) -> Self {
        OracleLrFamily { densities }
    }

    fn floored(&self, data: &Dataset, x: usize) -> Result<(f64, f64), ScoreError> {
        let obs = data.get(x);
        let f0 = finite(self.densities.f0.pdf(obs), x)?.max(DENSITY_FLOOR);
        let f1 = finite(self.densities.f1.pdf(obs), x)?.max(DENSITY_FLOOR);
        Ok((f0, f1))
    }
}

impl ScoreFamily for OracleLrFamily {
    fn name(&self) -> &'static str {
        "oracle-lr"
    }

    fn is_adaptive(&self) -> bool {
        false
    }

    fn uses_bag(&self) -> bool {
        false
    }

    fn left(&self, data: &Dataset, x: usize, _bag: &[usize], _context: &[usize]) -> Result<f64, ScoreError> {
        let (f0, f1) = self.floored(data, x)?;
        finite(f1 / f0, x)
    }

    fn right(&self, data: &Dataset, x: usize, _bag: &[usize], _context: &[usize]) -> Result<f64, ScoreError> {
        let (f0, f1) = self.floored(data, x)?;
        finite(f0 / f1, x)
    }

    fn prepare<'a>(&'a self, data: &'a Dataset) -> Result<Box<dyn PreparedScores + 'a>, ScoreError> {
        let scores = PointwiseScores::build(
            data.len(),
            |i| self.left(data, i, &[], &[]),
            |i| self.right(data, i, &[], &[]),
        )?;
        Ok(Box::new(scores))
    }
}
