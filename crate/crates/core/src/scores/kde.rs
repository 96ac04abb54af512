use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{require_scalar, PreparedScores, ScoreFamily, DENSITY_FLOOR};
use crate::data::Dataset;
use crate::error::ScoreError;

/// Gaussian-kernel bandwidth as a function of the number of fitted samples:
/// `single_sample` for one sample, otherwise `scale · m^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRule {
    pub single_sample: f64,
    pub scale: f64,
    pub exponent: f64,
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule {
            single_sample: 0.1,
            scale: 1.0,
            exponent: -0.2,
        }
    }
}

impl BandwidthRule {
    pub fn bandwidth(&self, samples: usize) -> f64 {
        if samples <= 1 {
            self.single_sample
        } else {
            self.scale * (samples as f64).powf(self.exponent)
        }
    }
}

/// Estimated likelihood ratio from kernel density estimates:
/// `f̂_context(x) / f̂_bag(x)` on both sides.
///
/// The bag estimate is the exchangeable one; the context estimate is fitted on
/// the data across the split. An empty context (the `t = n` column and the
/// backward pass) contributes a constant numerator of 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct KdeFamily {
    pub rule: BandwidthRule,
}

impl KdeFamily {
    pub fn new(rule: BandwidthRule) -> Self {
        KdeFamily { rule }
    }

    fn estimate(&self, data: &Dataset, sample: impl ExactSizeIterator<Item = usize>, x: f64) -> f64 {
        let m = sample.len();
        if m == 0 {
            return 1.0;
        }
        // Summation in sorted order keeps the estimate bitwise invariant to bag order.
        let mut values: Vec<f64> = sample.map(|i| data.value(i)).collect();
        values.sort_unstable_by(f64::total_cmp);
        kde_value(self.rule.bandwidth(m), m, values.into_iter(), x)
    }

    fn ratio(&self, data: &Dataset, x: usize, bag: &[usize], context: &[usize]) -> Result<f64, ScoreError> {
        require_scalar("kde", data)?;
        let v = data.value(x);
        let num = self.estimate(data, context.iter().copied(), v).max(DENSITY_FLOOR);
        let den = self.estimate(data, bag.iter().copied(), v).max(DENSITY_FLOOR);
        Ok(num / den)
    }
}

#[inline]
fn kde_value(h: f64, m: usize, sample: impl Iterator<Item = f64>, x: f64) -> f64 {
    let norm = 1.0 / (m as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let inv_h = 1.0 / h;
    let mut s = 0.0;
    for v in sample {
        let z = (x - v) * inv_h;
        s += (-0.5 * z * z).exp();
    }
    norm * s
}

impl ScoreFamily for KdeFamily {
    fn name(&self) -> &'static str {
        "kde"
    }

    fn is_adaptive(&self) -> bool {
        true
    }

    fn uses_bag(&self) -> bool {
        true
    }

    fn left(&self, data: &Dataset, x: usize, bag: &[usize], context: &[usize]) -> Result<f64, ScoreError> {
        self.ratio(data, x, bag, context)
    }

    fn right(&self, data: &Dataset, x: usize, bag: &[usize], context: &[usize]) -> Result<f64, ScoreError> {
        self.ratio(data, x, bag, context)
    }

    fn prepare<'a>(&'a self, data: &'a Dataset) -> Result<Box<dyn PreparedScores + 'a>, ScoreError> {
        require_scalar("kde", data)?;
        Ok(Box::new(KdeTables::build(self.rule, data.values())))
    }
}

/// Lower-triangular row `m` (1-based) holds entries `1..=m`.
#[inline]
fn tri(m: usize, k: usize) -> usize {
    m * (m - 1) / 2 + (k - 1)
}

/// Density estimates cached per (side, endpoint).
///
/// - `bag_prefix[r][j]`  = f̂ on `X_1..X_r` at `X_j`, `j <= r`
/// - `ctx_suffix[t][j]`  = f̂ on `X_{t+1}..X_n` at `X_j`, `j <= t < n`
/// - `bag_suffix[r][j]`  = f̂ on `X_r..X_n` at `X_j`, `j >= r`
/// - `ctx_prefix[t][j]`  = f̂ on `X_1..X_t` at `X_j`, `j > t >= 1`
struct KdeTables {
    n: usize,
    bag_prefix: Vec<f64>,
    ctx_suffix: Vec<f64>,
    bag_suffix: Vec<f64>,
    ctx_prefix: Vec<f64>,
}

impl KdeTables {
    fn build(rule: BandwidthRule, x: &[f64]) -> Self {
        let n = x.len();
        let fit = |lo: usize, hi: usize, at: f64| {
            let m = hi - lo;
            kde_value(rule.bandwidth(m), m, x[lo..hi].iter().copied(), at).max(DENSITY_FLOOR)
        };
        // Rows are indexed by the triangular row length m.
        let rows = |make: &(dyn Fn(usize, usize) -> f64 + Sync)| -> Vec<f64> {
            let per_row: Vec<Vec<f64>> = (1..=n)
                .into_par_iter()
                .map(|m| (1..=m).map(|k| make(m, k)).collect())
                .collect();
            per_row.concat()
        };
        // bag_prefix: row m = r, k = j.
        let bag_prefix = rows(&|r, j| fit(0, r, x[j - 1]));
        // ctx_suffix: row m = t, k = j; the t = n row is unused.
        let ctx_suffix = rows(&|t, j| if t < n { fit(t, n, x[j - 1]) } else { 1.0 });
        // bag_suffix: row m = n - r + 1, k = j - r + 1.
        let bag_suffix = rows(&|m, k| {
            let r = n - m + 1;
            fit(r - 1, n, x[r + k - 2])
        });
        // ctx_prefix: row m = n - t, k = j - t; m = n means t = 0 (unused).
        let ctx_prefix = rows(&|m, k| {
            let t = n - m;
            if t == 0 { 1.0 } else { fit(0, t, x[t + k - 1]) }
        });
        KdeTables {
            n,
            bag_prefix,
            ctx_suffix,
            bag_suffix,
            ctx_prefix,
        }
    }
}

impl PreparedScores for KdeTables {
    fn left(&self, t: usize, r: usize, j: usize) -> Result<f64, ScoreError> {
        let num = if t >= self.n { 1.0 } else { self.ctx_suffix[tri(t, j)] };
        let den = self.bag_prefix[tri(r, j)];
        Ok(num / den)
    }

    fn right(&self, t: usize, r: usize, j: usize) -> Result<f64, ScoreError> {
        let n = self.n;
        let num = if t == 0 { 1.0 } else { self.ctx_prefix[tri(n - t, j - t)] };
        let den = self.bag_suffix[tri(n - r + 1, j - r + 1)];
        Ok(num / den)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::NaiveScores;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_kernel_height() {
        let d = Dataset::scalar(vec![0.0, 5.0]).unwrap();
        let f = KdeFamily::default();
        let h = f.estimate(&d, [0usize].into_iter(), 0.0);
        assert!((h - 1.0 / (0.1 * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-12);
        assert!((h - 3.989).abs() < 1e-3);
    }

    #[test]
    fn symmetric_pair() {
        let d = Dataset::scalar(vec![-1.0, 1.0]).unwrap();
        let f = KdeFamily::default();
        let h = f.rule.bandwidth(2);
        let k = (-0.5 * (1.0 / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
        let est = f.estimate(&d, [0usize, 1].into_iter(), 0.0);
        assert!((est - k).abs() < 1e-14);
    }

    #[test]
    fn matches_standard_normal_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = Dataset::scalar(xs).unwrap();
        let f = KdeFamily::default();
        for i in 0..=40 {
            let x = -2.0 + i as f64 * 0.1;
            let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let est = f.estimate(&d, 0..1000, x);
            assert!((est - phi).abs() < 0.1, "x={x}: {est} vs {phi}");
        }
    }

    #[test]
    fn tables_match_point_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..13).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = Dataset::scalar(xs).unwrap();
        let f = KdeFamily::default();
        let fast = f.prepare(&d).unwrap();
        let slow = NaiveScores::new(&f, &d);
        let n = d.len();
        for t in 1..=n {
            for r in 1..=t {
                for j in 1..=r {
                    let (a, b) = (fast.left(t, r, j).unwrap(), slow.left(t, r, j).unwrap());
                    assert!((a - b).abs() <= 1e-12 * b.abs(), "left t={t} r={r} j={j}: {a} vs {b}");
                }
            }
        }
        for t in 0..n {
            for r in t + 1..=n {
                for j in r..=n {
                    let (a, b) = (fast.right(t, r, j).unwrap(), slow.right(t, r, j).unwrap());
                    assert!((a - b).abs() <= 1e-12 * b.abs(), "right t={t} r={r} j={j}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn rejects_vectors() {
        let d = Dataset::from_rows(2, vec![0.0; 6]).unwrap();
        assert!(matches!(
            KdeFamily::default().prepare(&d),
            Err(ScoreError::UnsupportedDimension { .. })
        ));
    }
}
