//! Several changepoints: kernel segmentation, isolation and per-window localization.
//!
//! Kernel changepoint detection picks `K` split points minimising
//! `Σ_seg [ Σ_{i∈seg} k(X_i,X_i) − |seg|⁻¹ Σ_{i,j∈seg} k(X_i,X_j) ]` with the
//! Gaussian kernel `k(z,z') = exp(−‖z − z'‖²/(2σ²))`. The estimates are then
//! isolated by midpoints `t_k = ⌊(ξ̂_k + ξ̂_{k−1})/2⌋` and the single-change
//! procedure runs on each window `t_k+1 ..= t_{k+1}`. The resulting sets are
//! heuristic: they hold only when segmentation has separated the changes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combine::{localize, ConfidenceSet, Localization, LocalizeConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::scores::ScoreFamily;
use crate::testing::NullTableCache;

/// The smallest window the single-change procedure is run on.
pub const MIN_WINDOW: usize = 4;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of the `n(n−1)/2` pairwise distances `‖X_i − X_j‖`.
pub fn median_heuristic(data: &Dataset) -> Result<f64> {
    let n = data.len();
    let mut d: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| squared_distance(data.get(i), data.get(j)).sqrt())
        .collect();
    let m = d.len();
    let median = if m % 2 == 1 {
        *d.select_nth_unstable_by(m / 2, f64::total_cmp).1
    } else {
        let (lower, upper, _) = d.select_nth_unstable_by(m / 2, f64::total_cmp);
        let hi = *upper;
        let lo = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    if median > 0.0 {
        return Ok(median);
    }
    if d.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateData("all observations are identical".into()));
    }
    Err(Error::DegenerateData(
        "median pairwise distance is zero; set the bandwidth explicitly".into(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidth: f64,
}

impl KernelConfig {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::config(format!("kernel bandwidth must be positive, got {bandwidth}")));
        }
        Ok(KernelConfig { bandwidth })
    }

    pub fn median_heuristic(data: &Dataset) -> Result<Self> {
        Self::new(median_heuristic(data)?)
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        (-squared_distance(a, b) / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

/// Segment costs from 2-D prefix sums of the Gram matrix.
struct KernelCost {
    n: usize,
    /// `prefix[i·(n+1) + j] = Σ_{u<i, v<j} k(X_u, X_v)`.
    prefix: Vec<f64>,
}

impl KernelCost {
    fn new(data: &Dataset, kcfg: &KernelConfig) -> Self {
        let n = data.len();
        let w = n + 1;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|u| (0..n).map(|v| kcfg.kernel(data.get(u), data.get(v))).collect())
            .collect();
        let mut prefix = vec![0.0; w * w];
        for i in 1..=n {
            let mut row_sum = 0.0;
            for j in 1..=n {
                row_sum += rows[i - 1][j - 1];
                prefix[i * w + j] = prefix[(i - 1) * w + j] + row_sum;
            }
        }
        KernelCost { n, prefix }
    }

    /// Cost of the 0-based half-open segment `[a, b)`; the kernel diagonal is 1.
    fn cost(&self, a: usize, b: usize) -> f64 {
        let w = self.n + 1;
        let p = &self.prefix;
        let s = p[b * w + b] - p[a * w + b] - p[b * w + a] + p[a * w + a];
        let len = (b - a) as f64;
        len - s / len
    }
}

/// `K` estimated changepoints for a sequence of length `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub n: usize,
    /// Strictly increasing, in `[1, n)`: each is the last index of a segment.
    pub estimates: Vec<usize>,
    /// Kernel least-squares cost of the segmentation.
    pub cost: f64,
}

impl Segmentation {
    pub fn k(&self) -> usize {
        self.estimates.len()
    }

    /// `t_1..t_{K+1}` with `t_k = ⌊(ξ̂_k + ξ̂_{k−1})/2⌋`, `ξ̂_0 = 0`, `ξ̂_{K+1} = n`.
    pub fn midpoints(&self) -> Vec<usize> {
        let mut bounds = Vec::with_capacity(self.k() + 2);
        bounds.push(0);
        bounds.extend(&self.estimates);
        bounds.push(self.n);
        bounds.windows(2).map(|w| (w[0] + w[1]) / 2).collect()
    }

    /// Window `k` (1-based) as the inclusive global index range `t_k+1 ..= t_{k+1}`.
    pub fn windows(&self) -> Vec<(usize, usize)> {
        self.midpoints().windows(2).map(|w| (w[0] + 1, w[1])).collect()
    }
}

/// Optimal costs `cost[k][j]` of covering the first `j` points with `k + 1`
/// segments, and the split points achieving them.
fn dynamic_program(costs: &KernelCost, max_k: usize) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let n = costs.n;
    let mut best = vec![vec![f64::INFINITY; n + 1]; max_k + 1];
    let mut arg = vec![vec![0usize; n + 1]; max_k + 1];
    for j in 1..=n {
        best[0][j] = costs.cost(0, j);
    }
    for k in 1..=max_k {
        let prev = &best[k - 1];
        let row: Vec<(f64, usize)> = (0..=n)
            .into_par_iter()
            .map(|j| {
                let mut b = (f64::INFINITY, 0);
                for i in k..j {
                    let c = prev[i] + costs.cost(i, j);
                    if c < b.0 {
                        b = (c, i);
                    }
                }
                b
            })
            .collect();
        for (j, (c, i)) in row.into_iter().enumerate() {
            best[k][j] = c;
            arg[k][j] = i;
        }
    }
    (best, arg)
}

fn backtrack(arg: &[Vec<usize>], k: usize, n: usize) -> Vec<usize> {
    let mut est = Vec::with_capacity(k);
    let mut j = n;
    for level in (1..=k).rev() {
        j = arg[level][j];
        est.push(j);
    }
    est.reverse();
    est
}

/// Exactly `K` changepoints by dynamic programming; requires `1 <= K <= n/4`.
pub fn kcpd_segment(data: &Dataset, k: usize, kcfg: &KernelConfig) -> Result<Segmentation> {
    let n = data.len();
    if k < 1 || k > n / 4 {
        return Err(Error::config(format!("K must lie in [1, n/4] = [1, {}], got {k}", n / 4)));
    }
    let costs = KernelCost::new(data, kcfg);
    let (best, arg) = dynamic_program(&costs, k);
    Ok(Segmentation {
        n,
        estimates: backtrack(&arg, k, n),
        cost: best[k][n],
    })
}

/// Number of changepoints chosen by minimising `cost_K + penalty·K` over `0..=max_k`.
pub fn kcpd_penalized(data: &Dataset, max_k: usize, penalty: f64, kcfg: &KernelConfig) -> Result<Segmentation> {
    let n = data.len();
    if max_k > n / 4 {
        return Err(Error::config(format!("max K must be at most n/4 = {}, got {max_k}", n / 4)));
    }
    if !(penalty >= 0.0) {
        return Err(Error::config(format!("penalty must be nonnegative, got {penalty}")));
    }
    let costs = KernelCost::new(data, kcfg);
    let (best, arg) = dynamic_program(&costs, max_k);
    let mut k_best = 0;
    for k in 1..=max_k {
        if best[k][n] + penalty * (k as f64) < best[k_best][n] + penalty * (k_best as f64) {
            k_best = k;
        }
    }
    Ok(Segmentation {
        n,
        estimates: backtrack(&arg, k_best, n),
        cost: best[k_best][n],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiConfig {
    pub k: usize,
    /// `None` uses the median heuristic.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Per-window settings; `known_change` is forced on.
    pub localize: LocalizeConfig,
    pub null_size: usize,
    pub null_seed: u64,
}

/// One isolated changepoint.
#[derive(Debug, Clone)]
pub struct WindowLocalization {
    /// 1-based changepoint index `k`.
    pub index: usize,
    /// Global inclusive range of the window.
    pub start: usize,
    pub end: usize,
    /// Segmentation estimate `ξ̂_k` (global).
    pub estimate: usize,
    /// Result in window-local coordinates.
    pub local: Localization,
    /// The confidence set in global coordinates.
    pub set: ConfidenceSet,
}

#[derive(Debug, Clone)]
pub struct MultiLocalization {
    pub segmentation: Segmentation,
    pub windows: Vec<WindowLocalization>,
}

/// Builds the score family for window `k` (1-based) from the window's data.
pub type FamilyFactory<'a> = dyn Fn(usize, &Dataset) -> Result<Box<dyn ScoreFamily>> + Sync + 'a;

/// Segments with [`kcpd_segment`] and localizes each isolated changepoint.
///
/// Window `k` uses stream `rng.child("window").indexed(k)` and the null table
/// of the full series length from `tables`, restricted to the window.
pub fn multi_localize(
    data: &Dataset,
    cfg: &MultiConfig,
    family_for: &FamilyFactory<'_>,
    rng: &RandomStream,
    tables: &NullTableCache,
) -> Result<MultiLocalization> {
    let kcfg = match cfg.bandwidth {
        Some(b) => KernelConfig::new(b)?,
        None => KernelConfig::median_heuristic(data)?,
    };
    let segmentation = kcpd_segment(data, cfg.k, &kcfg)?;
    localize_windows(data, segmentation, cfg, family_for, rng, tables)
}

/// Per-window localization for a given segmentation.
pub fn localize_windows(
    data: &Dataset,
    segmentation: Segmentation,
    cfg: &MultiConfig,
    family_for: &FamilyFactory<'_>,
    rng: &RandomStream,
    tables: &NullTableCache,
) -> Result<MultiLocalization> {
    let local_cfg = LocalizeConfig {
        known_change: true,
        ..cfg.localize.clone()
    };
    let windows = segmentation.windows();
    for (i, &(start, end)) in windows.iter().enumerate() {
        let len = (end + 1).saturating_sub(start);
        if len < MIN_WINDOW {
            return Err(Error::Isolation {
                index: i + 1,
                start,
                end,
                len,
            });
        }
    }
    // One table for the whole series serves every window (see
    // `NullQuantileTable::restricted`), instead of one simulation per length.
    let table = if local_cfg.method.needs_table() {
        Some(tables.get(data.len(), cfg.null_size, cfg.null_seed)?)
    } else {
        None
    };
    let results = windows
        .par_iter()
        .enumerate()
        .map(|(i, &(start, end))| {
            let k = i + 1;
            let window = data.slice(start - 1..end)?;
            let family = family_for(k, &window)?;
            let table = table.as_ref().map(|t| t.restricted(window.len())).transpose()?;
            let local = localize(
                &window,
                family.as_ref(),
                &local_cfg,
                &rng.child("window").indexed(k as u64),
                table.as_ref(),
            )?;
            let set = local.set.shifted(start - 1);
            Ok(WindowLocalization {
                index: k,
                start,
                end,
                estimate: segmentation.estimates[i],
                local,
                set,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiLocalization {
        segmentation,
        windows: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{DensityPair, Gaussian, OracleLrFamily};
    use crate::testing::TestMethod;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn scalar(v: &[f64]) -> Dataset {
        Dataset::scalar(v.to_vec()).unwrap()
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_heuristic(&scalar(&[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(median_heuristic(&scalar(&[0.0, 1.0, 2.0])).unwrap(), 1.0);
        // Distances {1, 3, 4, 2, 3, 1}: middle two of 1,1,2,3,3,4 are 2 and 3.
        assert_eq!(median_heuristic(&scalar(&[0.0, 1.0, 4.0, 3.0])).unwrap(), 2.5);
        assert!(matches!(
            median_heuristic(&scalar(&[2.0, 2.0, 2.0])),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn median_of_normals() {
        // |N(0,2)| has median √2 · Φ⁻¹(0.75) ≈ 0.9539.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = median_heuristic(&scalar(&v)).unwrap();
        assert!((m - 0.9539).abs() < 0.1, "{m}");
    }

    #[test]
    fn perfect_separation() {
        let data = scalar(&[0.0, 0.0, 0.0, 10.0, 10.0, 10.0]);
        let s = kcpd_segment(&data, 1, &KernelConfig::new(1.0).unwrap()).unwrap();
        assert_eq!(s.estimates, vec![3]);
        assert!(s.cost.abs() < 1e-9);
        assert!(kcpd_segment(&data, 2, &KernelConfig::new(1.0).unwrap()).is_err());
        assert!(kcpd_segment(&data, 0, &KernelConfig::new(1.0).unwrap()).is_err());
    }

    fn direct_cost(data: &Dataset, kcfg: &KernelConfig, a: usize, b: usize) -> f64 {
        let len = (b - a) as f64;
        let mut s = 0.0;
        for i in a..b {
            for j in a..b {
                s += kcfg.kernel(data.get(i), data.get(j));
            }
        }
        len - s / len
    }

    fn exhaustive(data: &Dataset, kcfg: &KernelConfig, k: usize) -> f64 {
        let n = data.len();
        fn rec(data: &Dataset, kcfg: &KernelConfig, start: usize, left: usize, n: usize) -> f64 {
            if left == 0 {
                return direct_cost(data, kcfg, start, n);
            }
            (start + 1..n)
                .filter(|&c| n - c >= left)
                .map(|c| direct_cost(data, kcfg, start, c) + rec(data, kcfg, c, left - 1, n))
                .fold(f64::INFINITY, f64::min)
        }
        rec(data, kcfg, 0, k, n)
    }

    #[test]
    fn dp_matches_exhaustive_k1_up_to_50() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [4usize, 9, 23, 50] {
            let v: Vec<f64> = (0..n)
                .map(|i| Distribution::<f64>::sample(&StandardNormal, &mut rng) + if i >= n / 3 { 2.0 } else { 0.0 })
                .collect();
            let data = scalar(&v);
            let kcfg = KernelConfig::median_heuristic(&data).unwrap();
            let s = kcpd_segment(&data, 1, &kcfg).unwrap();
            let brute = (1..n)
                .map(|c| (direct_cost(&data, &kcfg, 0, c) + direct_cost(&data, &kcfg, c, n), c))
                .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
            assert_eq!(s.estimates, vec![brute.1]);
            assert!((s.cost - brute.0).abs() < 1e-9);
        }
    }

    #[test]
    fn penalized_picks_true_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..120)
            .map(|i| Distribution::<f64>::sample(&StandardNormal, &mut rng) + if (40..80).contains(&i) { 5.0 } else { 0.0 })
            .collect();
        let data = scalar(&v);
        let kcfg = KernelConfig::median_heuristic(&data).unwrap();
        let s = kcpd_penalized(&data, 5, 3.0, &kcfg).unwrap();
        assert_eq!(s.k(), 2);
        let zero = kcpd_penalized(&data, 5, 1e9, &kcfg).unwrap();
        assert_eq!(zero.k(), 0);
    }

    #[test]
    fn midpoints_and_windows() {
        let s = Segmentation {
            n: 100,
            estimates: vec![20, 50, 81],
            cost: 0.0,
        };
        assert_eq!(s.midpoints(), vec![10, 35, 65, 90]);
        assert_eq!(s.windows(), vec![(11, 35), (36, 65), (66, 90)]);
        for (w, &e) in s.windows().iter().zip(&s.estimates) {
            assert!(w.0 <= e && e <= w.1);
        }
    }

    #[test]
    fn short_window_is_isolation_error() {
        let data = scalar(&(0..12).map(|i| i as f64).collect::<Vec<_>>());
        let seg = Segmentation {
            n: 12,
            estimates: vec![2, 4, 9],
            cost: 0.0,
        };
        let cfg = MultiConfig {
            k: 3,
            bandwidth: None,
            localize: LocalizeConfig {
                method: TestMethod::Asymptotic { fast: false },
                ..LocalizeConfig::default()
            },
            null_size: 10,
            null_seed: 0,
        };
        let family = |_: usize, _: &Dataset| -> Result<Box<dyn ScoreFamily>> { Ok(Box::new(crate::scores::IdentityFamily)) };
        let err = localize_windows(&data, seg, &cfg, &family, &RandomStream::new(0, "run"), &NullTableCache::in_memory())
            .unwrap_err();
        assert!(matches!(err, Error::Isolation { index: 1, start: 2, end: 3, len: 2 }), "{err}");
    }

    #[test]
    fn single_change_reduces_to_localize() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..80)
            .map(|i| Normal::new(if i < 30 { -1.5 } else { 1.5 }, 1.0).unwrap().sample(&mut rng))
            .collect();
        let data = scalar(&v);
        let cfg = MultiConfig {
            k: 1,
            bandwidth: None,
            localize: LocalizeConfig {
                method: TestMethod::Asymptotic { fast: false },
                ..LocalizeConfig::default()
            },
            null_size: 10,
            null_seed: 0,
        };
        let family = |_: usize, _: &Dataset| -> Result<Box<dyn ScoreFamily>> {
            Ok(Box::new(OracleLrFamily::new(DensityPair::new(
                Gaussian::new(-1.5, 1.0),
                Gaussian::new(1.5, 1.0),
            ))))
        };
        let rng = RandomStream::new(5, "run");
        let out = multi_localize(&data, &cfg, &family, &rng, &NullTableCache::in_memory()).unwrap();
        let w = &out.windows[0];
        let (start, end) = (w.start, w.end);
        assert_eq!(start, out.segmentation.estimates[0] / 2 + 1);
        assert_eq!(end, (out.segmentation.estimates[0] + 80) / 2);
        let window = data.slice(start - 1..end).unwrap();
        let direct = localize(
            &window,
            family(1, &window).unwrap().as_ref(),
            &LocalizeConfig {
                known_change: true,
                ..cfg.localize.clone()
            },
            &rng.child("window").indexed(1),
            None,
        )
        .unwrap();
        assert_eq!(w.set, direct.set.shifted(start - 1));
        assert!(w.set.contains(30));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn dp_optimal_small(raw in prop::collection::vec(-3i32..4, 8..20), k in 1usize..=3, sigma in 0.3f64..3.0) {
            let data = scalar(&raw.iter().map(|&v| v as f64).collect::<Vec<_>>());
            prop_assume!(k <= data.len() / 4);
            let kcfg = KernelConfig::new(sigma).unwrap();
            let s = kcpd_segment(&data, k, &kcfg).unwrap();
            prop_assert!((s.cost - exhaustive(&data, &kcfg, k)).abs() < 1e-8);
            prop_assert!(s.estimates.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.estimates.iter().all(|&e| e >= 1 && e < data.len()));
        }

        #[test]
        fn segment_cost_permutation_invariant(raw in prop::collection::vec(-5.0f64..5.0, 2..25), seed in 0u64..100) {
            let kcfg = KernelConfig::new(1.3).unwrap();
            let data = scalar(&raw);
            let mut order: Vec<usize> = (0..raw.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled = data.permuted(&order);
            let a = KernelCost::new(&data, &kcfg).cost(0, raw.len());
            let b = KernelCost::new(&shuffled, &kcfg).cost(0, raw.len());
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dp_optimal_n40_k3() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v: Vec<f64> = (0..40)
            .map(|i| Distribution::<f64>::sample(&StandardNormal, &mut rng) + [0.0, 2.0, -1.0, 1.0][i / 10])
            .collect();
        let data = scalar(&v);
        let kcfg = KernelConfig::median_heuristic(&data).unwrap();
        let s = kcpd_segment(&data, 3, &kcfg).unwrap();
        assert!((s.cost - exhaustive(&data, &kcfg, 3)).abs() < 1e-8);
    }
}
