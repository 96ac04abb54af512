//! Randomized ranks, Kolmogorov–Smirnov distances and the Kolmogorov law.

use crate::error::{Error, Result};

/// Series terms below this magnitude are dropped.
const SERIES_TOL: f64 = 1e-12;

/// Below this argument the dual (Jacobi theta) form of the Kolmogorov series
/// converges faster than the alternating form.
const DUAL_SERIES_BELOW: f64 = 1.18;

/// Randomized rank of `scores[target]`:
/// `(#{j : κ_j > κ_target} + θ · #{j : κ_j = κ_target}) / m`, self-tie included.
pub fn randomized_rank(scores: &[f64], target: usize, theta: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::domain("randomized rank of an empty score list"));
    }
    let pivot = *scores
        .get(target)
        .ok_or_else(|| Error::domain(format!("target {target} out of range for {} scores", scores.len())))?;
    let (greater, equal) = rank_counts(scores, pivot);
    Ok(rank_from_counts(greater, equal, scores.len(), theta))
}

/// Counts of scores strictly above and equal to `pivot`.
#[inline]
pub(crate) fn rank_counts(scores: &[f64], pivot: f64) -> (usize, usize) {
    let mut greater = 0;
    let mut equal = 0;
    for &s in scores {
        if s > pivot {
            greater += 1;
        } else if s == pivot {
            equal += 1;
        }
    }
    (greater, equal)
}

/// Single arithmetic path for every randomized rank, so that the shared,
/// sorted and naive evaluation strategies agree bit for bit.
#[inline]
pub(crate) fn rank_from_counts(greater: usize, equal: usize, m: usize, theta: f64) -> f64 {
    (greater as f64 + theta * equal as f64) / m as f64
}

/// `sup_z |F̂(z) − z|` for the empirical CDF of `pvals` against `Unif(0, 1)`.
pub fn ks_uniform_distance(pvals: &[f64]) -> Result<f64> {
    if pvals.is_empty() {
        return Err(Error::domain("KS distance of an empty sample"));
    }
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::domain(format!("p-value {p} is outside [0, 1]")));
    }
    let mut sorted = pvals.to_vec();
    Ok(ks_uniform_in_place(&mut sorted))
}

/// Sorts `values` (assumed to lie in `[0, 1]`) and returns their KS distance to uniform.
pub(crate) fn ks_uniform_in_place(values: &mut [f64]) -> f64 {
    sort_unit_interval(values);
    ks_uniform_sorted(values)
}

/// Bucket sort for values in `[0, 1]`: expected linear time when they are
/// roughly uniform, which p-values under the null are.
fn sort_unit_interval(values: &mut [f64]) {
    let m = values.len();
    if m < 64 {
        values.sort_unstable_by(f64::total_cmp);
        return;
    }
    // `floor(p·m)` is monotone in `p`, so bucket order is sorted order.
    let bucket = |p: f64| ((p * m as f64) as usize).min(m - 1);
    let mut start = vec![0usize; m + 1];
    for &p in values.iter() {
        start[bucket(p) + 1] += 1;
    }
    for i in 0..m {
        start[i + 1] += start[i];
    }
    let mut next = start.clone();
    let mut out = vec![0.0; m];
    for &p in values.iter() {
        let b = bucket(p);
        out[next[b]] = p;
        next[b] += 1;
    }
    for b in 0..m {
        out[start[b]..start[b + 1]].sort_unstable_by(f64::total_cmp);
    }
    values.copy_from_slice(&out);
}

pub(crate) fn ks_uniform_sorted(sorted: &[f64]) -> f64 {
    let m = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &p) in sorted.iter().enumerate() {
        let above = (i + 1) as f64 / m - p;
        let below = p - i as f64 / m;
        d = d.max(above).max(below);
    }
    d.clamp(0.0, 1.0)
}

/// Two-sample KS distance `sup_z |F̂_a(z) − F̂_b(z)|`.
pub fn ks_two_sample_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("KS distance of an empty sample"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let z = a[i].min(b[j]);
        while i < a.len() && a[i] <= z {
            i += 1;
        }
        while j < b.len() && b[j] <= z {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// CDF of `sup_{s∈[0,1]} |φ_s|` for a Brownian bridge `φ`:
/// `1 − 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²z²)`.
///
/// Small arguments use the equivalent dual series
/// `(√(2π)/z) Σ_{k≥1} exp(−(2k−1)²π²/(8z²))`. Both are truncated once a term
/// drops below `1e-12`.
pub fn kolmogorov_cdf(z: f64) -> Result<f64> {
    if z.is_nan() || z < 0.0 {
        return Err(Error::domain(format!("Kolmogorov CDF needs z >= 0, got {z}")));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    let value = if z < DUAL_SERIES_BELOW {
        dual_series(z)
    } else {
        1.0 - alternating_tail(z)
    };
    Ok(value.clamp(0.0, 1.0))
}

/// `1 − kolmogorov_cdf(z)`, evaluated without cancellation for large `z`.
pub fn kolmogorov_survival(z: f64) -> Result<f64> {
    if z.is_nan() || z < 0.0 {
        return Err(Error::domain(format!("Kolmogorov survival needs z >= 0, got {z}")));
    }
    if z < DUAL_SERIES_BELOW {
        return Ok(1.0 - kolmogorov_cdf(z)?);
    }
    Ok(alternating_tail(z).clamp(0.0, 1.0))
}

/// `2 Σ_{k≥1} (−1)^{k−1} exp(−2k²z²)`.
fn alternating_tail(z: f64) -> f64 {
    let mut sum = 0.0;
    let mut k = 1.0f64;
    loop {
        let term = (-2.0 * k * k * z * z).exp();
        if term < SERIES_TOL {
            break;
        }
        sum += if (k as u64) % 2 == 1 { term } else { -term };
        k += 1.0;
    }
    2.0 * sum
}

fn dual_series(z: f64) -> f64 {
    use std::f64::consts::PI;
    let scale = (2.0 * PI).sqrt() / z;
    let mut sum = 0.0;
    let mut k = 1.0f64;
    loop {
        let odd = 2.0 * k - 1.0;
        let term = scale * (-(odd * odd) * PI * PI / (8.0 * z * z)).exp();
        sum += term;
        if term < SERIES_TOL {
            break;
        }
        k += 1.0;
    }
    sum
}

/// Inverse of [`kolmogorov_cdf`] by bisection; `q` in `(0, 1)`.
pub fn kolmogorov_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::domain(format!("quantile level {q} outside (0, 1)")));
    }
    let (mut lo, mut hi) = (0.0f64, 10.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid)? < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Asymptotic one-sample KS test of uniformity: returns `(D, p)` with
/// `p = 1 − F_φ(√m · D)`.
pub fn ks_uniformity_test(values: &[f64]) -> Result<(f64, f64)> {
    let d = ks_uniform_distance(values)?;
    let p = kolmogorov_survival((values.len() as f64).sqrt() * d)?;
    Ok((d, p))
}

/// Randomized probability integral transform of `x` through the empirical CDF
/// of `sample`: `F⁻(x) + v · (F(x) − F⁻(x))`.
pub fn randomized_pit(x: f64, sample: &[f64], v: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::domain("randomized PIT against an empty sample"));
    }
    let m = sample.len() as f64;
    let below = sample.iter().filter(|&&s| s < x).count() as f64;
    let at_most = sample.iter().filter(|&&s| s <= x).count() as f64;
    let left = below / m;
    Ok((left + v * (at_most / m - left)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_examples() {
        assert_eq!(randomized_rank(&[3.0, 1.0, 2.0], 2, 0.5).unwrap(), 0.5);
        assert_eq!(randomized_rank(&[7.0], 0, 0.42).unwrap(), 0.42);
        assert_eq!(randomized_rank(&[1.0; 4], 1, 0.25).unwrap(), 0.25);
        assert!(randomized_rank(&[], 0, 0.5).is_err());
        assert!(randomized_rank(&[1.0], 1, 0.5).is_err());
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_uniform_distance(&[0.5]).unwrap(), 0.5);
        assert_eq!(ks_uniform_distance(&[0.25, 0.75]).unwrap(), 0.25);
        assert_eq!(ks_uniform_distance(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!(ks_uniform_distance(&[]).is_err());
        assert!(ks_uniform_distance(&[1.5]).is_err());
    }

    /// Sum of the alternating series with a fixed, generous number of terms.
    fn kolmogorov_oracle(z: f64) -> f64 {
        let mut s = 0.0;
        for k in 1..=2000u32 {
            let k = k as f64;
            let sign = if k as u32 % 2 == 1 { 1.0 } else { -1.0 };
            s += sign * (-2.0 * k * k * z * z).exp();
        }
        1.0 - 2.0 * s
    }

    #[test]
    fn kolmogorov_examples() {
        assert_eq!(kolmogorov_cdf(0.0).unwrap(), 0.0);
        let at = kolmogorov_cdf(1.358).unwrap();
        assert!((at - kolmogorov_oracle(1.358)).abs() < 1e-12);
        assert!((at - 0.95).abs() < 1e-3, "{at}");
        assert!((kolmogorov_cdf(10.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(kolmogorov_cdf(-0.1).is_err());
    }

    #[test]
    fn kolmogorov_dual_matches_alternating() {
        for i in 1..=60 {
            let z = 0.3 + i as f64 * 0.03;
            let a = kolmogorov_oracle(z);
            let b = dual_series(z);
            assert!((a - b).abs() < 1e-10, "z={z}: {a} vs {b}");
        }
    }

    #[test]
    fn kolmogorov_monotone() {
        let mut prev = 0.0;
        for i in 0..1000 {
            let z = i as f64 * 0.004;
            let c = kolmogorov_cdf(z).unwrap();
            assert!(c >= prev, "not monotone at {z}");
            prev = c;
        }
    }

    #[test]
    fn kolmogorov_quantile_inverts() {
        let q = kolmogorov_quantile(0.95).unwrap();
        assert!((q - 1.3581).abs() < 1e-3, "{q}");
        assert!((kolmogorov_cdf(q).unwrap() - 0.95).abs() < 1e-9);
    }

    #[test]
    fn pit_examples() {
        assert_eq!(randomized_pit(2.0, &[1.0, 2.0, 3.0], 0.5).unwrap(), 0.5);
        assert_eq!(randomized_pit(-5.0, &[1.0, 2.0, 3.0], 0.7).unwrap(), 0.0);
        assert!(randomized_pit(0.0, &[], 0.5).is_err());
    }

    #[test]
    fn pit_uniform_with_ties() {
        let sample = [1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 7.0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let us: Vec<f64> = (0..100_000)
            .map(|_| {
                let x = sample[rng.gen_range(0..sample.len())];
                randomized_pit(x, &sample, rng.gen()).unwrap()
            })
            .collect();
        let (d, p) = ks_uniformity_test(&us).unwrap();
        assert!(d < 0.01, "ks {d}");
        assert!(p > 0.001, "p {p}");
    }

    #[test]
    fn last_rank_uniform_for_continuous_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ranks: Vec<f64> = (0..10_000)
            .map(|_| {
                let m = rng.gen_range(1..20);
                let s: Vec<f64> = (0..m).map(|_| rng.gen()).collect();
                randomized_rank(&s, m - 1, rng.gen()).unwrap()
            })
            .collect();
        assert!(ks_uniform_distance(&ranks).unwrap() < 0.02);
    }

    #[test]
    fn two_sample_distance() {
        assert_eq!(ks_two_sample_distance(&[0.1, 0.2], &[0.1, 0.2]).unwrap(), 0.0);
        assert_eq!(ks_two_sample_distance(&[0.1], &[0.9]).unwrap(), 1.0);
        assert_eq!(ks_two_sample_distance(&[0.1, 0.5], &[0.3, 0.7]).unwrap(), 0.5);
    }

    /// Sup of |F̂(z) − z| evaluated at every atom and just left of it.
    fn ks_brute(p: &[f64]) -> f64 {
        let m = p.len() as f64;
        let cdf = |z: f64| p.iter().filter(|&&v| v <= z).count() as f64 / m;
        let mut d = 0.0f64;
        for &v in p {
            d = d.max((cdf(v) - v).abs());
            let below = v - 1e-9;
            d = d.max((cdf(below) - below).abs());
        }
        d
    }

    proptest! {
        #[test]
        fn ks_matches_brute_force(raw in prop::collection::vec(0u32..=100, 1..=6)) {
            let p: Vec<f64> = raw.iter().map(|&k| k as f64 / 100.0).collect();
            let fast = ks_uniform_distance(&p).unwrap();
            prop_assert!((fast - ks_brute(&p)).abs() < 1e-8);
        }

        #[test]
        fn bucket_sort_matches_comparison_sort(raw in prop::collection::vec(0u32..=1000, 0..300), ones in 0usize..4) {
            let mut v: Vec<f64> = raw.iter().map(|&k| k as f64 / 1000.0).collect();
            v.extend(std::iter::repeat_n(1.0, ones));
            let mut expected = v.clone();
            expected.sort_unstable_by(f64::total_cmp);
            sort_unit_interval(&mut v);
            prop_assert_eq!(v, expected);
        }

        #[test]
        fn rank_on_grid(scores in prop::collection::vec(0i32..5, 1..12), theta in 0.0f64..1.0, pick in 0usize..100) {
            let s: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
            let target = pick % s.len();
            let p = randomized_rank(&s, target, theta).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            let m = s.len();
            let found = (0..m).any(|k| (1..=m).any(|j| {
                ((k as f64 + theta * j as f64) / m as f64 - p).abs() < 1e-12
            }));
            prop_assert!(found);
        }
    }
}
