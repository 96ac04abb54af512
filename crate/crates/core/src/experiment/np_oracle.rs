use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{KahanSum, MeanSe};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub const MAX_ATOMS: usize = 8;
pub const MAX_N: usize = 12;

/// Probability masses on atoms `0..k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.len() > MAX_ATOMS {
            return Err(Error::domain(format!(
                "need between 1 and {MAX_ATOMS} atoms, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::domain("masses must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("masses sum to {total}, not 1")));
        }
        Ok(DiscreteDist { probs })
    }

    /// Normalises integer weights, so every mass is rational.
    pub fn from_weights(weights: &[u32]) -> Result<Self> {
        let total: u32 = weights.iter().sum();
        if total == 0 {
            return Err(Error::domain("weights are all zero"));
        }
        Self::new(weights.iter().map(|&w| w as f64 / total as f64).collect())
    }

    /// Random weights in `1..=9` (`0..=9` with at least one nonzero when `allow_zero`).
    pub fn random(atoms: usize, allow_zero: bool, rng: &mut impl Rng) -> Result<Self> {
        loop {
            let w: Vec<u32> = (0..atoms)
                .map(|_| if allow_zero { rng.gen_range(0..=9) } else { rng.gen_range(1..=9) })
                .collect();
            if w.iter().any(|&x| x > 0) {
                return Self::from_weights(&w);
            }
        }
    }

    pub fn atoms(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn sample(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (a, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // Rounding left `acc` just below 1: take the last atom with mass.
        self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

/// `E[T_n[s]]` for `X ~ r`, `Y ~ q`: `P(s(X) < s(Y)) + P(s(X) = s(Y)) / 2`.
///
/// Each summand of `T_n` has this expectation, so it does not depend on `n`.
pub fn exact_expected_rank(q: &DiscreteDist, r: &DiscreteDist, scores: &[f64]) -> f64 {
    let mut total = KahanSum::default();
    for (a, ra) in r.probs.iter().enumerate() {
        for (b, qb) in q.probs.iter().enumerate() {
            let w = if scores[a] < scores[b] {
                1.0
            } else if scores[a] == scores[b] {
                0.5
            } else {
                0.0
            };
            total.add(ra * qb * w);
        }
    }
    total.value()
}

/// `q/(q + r)`: an increasing transform of the likelihood ratio `q/r` that
/// stays finite where `r = 0`.
pub fn likelihood_ratio_scores(q: &DiscreteDist, r: &DiscreteDist) -> Vec<f64> {
    q.probs
        .iter()
        .zip(&r.probs)
        .map(|(a, b)| if a + b > 0.0 { a / (a + b) } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NpScoreKind {
    LikelihoodRatio,
    /// Independent small-integer value per atom, so ties are common.
    Random,
    /// Strictly increasing random distortion of the likelihood ratio.
    Monotone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpScoreResult {
    pub kind: NpScoreKind,
    pub scores: Vec<f64>,
    /// Monte-Carlo estimate of `E[T_n[s]]`.
    pub estimate: MeanSe,
    pub exact: f64,
    /// Paired estimate of `E[T_n[s*]] − E[T_n[s]]`.
    pub delta: MeanSe,
}

impl NpScoreResult {
    /// `delta / se`; zero for an identically vanishing difference.
    pub fn z(&self) -> f64 {
        if self.delta.se > 0.0 {
            self.delta.mean / self.delta.se
        } else if self.delta.mean == 0.0 {
            0.0
        } else {
            self.delta.mean.signum() * f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpOracleReport {
    pub q: DiscreteDist,
    pub r: DiscreteDist,
    pub n: usize,
    pub trials: usize,
    /// Entry 0 is the likelihood-ratio score itself.
    pub results: Vec<NpScoreResult>,
}

impl NpOracleReport {
    /// True when no score beats the likelihood ratio by more than `k` standard errors.
    pub fn no_violation(&self, k: f64) -> bool {
        self.results.iter().all(|s| s.delta.mean >= -k * s.delta.se)
    }

    /// Smallest `z` among the random scores; the likelihood ratio and its
    /// monotone distortions tie it exactly.
    pub fn min_z(&self) -> f64 {
        self.results
            .iter()
            .filter(|s| s.kind == NpScoreKind::Random)
            .map(NpScoreResult::z)
            .fold(f64::INFINITY, f64::min)
    }
}

fn monotone_distortion(base: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let mut levels: Vec<f64> = base.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut mapped = Vec::with_capacity(levels.len());
    let mut v: f64 = rng.gen_range(-10.0..10.0);
    for _ in &levels {
        v += rng.gen_range(0.01..5.0);
        mapped.push(v);
    }
    base.iter()
        .map(|s| mapped[levels.iter().position(|l| l == s).unwrap_or(0)])
        .collect()
}

/// Monte-Carlo check that the likelihood-ratio score maximises the expected
/// normalised rank of a post-change point among `n` pre-change points.
///
/// Every score is evaluated on the same draws, so differences are paired.
/// `n_random` random scores and `n_random` monotone distortions are tested.
pub fn np_power_oracle(
    q: &DiscreteDist,
    r: &DiscreteDist,
    n: usize,
    trials: usize,
    n_random: usize,
    rng: &RandomStream,
) -> Result<NpOracleReport> {
    if q.atoms() != r.atoms() {
        return Err(Error::domain("Q and R must share their atoms"));
    }
    if n == 0 || n > MAX_N {
        return Err(Error::domain(format!("n must be in 1..={MAX_N}, got {n}")));
    }
    if trials < 2 {
        return Err(Error::domain("need at least 2 trials"));
    }
    let k = q.atoms();
    let mut g = rng.child("scores").rng();
    let mut scores: Vec<(NpScoreKind, Vec<f64>)> = vec![(NpScoreKind::LikelihoodRatio, likelihood_ratio_scores(q, r))];
    for _ in 0..n_random {
        let s: Vec<f64> = (0..k).map(|_| g.gen_range(0..k as u32) as f64).collect();
        scores.push((NpScoreKind::Random, s));
    }
    for _ in 0..n_random {
        let s = monotone_distortion(&scores[0].1, &mut g);
        scores.push((NpScoreKind::Monotone, s));
    }

    let mut draws = rng.child("draws").rng();
    let mut values = vec![vec![0.0; trials]; scores.len()];
    let mut count = vec![0.0; k];
    let mut theta_sum = vec![0.0; k];
    for trial in 0..trials {
        count.iter_mut().for_each(|c| *c = 0.0);
        theta_sum.iter_mut().for_each(|c| *c = 0.0);
        for _ in 0..n {
            let a = r.sample(draws.gen());
            count[a] += 1.0;
            theta_sum[a] += draws.gen::<f64>();
        }
        let y = q.sample(draws.gen());
        for (j, (_, s)) in scores.iter().enumerate() {
            let mut t = 0.0;
            for a in 0..k {
                if s[a] < s[y] {
                    t += count[a];
                } else if s[a] == s[y] {
                    t += theta_sum[a];
                }
            }
            values[j][trial] = t / n as f64;
        }
    }

    let results = scores
        .iter()
        .zip(&values)
        .map(|((kind, s), v)| {
            let diff: Vec<f64> = values[0].iter().zip(v).map(|(a, b)| a - b).collect();
            NpScoreResult {
                kind: *kind,
                scores: s.clone(),
                estimate: MeanSe::of(v),
                exact: exact_expected_rank(q, r, s),
                delta: MeanSe::of(&diff),
            }
        })
        .collect();
    Ok(NpOracleReport {
        q: q.clone(),
        r: r.clone(),
        n,
        trials,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact `E[T_n]` by enumerating every outcome of `X_1..X_n, Y`; the
    /// tie-breaking uniforms contribute their mean `1/2`.
    fn brute_force(q: &DiscreteDist, r: &DiscreteDist, s: &[f64], n: usize) -> f64 {
        let k = q.atoms();
        let mut total = 0.0;
        let outcomes = k.pow(n as u32);
        for code in 0..outcomes {
            let mut c = code;
            let xs: Vec<usize> = (0..n)
                .map(|_| {
                    let a = c % k;
                    c /= k;
                    a
                })
                .collect();
            let px: f64 = xs.iter().map(|&a| r.probs()[a]).product();
            for y in 0..k {
                let t: f64 = xs
                    .iter()
                    .map(|&a| if s[a] < s[y] { 1.0 } else if s[a] == s[y] { 0.5 } else { 0.0 })
                    .sum::<f64>()
                    / n as f64;
                total += px * q.probs()[y] * t;
            }
        }
        total
    }

    fn all_integer_scores(k: usize) -> impl Iterator<Item = Vec<f64>> {
        (0..k.pow(k as u32)).map(move |mut c| {
            (0..k)
                .map(|_| {
                    let v = c % k;
                    c /= k;
                    v as f64
                })
                .collect()
        })
    }

    #[test]
    fn exact_matches_enumeration() {
        let q = DiscreteDist::from_weights(&[1, 2, 3]).unwrap();
        let r = DiscreteDist::from_weights(&[4, 1, 1]).unwrap();
        for n in 1..=4 {
            for s in all_integer_scores(3) {
                let e = exact_expected_rank(&q, &r, &s);
                assert!((e - brute_force(&q, &r, &s, n)).abs() < 1e-12, "n={n} s={s:?}");
            }
        }
    }

    #[test]
    fn likelihood_ratio_is_maximal_over_all_orderings() {
        let pairs = [
            (vec![1, 0], vec![1, 1]),
            (vec![3, 1, 0, 2], vec![1, 1, 1, 1]),
            (vec![0, 5, 1, 2], vec![4, 1, 2, 0]),
        ];
        for (qw, rw) in pairs {
            let q = DiscreteDist::from_weights(&qw).unwrap();
            let r = DiscreteDist::from_weights(&rw).unwrap();
            let best = exact_expected_rank(&q, &r, &likelihood_ratio_scores(&q, &r));
            for s in all_integer_scores(q.atoms()) {
                assert!(exact_expected_rank(&q, &r, &s) <= best + 1e-12, "{qw:?} {rw:?} {s:?}");
            }
        }
    }

    #[test]
    fn point_mass_against_uniform() {
        // Q = δ_a, R uniform on {a, b}: ranking a above b wins with
        // probability 1/2 and ties it otherwise, E = 3/4.
        let q = DiscreteDist::new(vec![1.0, 0.0]).unwrap();
        let r = DiscreteDist::new(vec![0.5, 0.5]).unwrap();
        let s = likelihood_ratio_scores(&q, &r);
        assert!(s[0] > s[1]);
        assert!((exact_expected_rank(&q, &r, &s) - 0.75).abs() < 1e-15);
        assert!((brute_force(&q, &r, &s, 6) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn equal_distributions_give_one_half() {
        let q = DiscreteDist::from_weights(&[2, 3, 5]).unwrap();
        let report = np_power_oracle(&q, &q, 5, 4000, 10, &RandomStream::new(1, "np")).unwrap();
        for res in &report.results {
            assert!((res.exact - 0.5).abs() < 1e-12);
            assert!((res.estimate.mean - 0.5).abs() < 4.0 * res.estimate.se + 1e-12, "{res:?}");
        }
    }

    #[test]
    fn monotone_distortions_tie_exactly() {
        let q = DiscreteDist::from_weights(&[1, 2, 3, 4]).unwrap();
        let r = DiscreteDist::from_weights(&[4, 3, 2, 1]).unwrap();
        let report = np_power_oracle(&q, &r, 6, 2000, 8, &RandomStream::new(2, "np")).unwrap();
        assert_eq!(report.results.len(), 17);
        for res in report.results.iter().filter(|r| r.kind == NpScoreKind::Monotone) {
            assert_eq!(res.delta.mean, 0.0);
            assert_eq!(res.z(), 0.0);
        }
        assert!(report.no_violation(2.0));
        // Monte Carlo tracks the exact expectation.
        for res in &report.results {
            assert!((res.estimate.mean - res.exact).abs() < 5.0 * res.estimate.se + 1e-9);
        }
    }

    #[test]
    fn input_validation() {
        assert!(DiscreteDist::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDist::new(vec![0.1; 10]).is_err());
        assert!(DiscreteDist::from_weights(&[0, 0]).is_err());
        let q = DiscreteDist::from_weights(&[1, 1]).unwrap();
        let r = DiscreteDist::from_weights(&[1, 1, 1]).unwrap();
        assert!(np_power_oracle(&q, &r, 3, 100, 1, &RandomStream::new(0, "np")).is_err());
        assert!(np_power_oracle(&q, &q, 13, 100, 1, &RandomStream::new(0, "np")).is_err());
    }

    #[test]
    fn deterministic() {
        let q = DiscreteDist::from_weights(&[1, 2]).unwrap();
        let r = DiscreteDist::from_weights(&[2, 1]).unwrap();
        let a = np_power_oracle(&q, &r, 4, 500, 3, &RandomStream::new(5, "np")).unwrap();
        let b = np_power_oracle(&q, &r, 4, 500, 3, &RandomStream::new(5, "np")).unwrap();
        assert_eq!(a, b);
    }
}
