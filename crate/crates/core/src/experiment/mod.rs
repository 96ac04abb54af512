//! Synthetic workloads: data generators, the coverage/width harness and the
//! rank-power oracle for likelihood-ratio scores.

mod generate;
mod harness;
mod np_oracle;

pub use generate::{generate, piecewise_oracle, DistributionSpec, ScoreSpec};
pub use harness::{
    run_experiment, AlphaSummary, ExperimentConfig, ExperimentReport, ReferenceRow, TrialFailure,
};
pub use np_oracle::{
    exact_expected_rank, likelihood_ratio_scores, np_power_oracle, DiscreteDist, NpOracleReport, NpScoreKind,
    NpScoreResult, MAX_ATOMS, MAX_N,
};

/// Compensated (Kahan) running sum; makes aggregates independent of how the
/// terms happened to be grouped.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::default();
        iter.into_iter().for_each(|x| k.add(x));
        k
    }
}

/// Sample mean with the per-observation standard deviation and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

impl MeanSe {
    /// Two-pass estimate; `sd` uses the `m − 1` denominator.
    pub fn of(values: &[f64]) -> Self {
        let m = values.len();
        if m == 0 {
            return MeanSe {
                mean: f64::NAN,
                sd: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = values.iter().copied().collect::<KahanSum>().value() / m as f64;
        if m == 1 {
            return MeanSe { mean, sd: 0.0, se: 0.0 };
        }
        let ss = values.iter().map(|v| (v - mean) * (v - mean)).collect::<KahanSum>().value();
        let sd = (ss / (m - 1) as f64).sqrt();
        MeanSe {
            mean,
            sd,
            se: sd / (m as f64).sqrt(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive() {
        let mut k = KahanSum::default();
        k.add(1.0);
        for _ in 0..10_000 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn mean_se_small() {
        let s = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.se - s.sd / 2.0).abs() < 1e-12);
    }
}
