//! Per-candidate p-values, confidence sets and the end-to-end pipeline.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{self, DiscrepancyScores};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::scores::ScoreFamily;
use crate::testing::{Calibration, NullQuantileTable, SidePValues, TestMethod};

/// Inputs below this are floored before taking logarithms.
pub const FISHER_FLOOR: f64 = 1e-300;

/// `1 − (1 − min(p_l, p_r))²`; valid for independent sides.
pub fn combine_min(p_left: f64, p_right: f64) -> f64 {
    let m = 1.0 - p_left.min(p_right);
    (1.0 - m * m).clamp(0.0, 1.0)
}

/// Survival function of χ²₄ at `−2 ln p_l − 2 ln p_r`, i.e. `(1 + x/2)·e^{−x/2}`.
pub fn combine_fisher(p_left: f64, p_right: f64) -> f64 {
    let half = -(p_left.max(FISHER_FLOOR).ln() + p_right.max(FISHER_FLOOR).ln());
    ((1.0 + half) * (-half).exp()).clamp(0.0, 1.0)
}

/// `min(2 p_l, 2 p_r, 1)`; valid under arbitrary dependence.
pub fn combine_bonferroni(p_left: f64, p_right: f64) -> f64 {
    (2.0 * p_left).min(2.0 * p_right).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    Minimum,
    Fisher,
    Bonferroni,
}

impl Combiner {
    /// Minimum for non-adaptive families, Bonferroni otherwise.
    pub fn default_for(family: &dyn ScoreFamily) -> Self {
        if family.is_adaptive() {
            Combiner::Bonferroni
        } else {
            Combiner::Minimum
        }
    }

    /// Whether the rule assumes independent left and right p-values.
    pub fn requires_independence(self) -> bool {
        !matches!(self, Combiner::Bonferroni)
    }

    pub fn combine(self, p_left: f64, p_right: f64) -> f64 {
        match self {
            Combiner::Minimum => combine_min(p_left, p_right),
            Combiner::Fisher => combine_fisher(p_left, p_right),
            Combiner::Bonferroni => combine_bonferroni(p_left, p_right),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Combiner::Minimum => "minimum",
            Combiner::Fisher => "fisher",
            Combiner::Bonferroni => "bonferroni",
        }
    }
}

impl std::str::FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" | "minimum" => Ok(Combiner::Minimum),
            "fisher" => Ok(Combiner::Fisher),
            "bonferroni" => Ok(Combiner::Bonferroni),
            other => Err(Error::config(format!(
                "unknown combiner {other:?}; expected minimum, fisher or bonferroni"
            ))),
        }
    }
}

/// `p_t` for `t ∈ [n]` and the rule that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePValues {
    values: Vec<f64>,
    combiner: Combiner,
}

impl CandidatePValues {
    pub fn new(values: Vec<f64>, combiner: Combiner) -> Result<Self> {
        if values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("candidate p-values must lie in [0, 1]"));
        }
        Ok(CandidatePValues { values, combiner })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// `p_t`, 1-based.
    pub fn get(&self, t: usize) -> f64 {
        self.values[t - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn combiner(&self) -> Combiner {
        self.combiner
    }

    /// Combines side p-values; `t = n` uses Bonferroni on the forward and
    /// backward p-values, or is excluded (`p_n = 0`) when `skip_last`.
    pub fn from_sides(sides: &SidePValues, combiner: Combiner, skip_last: bool) -> Result<Self> {
        let n = sides.n();
        let mut values: Vec<f64> = (1..n)
            .map(|t| combiner.combine(sides.left(t), sides.right(t).expect("right side defined for t < n")))
            .collect();
        let last = if skip_last {
            0.0
        } else {
            let back = sides
                .backward()
                .ok_or_else(|| Error::config("testing t = n needs the backward p-value"))?;
            combine_bonferroni(sides.left(n), back)
        };
        values.push(last);
        CandidatePValues::new(values, combiner)
    }
}

/// `{t : p_t > α}` with its hull and the point estimate `argmax_t p_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub alpha: f64,
    /// Sorted, 1-based.
    pub members: Vec<usize>,
    /// `[min, max]` of the members; `None` when empty.
    pub hull: Option<(usize, usize)>,
    pub contains_n: bool,
    /// Smallest index attaining the maximal p-value.
    pub point_estimate: usize,
}

impl ConfidenceSet {
    pub fn from_pvalues(p: &CandidatePValues, alpha: f64) -> Self {
        let n = p.n();
        let members: Vec<usize> = (1..=n).filter(|&t| p.get(t) > alpha).collect();
        let hull = members.first().map(|&lo| (lo, *members.last().expect("non-empty")));
        let mut best = 1;
        for t in 2..=n {
            if p.get(t) > p.get(best) {
                best = t;
            }
        }
        ConfidenceSet {
            alpha,
            contains_n: members.last() == Some(&n),
            members,
            hull,
            point_estimate: best,
        }
    }

    pub fn contains(&self, t: usize) -> bool {
        self.members.binary_search(&t).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Members shifted by `offset` (window-local to global coordinates).
    pub fn shifted(&self, offset: usize) -> Self {
        ConfidenceSet {
            alpha: self.alpha,
            members: self.members.iter().map(|t| t + offset).collect(),
            hull: self.hull.map(|(a, b)| (a + offset, b + offset)),
            contains_n: self.contains_n,
            point_estimate: self.point_estimate + offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeConfig {
    pub alpha: f64,
    #[serde(default)]
    pub method: TestMethod,
    /// `None` picks [`Combiner::default_for`] the family.
    #[serde(default)]
    pub combiner: Option<Combiner>,
    /// Assume a change exists: skip `H_0n` and exclude `n` from the set.
    #[serde(default)]
    pub known_change: bool,
    /// Permit an independence-based combiner with an adaptive family. The
    /// resulting sets carry no coverage guarantee; for exploratory comparisons.
    #[serde(default)]
    pub allow_dependent_combiner: bool,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            alpha: 0.05,
            method: TestMethod::Empirical,
            combiner: None,
            known_change: false,
            allow_dependent_combiner: false,
        }
    }
}

impl LocalizeConfig {
    /// Checks `α` and the combiner against the family; returns the combiner to use.
    pub fn resolve_combiner(&self, family: &dyn ScoreFamily) -> Result<Combiner> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        let combiner = self.combiner.unwrap_or_else(|| Combiner::default_for(family));
        if family.is_adaptive() && combiner.requires_independence() && !self.allow_dependent_combiner {
            return Err(Error::config(format!(
                "the {} combiner assumes independent sides, but the {} family is adaptive; use bonferroni",
                combiner.name(),
                family.name()
            )));
        }
        Ok(combiner)
    }
}

/// Output of [`localize`].
#[derive(Debug, Clone)]
pub struct Localization {
    pub discrepancies: DiscrepancyScores,
    pub sides: SidePValues,
    pub p_values: CandidatePValues,
    pub set: ConfidenceSet,
}

impl Localization {
    /// The confidence set of the same run at another level.
    pub fn set_at(&self, alpha: f64) -> ConfidenceSet {
        ConfidenceSet::from_pvalues(&self.p_values, alpha)
    }
}

/// Runs the matrix, the configured test and the combiner on `data`.
///
/// `rng` is the run's root stream: matrix θ's come from `rng.child("theta")`
/// and test θ's from `rng.child("test")`. The empirical and hybrid tests read
/// `table`, which must match `data.len()`.
pub fn localize(
    data: &Dataset,
    family: &dyn ScoreFamily,
    cfg: &LocalizeConfig,
    rng: &RandomStream,
    table: Option<&NullQuantileTable>,
) -> Result<Localization> {
    let combiner = cfg.resolve_combiner(family)?;
    if cfg.method.needs_table() && table.is_none() {
        return Err(Error::config("the empirical and hybrid tests need a null table"));
    }
    let theta = rng.child("theta");
    let w = engine::discrepancy_scores(data, family, &theta)?;
    let backward = if cfg.known_change {
        None
    } else {
        Some(engine::backward_pvalues(data, family, &theta)?)
    };
    let calibration = Calibration {
        method: cfg.method,
        table,
    };
    let sides = calibration.side_pvalues(data, family, &w, backward.as_ref(), rng)?;
    let p_values = CandidatePValues::from_sides(&sides, combiner, cfg.known_change)?;
    let set = ConfidenceSet::from_pvalues(&p_values, cfg.alpha);
    Ok(Localization {
        discrepancies: w,
        sides,
        p_values,
        set,
    })
}

/// What the result JSON echoes about the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub score: String,
    pub method: TestMethod,
    pub combiner: Combiner,
    pub known_change: bool,
    /// Size of the null table, when one was used.
    pub null_size: Option<usize>,
}

/// Serialized result of one localization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub alpha: f64,
    pub n: usize,
    pub p_values: Vec<f64>,
    pub members: Vec<usize>,
    pub hull: Option<(usize, usize)>,
    pub point_estimate: usize,
    pub contains_n: bool,
    pub config: RunEcho,
    pub seed: u64,
}

impl LocalizationReport {
    pub fn new(loc: &Localization, config: RunEcho, seed: u64) -> Self {
        LocalizationReport {
            alpha: loc.set.alpha,
            n: loc.p_values.n(),
            p_values: loc.p_values.values().to_vec(),
            members: loc.set.members.clone(),
            hull: loc.set.hull,
            point_estimate: loc.set.point_estimate,
            contains_n: loc.set.contains_n,
            config,
            seed,
        }
    }

    /// Checks internal consistency: the set must be recomputable from the p-values.
    pub fn validate(&self) -> Result<()> {
        if self.p_values.len() != self.n {
            return Err(Error::Format(format!("{} p-values for n = {}", self.p_values.len(), self.n)));
        }
        let p = CandidatePValues::new(self.p_values.clone(), self.config.combiner)
            .map_err(|e| Error::Format(e.to_string()))?;
        let set = ConfidenceSet::from_pvalues(&p, self.alpha);
        if set.members != self.members
            || set.hull != self.hull
            || set.point_estimate != self.point_estimate
            || set.contains_n != self.contains_n
        {
            return Err(Error::Format("confidence set does not match the p-values".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("result JSON: {e}")))?;
        report.validate()?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::{DensityPair, IdentityFamily, KdeFamily, OracleLrFamily};
    use crate::stats::ks_uniform_distance;
    use crate::testing::build_null_table;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn combiner_examples() {
        assert_eq!(combine_min(1.0, 1.0), 1.0);
        assert_eq!(combine_min(0.5, 0.9), 0.75);
        assert_eq!(combine_fisher(1.0, 1.0), 1.0);
        let e = (-1.0f64).exp();
        assert!((combine_fisher(e, e) - 3.0 * (-2.0f64).exp()).abs() < 1e-12);
        assert!((combine_fisher(e, e) - 0.406).abs() < 1e-3);
        assert!(combine_fisher(0.0, 0.0) >= 0.0);
        assert_eq!(combine_bonferroni(0.5, 0.3), 0.6);
        assert_eq!(combine_bonferroni(0.6, 0.7), 1.0);
    }

    #[test]
    fn independent_combiners_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs: Vec<(f64, f64)> = (0..100_000).map(|_| (rng.gen(), rng.gen())).collect();
        for f in [combine_min, combine_fisher] {
            let out: Vec<f64> = pairs.iter().map(|&(a, b)| f(a, b)).collect();
            assert!(ks_uniform_distance(&out).unwrap() < 0.01);
        }
    }

    #[test]
    fn bonferroni_valid_for_comonotone_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<f64> = (0..100_000).map(|_| rng.gen()).collect();
        for alpha in [0.05, 0.1] {
            let freq = draws.iter().filter(|&&u| combine_bonferroni(u, u) <= alpha).count() as f64 / 1e5;
            assert!(freq <= alpha + 3.0 * (alpha / 1e5).sqrt(), "{freq}");
        }
    }

    #[test]
    fn confidence_set_definition() {
        let p = CandidatePValues::new(vec![0.01, 0.3, 0.9, 0.9, 0.02, 0.2], Combiner::Minimum).unwrap();
        let c = ConfidenceSet::from_pvalues(&p, 0.1);
        assert_eq!(c.members, vec![2, 3, 4, 6]);
        assert_eq!(c.hull, Some((2, 6)));
        assert!(c.contains_n);
        assert_eq!(c.point_estimate, 3);
        let empty = ConfidenceSet::from_pvalues(&p, 0.95);
        assert!(empty.is_empty() && empty.hull.is_none() && !empty.contains_n);
        assert_eq!(c.shifted(10).members, vec![12, 13, 14, 16]);
    }

    #[test]
    fn adaptive_family_rejects_independence_combiners() {
        let kde = KdeFamily::default();
        for c in [Combiner::Minimum, Combiner::Fisher] {
            let cfg = LocalizeConfig {
                combiner: Some(c),
                ..LocalizeConfig::default()
            };
            assert!(matches!(cfg.resolve_combiner(&kde), Err(Error::Config(_))));
        }
        assert_eq!(LocalizeConfig::default().resolve_combiner(&kde).unwrap(), Combiner::Bonferroni);
        assert_eq!(
            LocalizeConfig::default().resolve_combiner(&IdentityFamily).unwrap(),
            Combiner::Minimum
        );
        let bad = LocalizeConfig {
            alpha: 1.0,
            ..LocalizeConfig::default()
        };
        assert!(bad.resolve_combiner(&IdentityFamily).is_err());
    }

    fn shifted_gaussian(n: usize, xi: usize, delta: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pre = Normal::new(-delta, 1.0).unwrap();
        let post = Normal::new(delta, 1.0).unwrap();
        Dataset::scalar(
            (1..=n)
                .map(|t| if t <= xi { pre.sample(&mut rng) } else { post.sample(&mut rng) })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn localize_finds_clear_change() {
        let data = shifted_gaussian(100, 40, 2.0, 3);
        let family = OracleLrFamily::new(DensityPair::gaussian_shift(2.0));
        let table = build_null_table(100, 200, &RandomStream::new(0, "null-sim")).unwrap();
        let loc = localize(
            &data,
            &family,
            &LocalizeConfig::default(),
            &RandomStream::new(3, "run"),
            Some(&table),
        )
        .unwrap();
        assert!((loc.set.point_estimate as i64 - 40).abs() <= 10, "{:?}", loc.set);
        assert!(!loc.set.contains_n);
        assert!(loc.set.len() < 60);
    }

    #[test]
    fn tiny_alpha_keeps_everything_and_sets_nest() {
        let data = shifted_gaussian(30, 12, 1.0, 4);
        let family = OracleLrFamily::new(DensityPair::gaussian_shift(1.0));
        let cfg = LocalizeConfig {
            method: TestMethod::Asymptotic { fast: false },
            ..LocalizeConfig::default()
        };
        let loc = localize(&data, &family, &cfg, &RandomStream::new(4, "run"), None).unwrap();
        assert_eq!(loc.set_at(1e-15).members, (1..=30).collect::<Vec<_>>());
        let alphas = [0.01, 0.05, 0.1, 0.3, 0.5, 0.9];
        for w in alphas.windows(2) {
            let wide = loc.set_at(w[0]);
            let narrow = loc.set_at(w[1]);
            assert!(narrow.members.iter().all(|t| wide.contains(*t)));
        }
    }

    #[test]
    fn known_change_excludes_n() {
        let data = shifted_gaussian(30, 29, 0.0, 5);
        let cfg = LocalizeConfig {
            method: TestMethod::Asymptotic { fast: false },
            known_change: true,
            ..LocalizeConfig::default()
        };
        let loc = localize(&data, &IdentityFamily, &cfg, &RandomStream::new(5, "run"), None).unwrap();
        assert_eq!(loc.p_values.get(30), 0.0);
        assert!(!loc.set.contains_n);
        assert!(loc.sides.backward().is_none());
    }

    #[test]
    fn empirical_requires_table() {
        let data = shifted_gaussian(10, 5, 1.0, 6);
        let err = localize(&data, &IdentityFamily, &LocalizeConfig::default(), &RandomStream::new(0, "run"), None);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn report_round_trip() {
        let data = shifted_gaussian(40, 20, 1.5, 7);
        let family = OracleLrFamily::new(DensityPair::gaussian_shift(1.5));
        let table = build_null_table(40, 100, &RandomStream::new(1, "null-sim")).unwrap();
        let cfg = LocalizeConfig::default();
        let loc = localize(&data, &family, &cfg, &RandomStream::new(7, "run"), Some(&table)).unwrap();
        let echo = RunEcho {
            score: family.name().into(),
            method: cfg.method,
            combiner: loc.p_values.combiner(),
            known_change: false,
            null_size: Some(100),
        };
        let report = LocalizationReport::new(&loc, echo, 7);
        let text = serde_json::to_string(&report).unwrap();
        let back = LocalizationReport::from_json(&text).unwrap();
        assert_eq!(back, report);
        let mut tampered = report.clone();
        tampered.members.pop();
        assert!(tampered.validate().is_err());
    }

    #[test]
    fn null_pvalue_at_change_is_uniform() {
        // ξ = 20 of 40; p_ξ must be Unif(0,1) since H_0ξ holds.
        let table = build_null_table(40, 300, &RandomStream::new(2, "null-sim")).unwrap();
        let family = OracleLrFamily::new(DensityPair::gaussian_shift(1.0));
        let p: Vec<f64> = (0..400u64)
            .map(|s| {
                let data = shifted_gaussian(40, 20, 1.0, 100 + s);
                localize(&data, &family, &LocalizeConfig::default(), &RandomStream::new(s, "run"), Some(&table))
                    .unwrap()
                    .p_values
                    .get(20)
            })
            .collect();
        assert!(ks_uniform_distance(&p).unwrap() < 0.1);
    }

    proptest! {
        #[test]
        fn combiners_stay_in_unit_interval(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            for c in [Combiner::Minimum, Combiner::Fisher, Combiner::Bonferroni] {
                let p = c.combine(a, b);
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }

        #[test]
        fn members_recomputable(raw in prop::collection::vec(0.0f64..=1.0, 2..50), alpha in 0.001f64..0.999) {
            let p = CandidatePValues::new(raw.clone(), Combiner::Bonferroni).unwrap();
            let c = ConfidenceSet::from_pvalues(&p, alpha);
            let expect: Vec<usize> = (1..=raw.len()).filter(|&t| raw[t - 1] > alpha).collect();
            prop_assert_eq!(&c.members, &expect);
            let max = raw.iter().cloned().fold(f64::MIN, f64::max);
            let first = raw.iter().position(|&v| v == max).unwrap() + 1;
            prop_assert_eq!(c.point_estimate, first);
            prop_assert_eq!(c.contains_n, expect.last() == Some(&raw.len()));
        }
    }
}
