use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{generate, DistributionSpec, ScoreSpec};
use super::MeanSe;
use crate::combine::{localize, Combiner, LocalizeConfig};
use crate::data::format_sig17;
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::testing::{NullTableCache, TestMethod, DEFAULT_NULL_SIZE};

fn default_null_size() -> usize {
    DEFAULT_NULL_SIZE
}

/// Reference numbers to print next to ours; never used in computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub alpha: f64,
    pub width: Option<f64>,
    pub coverage: Option<f64>,
}

/// One synthetic coverage experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    /// True changepoint; `n` for no change.
    pub xi: usize,
    pub distribution: DistributionSpec,
    pub score: ScoreSpec,
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub combiner: Option<Combiner>,
    #[serde(default)]
    pub method: TestMethod,
    #[serde(default = "default_null_size")]
    pub null_size: usize,
    #[serde(default)]
    pub null_seed: u64,
    #[serde(default)]
    pub known_change: bool,
    /// See [`LocalizeConfig::allow_dependent_combiner`].
    #[serde(default)]
    pub allow_dependent_combiner: bool,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub reference: Vec<ReferenceRow>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            line: None,
            message: format!("experiment config: {e}"),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config(format!("n must be at least 2, got {}", self.n)));
        }
        if self.xi < 1 || self.xi > self.n {
            return Err(Error::config(format!("xi = {} outside [1, n = {}]", self.xi, self.n)));
        }
        if self.trials < 1 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::config("alphas must be a non-empty list of levels in (0, 1)"));
        }
        if matches!(self.distribution, DistributionSpec::None { .. }) && self.xi != self.n {
            return Err(Error::config("a no-change distribution needs xi = n"));
        }
        Ok(())
    }

    /// Trial `i`'s root stream.
    pub fn trial_stream(&self, i: usize) -> RandomStream {
        RandomStream::new(self.seed, "experiment").indexed(i as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub width: MeanSe,
    pub coverage: f64,
    /// Half-width of the normal-approximation 95% binomial interval.
    pub coverage_error: f64,
    /// Fraction of trials whose set contains `n`.
    pub contains_n: f64,
    pub reference_width: Option<f64>,
    pub reference_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub completed: usize,
    pub failures: Vec<TrialFailure>,
    pub per_alpha: Vec<AlphaSummary>,
    /// `ξ̂ − ξ`.
    pub bias: MeanSe,
    /// `|ξ̂ − ξ|`.
    pub mad: MeanSe,
    /// Per-`t` frequency of `p_t <= alphas[0]`, indexed from `t = 1`.
    pub rejection_rate: Vec<f64>,
    /// `p_ξ` of each completed trial, in trial order.
    pub p_at_xi: Vec<f64>,
}

struct TrialOutcome {
    estimate: usize,
    /// Per alpha: (width, covered, contains n).
    sets: Vec<(usize, bool, bool)>,
    rejected: Vec<bool>,
    p_at_xi: f64,
}

fn run_trial(cfg: &ExperimentConfig, i: usize, tables: &NullTableCache) -> Result<TrialOutcome> {
    let root = cfg.trial_stream(i);
    let data = generate(&cfg.distribution, cfg.n, cfg.xi, &root.child("data"))?;
    let family = cfg.score.build(&cfg.distribution)?;
    let table = if cfg.method.needs_table() {
        Some(tables.get(cfg.n, cfg.null_size, cfg.null_seed)?)
    } else {
        None
    };
    let lcfg = LocalizeConfig {
        alpha: cfg.alphas[0],
        method: cfg.method,
        combiner: cfg.combiner,
        known_change: cfg.known_change,
        allow_dependent_combiner: cfg.allow_dependent_combiner,
    };
    let loc = localize(&data, family.as_ref(), &lcfg, &root.child("mcp"), table.as_deref())?;
    let sets = cfg
        .alphas
        .iter()
        .map(|&a| {
            let s = loc.set_at(a);
            (s.len(), s.contains(cfg.xi), s.contains_n)
        })
        .collect();
    Ok(TrialOutcome {
        estimate: loc.set.point_estimate,
        sets,
        rejected: loc.p_values.values().iter().map(|&p| p <= cfg.alphas[0]).collect(),
        p_at_xi: loc.p_values.get(cfg.xi),
    })
}

/// Runs every trial (in parallel) and aggregates in trial order.
///
/// A failing trial is recorded in the report and excluded from the summaries.
pub fn run_experiment(cfg: &ExperimentConfig, tables: &NullTableCache) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.method.needs_table() {
        // Build once up front instead of racing from every worker.
        tables.get(cfg.n, cfg.null_size, cfg.null_seed)?;
    }
    let outcomes: Vec<Result<TrialOutcome>> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, i, tables))
        .collect();
    let mut ok = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => ok.push(o),
            Err(e) => failures.push(TrialFailure {
                trial: i,
                message: e.to_string(),
            }),
        }
    }
    let m = ok.len();
    let per_alpha = cfg
        .alphas
        .iter()
        .enumerate()
        .map(|(k, &alpha)| {
            let widths: Vec<f64> = ok.iter().map(|o| o.sets[k].0 as f64).collect();
            let coverage = ok.iter().filter(|o| o.sets[k].1).count() as f64 / m as f64;
            let contains_n = ok.iter().filter(|o| o.sets[k].2).count() as f64 / m as f64;
            let reference = cfg.reference.iter().find(|r| r.alpha == alpha);
            AlphaSummary {
                alpha,
                width: MeanSe::of(&widths),
                coverage,
                coverage_error: 1.96 * (coverage * (1.0 - coverage) / m as f64).sqrt(),
                contains_n,
                reference_width: reference.and_then(|r| r.width),
                reference_coverage: reference.and_then(|r| r.coverage),
            }
        })
        .collect();
    let errors: Vec<f64> = ok.iter().map(|o| o.estimate as f64 - cfg.xi as f64).collect();
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let rejection_rate = (0..cfg.n)
        .map(|t| ok.iter().filter(|o| o.rejected[t]).count() as f64 / m as f64)
        .collect();
    Ok(ExperimentReport {
        config: cfg.clone(),
        completed: m,
        failures,
        per_alpha,
        bias: MeanSe::of(&errors),
        mad: MeanSe::of(&abs),
        rejection_rate,
        p_at_xi: ok.iter().map(|o| o.p_at_xi).collect(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(format_sig17).unwrap_or_default()
}

impl ExperimentReport {
    pub const CSV_HEADER: &'static str = "name,n,xi,alpha,trials,completed,width_mean,width_sd,width_se,coverage,coverage_error,contains_n,bias_mean,bias_se,mad_mean,mad_se,reference_width,reference_coverage";

    /// One row per level, preceded by [`Self::CSV_HEADER`].
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for a in &self.per_alpha {
            let cells = [
                self.config.name.clone(),
                self.config.n.to_string(),
                self.config.xi.to_string(),
                format_sig17(a.alpha),
                self.config.trials.to_string(),
                self.completed.to_string(),
                format_sig17(a.width.mean),
                format_sig17(a.width.sd),
                format_sig17(a.width.se),
                format_sig17(a.coverage),
                format_sig17(a.coverage_error),
                format_sig17(a.contains_n),
                format_sig17(self.bias.mean),
                format_sig17(self.bias.se),
                format_sig17(self.mad.mean),
                format_sig17(self.mad.se),
                opt(a.reference_width),
                opt(a.reference_coverage),
            ];
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Plot-ready `t,rejection_rate` rows.
    pub fn write_power_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,rejection_rate")?;
        for (i, r) in self.rejection_rate.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, format_sig17(*r))?;
        }
        Ok(())
    }

    /// Fixed-width summary in the layout of a width/coverage table.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} (n={}, xi={}, trials={}, completed={})\n",
            if self.config.name.is_empty() { "experiment" } else { &self.config.name },
            self.config.n,
            self.config.xi,
            self.config.trials,
            self.completed
        );
        s.push_str(&format!(
            "{:>7} {:>18} {:>16} {:>18} {:>16}\n",
            "alpha", "avg width (sd)", "coverage (±)", "bias (sd)", "mad (sd)"
        ));
        for a in &self.per_alpha {
            s.push_str(&format!(
                "{:>7.3} {:>10.2} ({:>5.1}) {:>8.3} ({:.3}) {:>10.2} ({:>5.1}) {:>8.2} ({:>5.1})\n",
                a.alpha,
                a.width.mean,
                a.width.sd,
                a.coverage,
                a.coverage_error,
                self.bias.mean,
                self.bias.sd,
                self.mad.mean,
                self.mad.sd
            ));
        }
        for f in &self.failures {
            s.push_str(&format!("trial {} failed: {}\n", f.trial, f.message));
        }
        s
    }
}
