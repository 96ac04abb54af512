use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mcp", version, about = "Conformal changepoint localization")]
pub struct Cli {
    /// Worker threads for parallel sections; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Confidence set for a single changepoint in a CSV series.
    Localize(LocalizeArgs),
    /// Segment into K+1 pieces and localize every changepoint.
    Multi(MultiArgs),
    /// Simulate a null table for the empirical test.
    NullTable(NullTableArgs),
    /// Run a synthetic coverage experiment from a TOML config.
    Bench(BenchArgs),
    /// Monte-Carlo check that the likelihood ratio maximises the expected rank.
    NpOracle(NpOracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreKind {
    Identity,
    OracleGaussian,
    OracleCauchy,
    Kde,
    Classifier,
    BinaryClassifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestKind {
    Empirical,
    Asymptotic,
    AsymptoticFast,
    Permutation,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CombinerKind {
    Min,
    Fisher,
    Bonferroni,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PermutationKind {
    Permute,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_enum, default_value = "identity")]
    pub score: ScoreKind,
    /// Half the mean (location) shift of the oracle densities: `−δ` before, `+δ` after.
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Class-probability CSV for the classifier scores.
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// Post-change class label for `binary-classifier` (default: the last column).
    #[arg(long)]
    pub class: Option<String>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[arg(long = "test", value_enum, default_value = "empirical")]
    pub test: TestKind,
    /// Simulated datasets in the null table.
    #[arg(long = "B", default_value_t = 1000)]
    pub null_size: usize,
    /// Seed of the null table, independent of the run seed so tables are reused.
    #[arg(long, default_value_t = 0)]
    pub null_seed: u64,
    /// Resamples per candidate for the permutation test.
    #[arg(long, default_value_t = 200)]
    pub resamples: usize,
    #[arg(long, value_enum, default_value = "permute")]
    pub permutation_mode: PermutationKind,
    /// Smallest side length answered asymptotically by the hybrid test.
    #[arg(long, default_value_t = 100)]
    pub threshold: usize,
    #[arg(long, value_enum)]
    pub combiner: Option<CombinerKind>,
    /// Accept min/fisher with an adaptive score (no coverage guarantee).
    #[arg(long)]
    pub allow_dependent_combiner: bool,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub score: ScoreArgs,
    #[command(flatten)]
    pub test: TestArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Assume a change exists and drop `t = n` from the set.
    #[arg(long)]
    pub known_change: bool,
    /// Result file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Plot CSV with columns `t,p_t,alpha`.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Full p-value matrix: CSV when the name ends in `.csv`, binary otherwise.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MultiArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Number of changepoints.
    #[arg(long)]
    pub k: usize,
    /// Gaussian-kernel bandwidth; the median heuristic when absent.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Per-window score: `identity`, `kde`, or `oracle-gaussian` with `--means`.
    #[arg(long, value_enum, default_value = "kde")]
    pub score: ScoreKind,
    /// Segment means `μ_0,..,μ_K` for the per-window Gaussian oracle.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub means: Vec<f64>,
    #[command(flatten)]
    pub test: TestArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NullTableArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long = "B", default_value_t = 1000)]
    pub null_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Destination file; the cache directory otherwise.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Experiment TOML; bare names are also looked up under `configs/`.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the configured number of trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV report file.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// JSON report file.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Power-curve CSV (`t,rejection_rate`).
    #[arg(long)]
    pub power: Option<PathBuf>,
    /// What to print on standard output: the summary table or the CSV report.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct NpOracleArgs {
    /// Atoms of the random distribution pairs.
    #[arg(long, default_value_t = 4)]
    pub atoms: usize,
    #[arg(long, default_value_t = 6)]
    pub n: usize,
    #[arg(long, default_value_t = 20000)]
    pub trials: usize,
    /// Random distribution pairs to test.
    #[arg(long, default_value_t = 3)]
    pub pairs: usize,
    /// Random scores (and as many monotone distortions) per pair.
    #[arg(long, default_value_t = 50)]
    pub scores: usize,
    /// Integer weights of the post-change distribution; pairs with `--r`.
    #[arg(long, value_delimiter = ',', requires = "r")]
    pub q: Vec<u32>,
    /// Integer weights of the pre-change distribution.
    #[arg(long, value_delimiter = ',', requires = "q")]
    pub r: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}
