use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mcp_core::combine::RunEcho;
use mcp_core::data::format_sig17;
use mcp_core::engine::compute_matrix;
use mcp_core::experiment::{
    np_power_oracle, piecewise_oracle, run_experiment, DiscreteDist, ExperimentConfig, NpOracleReport,
};
use mcp_core::multi::{multi_localize, MultiConfig};
use mcp_core::scores::{
    BinaryClassifierFamily, ClassProbTable, ClassifierFamily, DensityPair, IdentityFamily, KdeFamily, OracleLrFamily,
};
use mcp_core::testing::{build_null_table, table_file_name, write_atomically, PermutationMode};
use mcp_core::{
    localize, Combiner, Dataset, Error, LocalizationReport, LocalizeConfig, NullTableCache, RandomStream, ScoreFamily,
    TestMethod,
};

use crate::args::*;

pub const CACHE_ENV: &str = "MCP_CACHE_DIR";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const VALIDATION: u8 = 2;
    pub const COMPUTE: u8 = 3;

    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            code: Self::VALIDATION,
            message: message.into(),
        }
    }

    /// Errors while reading user-supplied files: an unreadable file is bad input.
    fn input(path: &Path, e: Error) -> Self {
        match e {
            Error::Io(io) => Failure::invalid(format!("cannot read {}: {io}", path.display())),
            other => Failure::invalid(format!("{}: {other}", path.display())),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_validation() { Self::VALIDATION } else { Self::COMPUTE },
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

pub fn run(cli: Cli) -> CmdResult {
    match cli.workers {
        Some(0) => Err(Failure::invalid("--workers must be at least 1")),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Failure {
                    code: Failure::COMPUTE,
                    message: format!("cannot start {w} workers: {e}"),
                })?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Localize(a) => cmd_localize(a),
        Command::Multi(a) => cmd_multi(a),
        Command::NullTable(a) => cmd_null_table(a),
        Command::Bench(a) => cmd_bench(a),
        Command::NpOracle(a) => cmd_np_oracle(a),
    }
}

fn cache() -> NullTableCache {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => NullTableCache::with_dir(dir),
        _ => NullTableCache::in_memory(),
    }
}

/// Writes `bytes` atomically to `path`, or to standard output.
fn emit(path: Option<&Path>, bytes: &[u8]) -> CmdResult {
    match path {
        Some(p) => write_atomically(p, |f| Ok(f.write_all(bytes)?))?,
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(bytes).and_then(|_| out.flush()) {
                // A reader that stopped early (`| head`) is not a failure.
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r.map_err(Error::from)?,
            }
        }
    }
    Ok(())
}

fn to_json(value: &impl Serialize) -> Result<Vec<u8>, Failure> {
    let mut s = serde_json::to_vec_pretty(value).map_err(|e| Failure {
        code: Failure::COMPUTE,
        message: format!("cannot serialize result: {e}"),
    })?;
    s.push(b'\n');
    Ok(s)
}

fn read_data(path: &Path) -> Result<Dataset, Failure> {
    Dataset::read_csv_path(path).map_err(|e| Failure::input(path, e))
}

fn score_family(args: &ScoreArgs, data: &Dataset) -> Result<Box<dyn ScoreFamily>, Failure> {
    if !args.delta.is_finite() {
        return Err(Failure::invalid("--delta must be finite"));
    }
    let probs = || -> Result<ClassProbTable, Failure> {
        let path = args
            .probs
            .as_ref()
            .ok_or_else(|| Failure::invalid("classifier scores need --probs"))?;
        let table = ClassProbTable::read_csv_path(path).map_err(|e| Failure::input(path, e))?;
        if table.len() != data.len() {
            return Err(Failure::invalid(format!(
                "{} has {} probability rows for {} observations",
                path.display(),
                table.len(),
                data.len()
            )));
        }
        Ok(table)
    };
    Ok(match args.score {
        ScoreKind::Identity => Box::new(IdentityFamily),
        ScoreKind::OracleGaussian => Box::new(OracleLrFamily::new(DensityPair::gaussian_shift(args.delta))),
        ScoreKind::OracleCauchy => Box::new(OracleLrFamily::new(DensityPair::cauchy_shift(args.delta))),
        ScoreKind::Kde => Box::new(KdeFamily::default()),
        ScoreKind::Classifier => Box::new(ClassifierFamily::new(probs()?)),
        ScoreKind::BinaryClassifier => {
            let table = probs()?;
            let label = match &args.class {
                Some(c) => table
                    .labels()
                    .iter()
                    .position(|l| l == c)
                    .ok_or_else(|| Failure::invalid(format!("no class column named {c:?}")))?,
                None => table.labels().len() - 1,
            };
            Box::new(BinaryClassifierFamily::from_table(&table, label)?)
        }
    })
}

fn score_name(kind: ScoreKind) -> &'static str {
    match kind {
        ScoreKind::Identity => "identity",
        ScoreKind::OracleGaussian => "oracle-gaussian",
        ScoreKind::OracleCauchy => "oracle-cauchy",
        ScoreKind::Kde => "kde",
        ScoreKind::Classifier => "classifier",
        ScoreKind::BinaryClassifier => "binary-classifier",
    }
}

fn test_method(args: &TestArgs) -> Result<TestMethod, Failure> {
    if args.null_size == 0 {
        return Err(Failure::invalid("--B must be at least 1"));
    }
    Ok(match args.test {
        TestKind::Empirical => TestMethod::Empirical,
        TestKind::Asymptotic => TestMethod::Asymptotic { fast: false },
        TestKind::AsymptoticFast => TestMethod::Asymptotic { fast: true },
        TestKind::Permutation => {
            if args.resamples == 0 {
                return Err(Failure::invalid("--resamples must be at least 1"));
            }
            TestMethod::Permutation {
                resamples: args.resamples,
                mode: match args.permutation_mode {
                    PermutationKind::Permute => PermutationMode::Permute,
                    PermutationKind::Uniform => PermutationMode::Uniform,
                },
            }
        }
        TestKind::Hybrid => TestMethod::Hybrid {
            threshold: args.threshold,
        },
    })
}

fn combiner(args: &TestArgs) -> Option<Combiner> {
    args.combiner.map(|c| match c {
        CombinerKind::Min => Combiner::Minimum,
        CombinerKind::Fisher => Combiner::Fisher,
        CombinerKind::Bonferroni => Combiner::Bonferroni,
    })
}

fn cmd_localize(a: LocalizeArgs) -> CmdResult {
    let data = read_data(&a.input)?;
    let family = score_family(&a.score, &data)?;
    let method = test_method(&a.test)?;
    let cfg = LocalizeConfig {
        alpha: a.alpha,
        method,
        combiner: combiner(&a.test),
        known_change: a.known_change,
        allow_dependent_combiner: a.test.allow_dependent_combiner,
    };
    let combiner = cfg.resolve_combiner(family.as_ref())?;
    let table = if method.needs_table() {
        Some(cache().get(data.len(), a.test.null_size, a.test.null_seed)?)
    } else {
        None
    };
    let rng = RandomStream::new(a.seed, "localize");
    let loc = localize(&data, family.as_ref(), &cfg, &rng, table.as_deref())?;
    let echo = RunEcho {
        score: score_name(a.score.score).to_owned(),
        method,
        combiner,
        known_change: a.known_change,
        null_size: method.needs_table().then_some(a.test.null_size),
    };
    let report = LocalizationReport::new(&loc, echo, a.seed);

    let body = match a.format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let mut s = format!("# seed={} alpha={} combiner={}\n", a.seed, a.alpha, combiner.name());
            s.push_str("t,p_left,p_right,p_t,member\n");
            let n = data.len();
            for t in 1..=n {
                let right = loc.sides.right(t).map(format_sig17).unwrap_or_default();
                let _ = writeln!(
                    s,
                    "{t},{},{right},{},{}",
                    format_sig17(loc.sides.left(t)),
                    format_sig17(loc.p_values.get(t)),
                    u8::from(loc.set.contains(t))
                );
            }
            s.into_bytes()
        }
    };
    emit(a.output.as_deref(), &body)?;

    if let Some(plot) = &a.plot {
        let mut s = String::from("t,p_t,alpha\n");
        for (i, p) in loc.p_values.values().iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", i + 1, format_sig17(*p), format_sig17(a.alpha));
        }
        emit(Some(plot), s.as_bytes())?;
    }
    if let Some(path) = &a.matrix {
        // Same θ stream as the localization, so the entries are the ones it used.
        let matrix = compute_matrix(&data, family.as_ref(), &rng.child("theta"))?;
        let csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        write_atomically(path, |f| if csv { matrix.write_csv(f) } else { matrix.write_binary(f) })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct WindowOut {
    index: usize,
    start: usize,
    end: usize,
    estimate: usize,
    members: Vec<usize>,
    hull: Option<(usize, usize)>,
    point_estimate: usize,
    /// Window-local candidates `1..=end-start+1`.
    p_values: Vec<f64>,
}

#[derive(Serialize)]
struct MultiOut {
    n: usize,
    k: usize,
    bandwidth: Option<f64>,
    estimates: Vec<usize>,
    cost: f64,
    alpha: f64,
    score: &'static str,
    method: TestMethod,
    null_size: Option<usize>,
    windows: Vec<WindowOut>,
    seed: u64,
}

fn cmd_multi(a: MultiArgs) -> CmdResult {
    let data = read_data(&a.input)?;
    let method = test_method(&a.test)?;
    match a.score {
        ScoreKind::Identity | ScoreKind::Kde => {}
        ScoreKind::OracleGaussian if a.means.len() == a.k + 1 => {}
        ScoreKind::OracleGaussian => {
            return Err(Failure::invalid(format!(
                "oracle-gaussian needs --means with {} values, got {}",
                a.k + 1,
                a.means.len()
            )))
        }
        other => {
            return Err(Failure::invalid(format!(
                "{} scores are not supported per window",
                score_name(other)
            )))
        }
    }
    let cfg = MultiConfig {
        k: a.k,
        bandwidth: a.bandwidth,
        localize: LocalizeConfig {
            alpha: a.alpha,
            method,
            combiner: combiner(&a.test),
            known_change: true,
            allow_dependent_combiner: a.test.allow_dependent_combiner,
        },
        null_size: a.test.null_size,
        null_seed: a.test.null_seed,
    };
    let score = a.score;
    let means = a.means.clone();
    let factory = move |k: usize, _window: &Dataset| -> mcp_core::Result<Box<dyn ScoreFamily>> {
        Ok(match score {
            ScoreKind::OracleGaussian => Box::new(piecewise_oracle(&means, k)?),
            ScoreKind::Kde => Box::new(KdeFamily::default()),
            _ => Box::new(IdentityFamily),
        })
    };
    let rng = RandomStream::new(a.seed, "multi");
    let result = multi_localize(&data, &cfg, &factory, &rng, &cache())?;
    let out = MultiOut {
        n: data.len(),
        k: a.k,
        bandwidth: a.bandwidth,
        estimates: result.segmentation.estimates.clone(),
        cost: result.segmentation.cost,
        alpha: a.alpha,
        score: score_name(score),
        method,
        null_size: method.needs_table().then_some(a.test.null_size),
        windows: result
            .windows
            .iter()
            .map(|w| WindowOut {
                index: w.index,
                start: w.start,
                end: w.end,
                estimate: w.estimate,
                members: w.set.members.clone(),
                hull: w.set.hull,
                point_estimate: w.set.point_estimate,
                p_values: w.local.p_values.values().to_vec(),
            })
            .collect(),
        seed: a.seed,
    };
    emit(a.output.as_deref(), &to_json(&out)?)
}

#[derive(Serialize)]
struct NullTableOut {
    path: String,
    n: usize,
    #[serde(rename = "B")]
    size: usize,
    seed: u64,
}

fn cmd_null_table(a: NullTableArgs) -> CmdResult {
    let path = match &a.output {
        Some(p) => {
            let table = build_null_table(a.n, a.null_size, &RandomStream::new(a.seed, "null-sim"))?;
            write_atomically(p, |f| table.write_to(f))?;
            p.clone()
        }
        None => {
            let dir = std::env::var_os(CACHE_ENV)
                .filter(|d| !d.is_empty())
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."));
            let cache = NullTableCache::with_dir(&dir);
            cache.get(a.n, a.null_size, a.seed)?;
            dir.join(table_file_name(a.n, a.null_size, a.seed))
        }
    };
    let out = NullTableOut {
        path: path.display().to_string(),
        n: a.n,
        size: a.null_size,
        seed: a.seed,
    };
    emit(None, &to_json(&out)?)
}

fn resolve_config(path: &Path) -> PathBuf {
    if path.exists() || path.components().count() > 1 {
        return path.to_path_buf();
    }
    let under = Path::new("configs").join(path);
    if under.exists() {
        under
    } else {
        path.to_path_buf()
    }
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let path = resolve_config(&a.config);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| Failure::input(&path, e))?;
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let report = run_experiment(&cfg, &cache())?;

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    if let Some(p) = &a.output {
        emit(Some(p), &csv)?;
    }
    if let Some(p) = &a.json {
        emit(Some(p), &to_json(&report)?)?;
    }
    if let Some(p) = &a.power {
        let mut power = Vec::new();
        report.write_power_csv(&mut power)?;
        emit(Some(p), &power)?;
    }
    match a.format {
        Some(Format::Csv) => emit(None, &csv),
        Some(Format::Json) => emit(None, &to_json(&report)?),
        None => {
            let mut s = report.summary();
            let _ = writeln!(s, "seed: {}", cfg.seed);
            emit(None, s.as_bytes())
        }
    }
}

#[derive(Serialize)]
struct NpOracleOut {
    seed: u64,
    /// Scores beating the likelihood ratio by more than two standard errors.
    violations: usize,
    reports: Vec<NpOracleReport>,
}

fn cmd_np_oracle(a: NpOracleArgs) -> CmdResult {
    let rng = RandomStream::new(a.seed, "np-oracle");
    let pairs: Vec<(DiscreteDist, DiscreteDist)> = if !a.q.is_empty() {
        if a.q.len() != a.r.len() {
            return Err(Failure::invalid("--q and --r need the same number of weights"));
        }
        vec![(DiscreteDist::from_weights(&a.q)?, DiscreteDist::from_weights(&a.r)?)]
    } else {
        (0..a.pairs as u64)
            .map(|i| {
                let mut g = rng.child("pairs").indexed(i).rng();
                let r = DiscreteDist::random(a.atoms, false, &mut g)?;
                let q = DiscreteDist::random(a.atoms, true, &mut g)?;
                Ok((q, r))
            })
            .collect::<mcp_core::Result<_>>()?
    };
    let reports = pairs
        .iter()
        .enumerate()
        .map(|(i, (q, r))| np_power_oracle(q, r, a.n, a.trials, a.scores, &rng.child("pair").indexed(i as u64)))
        .collect::<mcp_core::Result<Vec<_>>>()?;
    let violations = reports
        .iter()
        .flat_map(|r| &r.results)
        .filter(|s| s.delta.mean < -2.0 * s.delta.se)
        .count();
    let out = NpOracleOut {
        seed: a.seed,
        violations,
        reports,
    };
    match &a.output {
        Some(p) => {
            emit(Some(p), &to_json(&out)?)?;
            let mut s = String::new();
            for (i, r) in out.reports.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "pair {}: q={:?} r={:?} E[T*]={:.4} min z over random scores={:.3}",
                    i + 1,
                    r.q.probs(),
                    r.r.probs(),
                    r.results[0].exact,
                    r.min_z()
                );
            }
            let _ = writeln!(s, "violations: {violations}\nseed: {}", a.seed);
            emit(None, s.as_bytes())
        }
        None => emit(None, &to_json(&out)?),
    }
}
