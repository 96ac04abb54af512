//! Calibration of discrepancy statistics into left/right p-values.
//!
//! Three backends:
//!
//! - empirical: rank the observed `W` among `B` statistics simulated on
//!   i.i.d. uniform data ([`NullQuantileTable`]); exact for finite samples;
//! - asymptotic: `1 − F_φ(W)` with the Kolmogorov limit law, or the one-term
//!   `2·exp(−2W²)` approximation;
//! - permutation: rank against statistics recomputed on resampled data, either
//!   i.i.d. uniform (identical to the empirical backend) or with the segments
//!   before and after `t` permuted independently.
//!
//! All exceedance p-values share one formula:
//! `(θ + Σ_b 1{W_b > W} + θ·1{W_b = W}) / (B + 1)`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{self, BackwardPValues, DiscrepancyScores, ThetaSource};
use crate::error::{Error, Result, Side};
use crate::rng::RandomStream;
use crate::scores::{IdentityFamily, ScoreFamily};
use crate::stats::kolmogorov_survival;

pub const DEFAULT_NULL_SIZE: usize = 1000;
pub const DEFAULT_HYBRID_THRESHOLD: usize = 100;
const TABLE_MAGIC: &[u8; 8] = b"MCPNULL1";

/// `B` simulated discrepancy trajectories on i.i.d. Unif(0,1) data.
#[derive(Debug, Clone)]
pub struct NullQuantileTable {
    n: usize,
    b: usize,
    seed: u64,
    /// `t`-major: `w0[(t − 1)·B + b]`.
    w0: Vec<f64>,
    /// `t`-major; NaN at `t = n`.
    w1: Vec<f64>,
}

impl PartialEq for NullQuantileTable {
    fn eq(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.n == other.n
            && self.b == other.b
            && self.seed == other.seed
            && bits(&self.w0) == bits(&other.w0)
            && bits(&self.w1) == bits(&other.w1)
    }
}

/// Trajectory `b` of a null table: the identity family on uniform data.
fn null_trajectory(n: usize, stream: &RandomStream) -> DiscrepancyScores {
    let mut rng = stream.child("data").rng();
    let values: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let data = Dataset::scalar(values).expect("uniform draws are finite and n >= 2");
    engine::discrepancy_scores(&data, &IdentityFamily, &stream.child("theta"))
        .expect("the identity family cannot fail on finite scalars")
}

pub fn build_null_table(n: usize, b: usize, rng: &RandomStream) -> Result<NullQuantileTable> {
    if n < 2 || b < 1 {
        return Err(Error::domain(format!("null table needs n >= 2 and B >= 1, got n={n}, B={b}")));
    }
    let trajectories: Vec<DiscrepancyScores> = (0..b)
        .into_par_iter()
        .map(|i| null_trajectory(n, &rng.indexed(i as u64)))
        .collect();
    let mut w0 = vec![0.0; n * b];
    let mut w1 = vec![0.0; n * b];
    for (i, w) in trajectories.iter().enumerate() {
        for t in 0..n {
            w0[t * b + i] = w.w0_all()[t];
            w1[t * b + i] = w.w1_all()[t];
        }
    }
    Ok(NullQuantileTable {
        n,
        b,
        seed: rng.seed(),
        w0,
        w1,
    })
}

/// The `(W⁽⁰⁾_t, W⁽¹⁾_t)` samples that [`build_null_table`] would store for a
/// single `t`, without simulating the other columns' ranks and KS distances.
pub fn null_column(n: usize, b: usize, t: usize, rng: &RandomStream) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 || b < 1 || t == 0 || t > n {
        return Err(Error::domain(format!("null column needs n >= 2, B >= 1, t in [1, n]; got n={n}, B={b}, t={t}")));
    }
    let pairs: Vec<(f64, f64)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let stream = rng.indexed(i as u64);
            let mut data_rng = stream.child("data").rng();
            let values: Vec<f64> = (0..n).map(|_| data_rng.gen()).collect();
            let data = Dataset::scalar(values).expect("uniform draws are finite and n >= 2");
            engine::column_statistics(&data, &IdentityFamily, &stream.child("theta"), t)
                .expect("the identity family cannot fail on finite scalars")
        })
        .collect();
    Ok(pairs.into_iter().unzip())
}

impl NullQuantileTable {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of simulated trajectories `B`.
    pub fn size(&self) -> usize {
        self.b
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The table for a series of length `n <= self.n()`.
    ///
    /// Under the null `W⁽⁰⁾_t` is the statistic of `t` i.i.d. uniform ranks
    /// and `W⁽¹⁾_t` that of `n − t`, whatever the series length, so the
    /// columns `t` of `W⁽⁰⁾` and `N − n + t` of `W⁽¹⁾` carry exactly the
    /// null laws of length `n`.
    pub fn restricted(&self, n: usize) -> Result<NullQuantileTable> {
        if n < 2 || n > self.n {
            return Err(Error::domain(format!(
                "cannot restrict a table for n={} to n={n}",
                self.n
            )));
        }
        let b = self.b;
        Ok(NullQuantileTable {
            n,
            b,
            seed: self.seed,
            w0: self.w0[..n * b].to_vec(),
            w1: self.w1[(self.n - n) * b..].to_vec(),
        })
    }

    /// The `B` simulated `W⁽⁰⁾_t`.
    pub fn w0(&self, t: usize) -> &[f64] {
        &self.w0[(t - 1) * self.b..t * self.b]
    }

    /// The `B` simulated `W⁽¹⁾_t`; NaN at `t = n`.
    pub fn w1(&self, t: usize) -> &[f64] {
        &self.w1[(t - 1) * self.b..t * self.b]
    }

    /// Binary layout: `"MCPNULL1"`, `u32` n, `u32` B, `u64` seed, then the
    /// `B × n` trajectory-major `W⁽⁰⁾` array followed by `W⁽¹⁾`; little-endian.
    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        w.write_all(&(self.b as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for arr in [&self.w0, &self.w1] {
            for i in 0..self.b {
                for t in 0..self.n {
                    w.write_all(&arr[t * self.b + i].to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("null table file is truncated".into()))?;
        if &magic != TABLE_MAGIC {
            return Err(Error::Format(format!(
                "null table header {:?} is not \"MCPNULL1\"; delete the cached file and rebuild it",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let n = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let b = u32::from_le_bytes(u32buf) as usize;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let seed = u64::from_le_bytes(u64buf);
        let mut arrays = [vec![0.0; n * b], vec![0.0; n * b]];
        for arr in &mut arrays {
            for i in 0..b {
                for t in 0..n {
                    r.read_exact(&mut u64buf)
                        .map_err(|_| Error::Format("null table file is truncated".into()))?;
                    arr[t * b + i] = f64::from_le_bytes(u64buf);
                }
            }
        }
        let [w0, w1] = arrays;
        Ok(NullQuantileTable { n, b, seed, w0, w1 })
    }
}

type TableSlot = Arc<Mutex<Option<Arc<NullQuantileTable>>>>;

/// Null tables keyed by `(n, B, seed)`, kept in memory and optionally on disk.
/// Concurrent requests for the same key wait for a single build.
#[derive(Debug, Default)]
pub struct NullTableCache {
    dir: Option<PathBuf>,
    tables: Mutex<HashMap<(usize, usize, u64), TableSlot>>,
}

impl NullTableCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Cache that also persists tables as files under `dir`.
    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        NullTableCache {
            dir: Some(dir.into()),
            tables: Mutex::default(),
        }
    }

    pub fn file_path(&self, n: usize, b: usize, seed: u64) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(table_file_name(n, b, seed)))
    }

    /// The table for `(n, B, seed)`, simulated with `RandomStream::new(seed, "null-sim")`.
    pub fn get(&self, n: usize, b: usize, seed: u64) -> Result<Arc<NullQuantileTable>> {
        let key = (n, b, seed);
        let slot = Arc::clone(self.tables.lock().expect("cache lock").entry(key).or_default());
        let mut slot = slot.lock().expect("cache slot lock");
        if let Some(t) = slot.as_ref() {
            return Ok(Arc::clone(t));
        }
        let table = match self.file_path(n, b, seed) {
            Some(path) if path.exists() => {
                let table = NullQuantileTable::read_from(fs::File::open(&path)?)?;
                if (table.n, table.b, table.seed) != key {
                    return Err(Error::Format(format!(
                        "{} holds a table for n={}, B={}, seed={}; delete it and rebuild",
                        path.display(),
                        table.n,
                        table.b,
                        table.seed
                    )));
                }
                table
            }
            path => {
                let table = build_null_table(n, b, &RandomStream::new(seed, "null-sim"))?;
                if let Some(path) = path {
                    write_atomically(&path, |w| table.write_to(w))?;
                }
                table
            }
        };
        let table = Arc::new(table);
        *slot = Some(Arc::clone(&table));
        Ok(table)
    }
}

pub fn table_file_name(n: usize, b: usize, seed: u64) -> String {
    format!("null-n{n}-B{b}-seed{seed}.mcpnull")
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomically(path: &Path, write: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        write(&mut f)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Resampling scheme of the permutation test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermutationMode {
    /// Fresh i.i.d. uniform data; coincides with the empirical test.
    Uniform,
    /// Independent permutations of `X_1..X_t` and `X_{t+1}..X_n`.
    #[default]
    Permute,
}

/// How discrepancy statistics are turned into p-values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TestMethod {
    #[default]
    Empirical,
    Asymptotic {
        #[serde(default)]
        fast: bool,
    },
    Permutation {
        resamples: usize,
        #[serde(default)]
        mode: PermutationMode,
    },
    /// Asymptotic where `min(t, n − t) >= threshold`, empirical elsewhere.
    Hybrid { threshold: usize },
}

impl TestMethod {
    /// Whether this method reads a [`NullQuantileTable`].
    pub fn needs_table(&self) -> bool {
        matches!(self, TestMethod::Empirical | TestMethod::Hybrid { .. })
    }
}

/// Left and right p-values per candidate, plus the backward p-value standing
/// in for the missing right side at `t = n`.
#[derive(Debug, Clone)]
pub struct SidePValues {
    left: Vec<f64>,
    /// NaN at `t = n`.
    right: Vec<f64>,
    backward: Option<f64>,
}

impl PartialEq for SidePValues {
    fn eq(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(&self.left) == bits(&other.left)
            && bits(&self.right) == bits(&other.right)
            && self.backward.map(f64::to_bits) == other.backward.map(f64::to_bits)
    }
}

impl SidePValues {
    pub fn new(left: Vec<f64>, right: Vec<f64>, backward: Option<f64>) -> Result<Self> {
        if left.len() != right.len() || left.len() < 2 {
            return Err(Error::domain("side p-value vectors must share a length >= 2"));
        }
        Ok(SidePValues { left, right, backward })
    }

    pub fn n(&self) -> usize {
        self.left.len()
    }

    pub fn left(&self, t: usize) -> f64 {
        self.left[t - 1]
    }

    /// `None` at `t = n`.
    pub fn right(&self, t: usize) -> Option<f64> {
        let v = self.right[t - 1];
        (!v.is_nan()).then_some(v)
    }

    pub fn backward(&self) -> Option<f64> {
        self.backward
    }

    pub fn left_all(&self) -> &[f64] {
        &self.left
    }

    pub fn with_backward(mut self, backward: Option<f64>) -> Self {
        self.backward = backward;
        self
    }
}

/// `(θ + #{W_b > W} + θ·#{W_b = W}) / (B + 1)`.
pub fn exceedance_pvalue(observed: f64, samples: &[f64], theta: f64) -> f64 {
    let (mut greater, mut equal) = (0usize, 0usize);
    for &s in samples {
        if s > observed {
            greater += 1;
        } else if s == observed {
            equal += 1;
        }
    }
    (theta + greater as f64 + theta * equal as f64) / (samples.len() + 1) as f64
}

/// `θ_0` for `(t, side)`.
fn test_theta(rng: &RandomStream, side: Side, t: usize) -> f64 {
    let mut th = [0.0];
    rng.fill(side, t, &mut th);
    th[0]
}

fn check_table(n: usize, table: &NullQuantileTable) -> Result<()> {
    if table.n != n {
        return Err(Error::config(format!("null table was built for n={}, data has n={n}", table.n)));
    }
    Ok(())
}

pub fn empirical_test(w: &DiscrepancyScores, table: &NullQuantileTable, rng: &RandomStream) -> Result<SidePValues> {
    let n = w.n();
    check_table(n, table)?;
    let left = (1..=n)
        .map(|t| exceedance_pvalue(w.w0(t), table.w0(t), test_theta(rng, Side::Left, t)))
        .collect();
    let right = (1..=n)
        .map(|t| match w.w1(t) {
            Some(w1) => exceedance_pvalue(w1, table.w1(t), test_theta(rng, Side::Right, t)),
            None => f64::NAN,
        })
        .collect();
    Ok(SidePValues {
        left,
        right,
        backward: None,
    })
}

/// Empirical p-value of `W̄ = √n·KS(p̄)`: the backward ranks of `n` exchangeable
/// points have the same law as the forward ranks, so `W⁽⁰⁾_n` is the null sample.
pub fn empirical_backward(statistic: f64, table: &NullQuantileTable, rng: &RandomStream) -> f64 {
    exceedance_pvalue(statistic, table.w0(table.n), test_theta(rng, Side::Backward, table.n))
}

/// `1 − F_φ(W)`, or `min(1, 2·exp(−2W²))` when `fast`.
pub fn asymptotic_pvalue(w: f64, fast: bool) -> f64 {
    if fast {
        (2.0 * (-2.0 * w * w).exp()).min(1.0)
    } else {
        kolmogorov_survival(w.max(0.0)).expect("nonnegative argument")
    }
}

pub fn asymptotic_test(w: &DiscrepancyScores, fast: bool) -> SidePValues {
    let n = w.n();
    SidePValues {
        left: (1..=n).map(|t| asymptotic_pvalue(w.w0(t), fast)).collect(),
        right: (1..=n)
            .map(|t| w.w1(t).map_or(f64::NAN, |v| asymptotic_pvalue(v, fast)))
            .collect(),
        backward: None,
    }
}

/// Per-`t` asymptotic/empirical switch at `min(t, n − t) >= threshold`.
pub fn hybrid_test(
    w: &DiscrepancyScores,
    table: &NullQuantileTable,
    threshold: usize,
    rng: &RandomStream,
) -> Result<SidePValues> {
    let n = w.n();
    let emp = empirical_test(w, table, rng)?;
    let asy = asymptotic_test(w, false);
    let pick = |t: usize| t.min(n - t) >= threshold;
    let left = (1..=n).map(|t| if pick(t) { asy.left(t) } else { emp.left(t) }).collect();
    let right = (1..=n)
        .map(|t| if pick(t) { asy.right[t - 1] } else { emp.right[t - 1] })
        .collect();
    Ok(SidePValues {
        left,
        right,
        backward: None,
    })
}

fn permuted_segments(data: &Dataset, t: usize, stream: &RandomStream) -> Dataset {
    let n = data.len();
    let mut rng = stream.rng();
    let mut order: Vec<usize> = (0..n).collect();
    order[..t].shuffle(&mut rng);
    order[t..].shuffle(&mut rng);
    data.permuted(&order)
}

/// Permutation calibration with `resamples` resampled datasets.
///
/// In [`PermutationMode::Uniform`] this is exactly
/// `empirical_test(w, &build_null_table(n, B, &rng.child("null-sim")), &rng.child("test"))`.
/// In [`PermutationMode::Permute`] each `t` gets its own resamples, scored by
/// the given family.
pub fn permutation_test(
    data: &Dataset,
    family: &dyn ScoreFamily,
    w: &DiscrepancyScores,
    resamples: usize,
    mode: PermutationMode,
    rng: &RandomStream,
) -> Result<SidePValues> {
    let n = data.len();
    if resamples < 1 {
        return Err(Error::domain("permutation test needs at least one resample"));
    }
    if w.n() != n {
        return Err(Error::config("discrepancies and data differ in length"));
    }
    let test_rng = rng.child("test");
    if mode == PermutationMode::Uniform {
        let table = build_null_table(n, resamples, &rng.child("null-sim"))?;
        return empirical_test(w, &table, &test_rng);
    }
    let perm = rng.child("permutation");
    let columns = (1..=n)
        .into_par_iter()
        .map(|t| {
            let per_t = perm.indexed(t as u64);
            let (w0s, w1s): (Vec<f64>, Vec<f64>) = (0..resamples)
                .map(|b| {
                    let stream = per_t.indexed(b as u64);
                    let shuffled = permuted_segments(data, t, &stream);
                    engine::column_statistics(&shuffled, family, &stream.child("theta"), t)
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            let left = exceedance_pvalue(w.w0(t), &w0s, test_theta(&test_rng, Side::Left, t));
            let right = match w.w1(t) {
                Some(obs) => exceedance_pvalue(obs, &w1s, test_theta(&test_rng, Side::Right, t)),
                None => f64::NAN,
            };
            Ok((left, right))
        })
        .collect::<Result<Vec<_>>>()?;
    let (left, right) = columns.into_iter().unzip();
    Ok(SidePValues {
        left,
        right,
        backward: None,
    })
}

/// Permutation p-value of the backward statistic: whole-sequence shuffles.
pub fn permutation_backward(
    data: &Dataset,
    family: &dyn ScoreFamily,
    statistic: f64,
    resamples: usize,
    rng: &RandomStream,
) -> Result<f64> {
    let n = data.len();
    let perm = rng.child("permutation").child("backward");
    let samples = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let stream = perm.indexed(b as u64);
            let shuffled = permuted_segments(data, n, &stream);
            engine::backward_pvalues(&shuffled, family, &stream.child("theta")).map(|p| p.statistic())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(exceedance_pvalue(statistic, &samples, test_theta(&rng.child("test"), Side::Backward, n)))
}

/// Everything a backend may need besides the discrepancies.
pub struct Calibration<'a> {
    pub method: TestMethod,
    pub table: Option<&'a NullQuantileTable>,
}

impl Calibration<'_> {
    fn table(&self) -> Result<&NullQuantileTable> {
        self.table
            .ok_or_else(|| Error::config("the empirical and hybrid tests need a null table"))
    }

    /// Side p-values for every candidate; the backward p-value is filled in
    /// when `backward` is given.
    pub fn side_pvalues(
        &self,
        data: &Dataset,
        family: &dyn ScoreFamily,
        w: &DiscrepancyScores,
        backward: Option<&BackwardPValues>,
        rng: &RandomStream,
    ) -> Result<SidePValues> {
        let n = data.len();
        let test_rng = rng.child("test");
        let sides = match self.method {
            TestMethod::Empirical => empirical_test(w, self.table()?, &test_rng)?,
            TestMethod::Asymptotic { fast } => asymptotic_test(w, fast),
            TestMethod::Hybrid { threshold } => hybrid_test(w, self.table()?, threshold, &test_rng)?,
            TestMethod::Permutation { resamples, mode } => permutation_test(data, family, w, resamples, mode, rng)?,
        };
        let Some(back) = backward else {
            return Ok(sides);
        };
        let stat = back.statistic();
        let p = match self.method {
            // t = n sits below any hybrid threshold.
            TestMethod::Empirical | TestMethod::Hybrid { .. } => empirical_backward(stat, self.table()?, &test_rng),
            TestMethod::Asymptotic { fast } => asymptotic_pvalue(stat, fast),
            TestMethod::Permutation {
                mode: PermutationMode::Uniform,
                resamples,
            } => {
                let table = build_null_table(n, resamples, &rng.child("null-sim"))?;
                empirical_backward(stat, &table, &test_rng)
            }
            TestMethod::Permutation {
                mode: PermutationMode::Permute,
                resamples,
            } => permutation_backward(data, family, stat, resamples, rng)?,
        };
        Ok(sides.with_backward(Some(p)))
    }
}
