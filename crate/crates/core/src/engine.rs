//! The matrix of conformal p-values and its discrepancy statistics.
//!
//! Column `t` of the matrix holds, for every row `r`, the randomized
//! sequential rank of `X_r`:
//!
//! - left block (`r <= t`): rank of `κ_rr` among `κ_r1..κ_rr`, scored with the
//!   left family on bag `⟦X_1..X_r⟧` and context `(X_{t+1}..X_n)`, divided by `r`;
//! - right block (`r > t`): rank of `κ_rr` among `κ_rr..κ_rn`, scored with the
//!   right family on bag `⟦X_r..X_n⟧` and context `(X_1..X_t)`, divided by `n − r + 1`.
//!
//! `W⁽⁰⁾_t = √t · KS(left block)` and `W⁽¹⁾_t = √(n−t) · KS(right block)`.
//!
//! Every θ is keyed by `(side, t, position)` through a [`ThetaSource`], so the
//! shared-column shortcut for non-adaptive families, the per-column fallback
//! and any parallel schedule consume identical randomness.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;

use crate::data::{format_sig17, Dataset};
use crate::error::{Error, Result, ScoreError, Side};
use crate::rng::RandomStream;
use crate::scores::{PreparedScores, ScoreFamily};
use crate::stats::{ks_uniform_in_place, rank_from_counts};

const MATRIX_MAGIC: &[u8; 4] = b"MCP1";

/// Supplier of the uniform θ draws used by the randomized ranks.
///
/// `fill(side, t, out)` writes the θ's of column `t`: position `k` belongs to
/// row `k + 1` on the left side and to row `n − k` on the right and backward
/// sides (distance from the far end of the sequence).
pub trait ThetaSource: Sync {
    fn fill(&self, side: Side, t: usize, out: &mut [f64]);
}

impl ThetaSource for RandomStream {
    fn fill(&self, side: Side, t: usize, out: &mut [f64]) {
        let mut rng = self.rng_for(t as u64 * 4 + side.code());
        for o in out {
            *o = rng.gen();
        }
    }
}

/// Greater/equal counts for one randomized rank, stored per row.
#[derive(Debug, Clone, Default)]
struct RankCounts {
    greater: Vec<u32>,
    equal: Vec<u32>,
}

/// Sequential counts: entry `k` compares `scores[k]` with `scores[0..=k]`.
fn sequential_counts(scores: &[f64]) -> RankCounts {
    let m = scores.len();
    let mut sorted: Vec<f64> = scores.iter().map(|&s| s + 0.0).collect();
    sorted.sort_unstable_by(f64::total_cmp);
    sorted.dedup();
    let mut tree = Fenwick::new(sorted.len());
    let mut out = RankCounts {
        greater: Vec::with_capacity(m),
        equal: Vec::with_capacity(m),
    };
    for (k, &s) in scores.iter().enumerate() {
        let rank = sorted.partition_point(|&v| v < s + 0.0);
        tree.add(rank);
        let at_most = tree.prefix(rank + 1);
        let below = tree.prefix(rank);
        out.greater.push((k + 1 - at_most) as u32);
        out.equal.push((at_most - below) as u32);
    }
    out
}

/// Reverse-sequential counts: entry `k` compares `scores[k]` with `scores[k..]`.
fn reverse_sequential_counts(scores: &[f64]) -> RankCounts {
    let rev: Vec<f64> = scores.iter().rev().copied().collect();
    let mut c = sequential_counts(&rev);
    c.greater.reverse();
    c.equal.reverse();
    c
}

struct Fenwick {
    tree: Vec<u32>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0; n + 1] }
    }

    fn add(&mut self, index: usize) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted elements with index `< end`.
    fn prefix(&self, end: usize) -> usize {
        let mut i = end;
        let mut s = 0usize;
        while i > 0 {
            s += self.tree[i] as usize;
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// How rank counts are obtained for a family.
enum Plan<'a> {
    /// Counts depend on the row only; computed once for all columns.
    Shared { left: RankCounts, right: RankCounts },
    /// Counts recomputed per column; `pointwise` enables sorted sequential ranks.
    PerColumn {
        prep: Box<dyn PreparedScores + 'a>,
        pointwise: bool,
    },
}

fn located(side: Side, t: usize, r: usize, j: usize) -> impl FnOnce(ScoreError) -> Error {
    move |source| Error::Score { side, t, r, j, source }
}

/// Counts of the left block of column `t` (rows `1..=t`). `t` is never read by
/// non-adaptive families, so the shared plan calls this with `t = n`.
fn left_counts(prep: &dyn PreparedScores, pointwise: bool, t: usize, rows: usize) -> Result<RankCounts> {
    if pointwise {
        let scores = (1..=rows)
            .map(|j| prep.left(t, j, j).map_err(located(Side::Left, t, j, j)))
            .collect::<Result<Vec<_>>>()?;
        return Ok(sequential_counts(&scores));
    }
    let mut out = RankCounts::default();
    let mut kappa = Vec::with_capacity(rows);
    for r in 1..=rows {
        kappa.clear();
        for j in 1..=r {
            kappa.push(prep.left(t, r, j).map_err(located(Side::Left, t, r, j))?);
        }
        let (g, e) = crate::stats::rank_counts(&kappa, kappa[r - 1]);
        out.greater.push(g as u32);
        out.equal.push(e as u32);
    }
    Ok(out)
}

/// Counts of the right block of column `t` (rows `t+1..=n`), in row order.
fn right_counts(prep: &dyn PreparedScores, pointwise: bool, t: usize, n: usize) -> Result<RankCounts> {
    if pointwise {
        let scores = (t + 1..=n)
            .map(|j| prep.right(t, j, j).map_err(located(Side::Right, t, j, j)))
            .collect::<Result<Vec<_>>>()?;
        return Ok(reverse_sequential_counts(&scores));
    }
    let mut out = RankCounts::default();
    let mut kappa = Vec::with_capacity(n - t);
    for r in t + 1..=n {
        kappa.clear();
        for j in r..=n {
            kappa.push(prep.right(t, r, j).map_err(located(Side::Right, t, r, j))?);
        }
        let (g, e) = crate::stats::rank_counts(&kappa, kappa[0]);
        out.greater.push(g as u32);
        out.equal.push(e as u32);
    }
    Ok(out)
}

/// A family bound to a dataset, ready to emit matrix columns.
struct ColumnBuilder<'a> {
    n: usize,
    plan: Plan<'a>,
}

/// The two blocks of one matrix column, in row order.
struct Column {
    left: Vec<f64>,
    right: Vec<f64>,
}

impl<'a> ColumnBuilder<'a> {
    fn new(data: &'a Dataset, family: &'a dyn ScoreFamily, share: bool) -> Result<Self> {
        let n = data.len();
        let prep = family.prepare(data)?;
        let pointwise = !family.uses_bag();
        let plan = if share && !family.is_adaptive() {
            let left = left_counts(prep.as_ref(), pointwise, n, n)?;
            let right = right_counts(prep.as_ref(), pointwise, 0, n)?;
            Plan::Shared { left, right }
        } else {
            Plan::PerColumn { prep, pointwise }
        };
        Ok(ColumnBuilder { n, plan })
    }

    fn column(&self, t: usize, theta: &dyn ThetaSource) -> Result<Column> {
        let n = self.n;
        let (lc, rc, right_offset);
        let owned;
        match &self.plan {
            Plan::Shared { left, right } => {
                lc = left;
                rc = right;
                right_offset = t;
            }
            Plan::PerColumn { prep, pointwise } => {
                owned = (
                    left_counts(prep.as_ref(), *pointwise, t, t)?,
                    right_counts(prep.as_ref(), *pointwise, t, n)?,
                );
                lc = &owned.0;
                rc = &owned.1;
                right_offset = 0;
            }
        }
        let mut left = vec![0.0; t];
        theta.fill(Side::Left, t, &mut left);
        for r in 1..=t {
            left[r - 1] = rank_from_counts(lc.greater[r - 1] as usize, lc.equal[r - 1] as usize, r, left[r - 1]);
        }
        let mut thetas = vec![0.0; n - t];
        theta.fill(Side::Right, t, &mut thetas);
        let right = (t + 1..=n)
            .map(|r| {
                let k = r - t - 1 + right_offset;
                rank_from_counts(rc.greater[k] as usize, rc.equal[k] as usize, n - r + 1, thetas[n - r])
            })
            .collect();
        Ok(Column { left, right })
    }
}

/// `n × n` matrix of per-anomaly p-values `p_r⁽ᵗ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueMatrix {
    n: usize,
    /// Row-major: `entries[(r − 1) · n + (t − 1)]`; NaN marks an absent entry.
    entries: Vec<f64>,
    rank_evaluations: u64,
}

impl PValueMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry `p_r⁽ᵗ⁾` (1-based), or `None` when absent or out of range.
    pub fn get(&self, r: usize, t: usize) -> Option<f64> {
        if r == 0 || t == 0 || r > self.n || t > self.n {
            return None;
        }
        let v = self.entries[(r - 1) * self.n + (t - 1)];
        (!v.is_nan()).then_some(v)
    }

    /// Left block of column `t`: `p_1⁽ᵗ⁾..p_t⁽ᵗ⁾`.
    pub fn left_block(&self, t: usize) -> Vec<f64> {
        (1..=t).map(|r| self.entries[(r - 1) * self.n + (t - 1)]).collect()
    }

    /// Right block of column `t`: `p_{t+1}⁽ᵗ⁾..p_n⁽ᵗ⁾`.
    pub fn right_block(&self, t: usize) -> Vec<f64> {
        (t + 1..=self.n).map(|r| self.entries[(r - 1) * self.n + (t - 1)]).collect()
    }

    /// Number of randomized-rank evaluations spent building the matrix.
    pub fn rank_evaluations(&self) -> u64 {
        self.rank_evaluations
    }

    /// CSV with `n` rows (`r`) and `n` columns (`t`); absent entries are empty.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        for r in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|t| {
                    let v = self.entries[r * self.n + t];
                    if v.is_nan() { String::new() } else { format_sig17(v) }
                })
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Binary dump: `"MCP1"`, `u32` n, then `n²` row-major `f64`, all little-endian.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MATRIX_MAGIC)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        for v in &self.entries {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MATRIX_MAGIC {
            return Err(Error::Format(format!("bad matrix header {magic:?}, expected \"MCP1\"")));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let n = u32::from_le_bytes(word) as usize;
        let mut entries = vec![0.0; n * n];
        let mut buf = [0u8; 8];
        for e in &mut entries {
            r.read_exact(&mut buf)?;
            *e = f64::from_le_bytes(buf);
        }
        Ok(PValueMatrix {
            n,
            entries,
            rank_evaluations: 0,
        })
    }
}

/// `W⁽⁰⁾_t` and `W⁽¹⁾_t` for `t ∈ [n]`; `W⁽¹⁾_n` is absent.
#[derive(Debug, Clone)]
pub struct DiscrepancyScores {
    w0: Vec<f64>,
    w1: Vec<f64>,
}

impl PartialEq for DiscrepancyScores {
    fn eq(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(&self.w0) == bits(&other.w0) && bits(&self.w1) == bits(&other.w1)
    }
}

impl DiscrepancyScores {
    pub fn new(w0: Vec<f64>, w1: Vec<f64>) -> Result<Self> {
        if w0.len() != w1.len() || w0.len() < 2 {
            return Err(Error::domain("discrepancy vectors must share a length >= 2"));
        }
        Ok(DiscrepancyScores { w0, w1 })
    }

    pub fn n(&self) -> usize {
        self.w0.len()
    }

    pub fn w0(&self, t: usize) -> f64 {
        self.w0[t - 1]
    }

    /// `None` at `t = n`.
    pub fn w1(&self, t: usize) -> Option<f64> {
        let v = self.w1[t - 1];
        (!v.is_nan()).then_some(v)
    }

    pub fn w0_all(&self) -> &[f64] {
        &self.w0
    }

    /// Right statistics with NaN at `t = n`.
    pub fn w1_all(&self) -> &[f64] {
        &self.w1
    }
}

fn column_discrepancy(mut col: Column) -> (f64, f64) {
    let t = col.left.len();
    let m = col.right.len();
    let w0 = (t as f64).sqrt() * ks_uniform_in_place(&mut col.left);
    let w1 = if m == 0 {
        f64::NAN
    } else {
        (m as f64).sqrt() * ks_uniform_in_place(&mut col.right)
    };
    (w0, w1)
}

pub fn compute_matrix(data: &Dataset, family: &dyn ScoreFamily, theta: &dyn ThetaSource) -> Result<PValueMatrix> {
    build_matrix(data, family, theta, true)
}

/// Per-column recomputation without the non-adaptive sharing shortcut.
///
/// Produces the same matrix as [`compute_matrix`]; kept as the reference for
/// that equivalence.
pub fn compute_matrix_unshared(
    data: &Dataset,
    family: &dyn ScoreFamily,
    theta: &dyn ThetaSource,
) -> Result<PValueMatrix> {
    build_matrix(data, family, theta, false)
}

fn build_matrix(data: &Dataset, family: &dyn ScoreFamily, theta: &dyn ThetaSource, share: bool) -> Result<PValueMatrix> {
    let n = data.len();
    let builder = ColumnBuilder::new(data, family, share)?;
    let columns = (1..=n)
        .into_par_iter()
        .map(|t| builder.column(t, theta))
        .collect::<Result<Vec<_>>>()?;
    let mut entries = vec![f64::NAN; n * n];
    for (ti, col) in columns.iter().enumerate() {
        for (ri, &p) in col.left.iter().chain(&col.right).enumerate() {
            entries[ri * n + ti] = p;
        }
    }
    Ok(PValueMatrix {
        n,
        entries,
        rank_evaluations: (n * n) as u64,
    })
}

/// Discrepancy statistics of a populated matrix.
pub fn discrepancies(matrix: &PValueMatrix) -> DiscrepancyScores {
    let n = matrix.n;
    let (w0, w1) = (1..=n)
        .map(|t| {
            column_discrepancy(Column {
                left: matrix.left_block(t),
                right: matrix.right_block(t),
            })
        })
        .unzip();
    DiscrepancyScores { w0, w1 }
}

/// `discrepancies(&compute_matrix(..))` without materialising the matrix.
pub fn discrepancy_scores(data: &Dataset, family: &dyn ScoreFamily, theta: &dyn ThetaSource) -> Result<DiscrepancyScores> {
    let n = data.len();
    let builder = ColumnBuilder::new(data, family, true)?;
    let (w0, w1) = (1..=n)
        .into_par_iter()
        .map(|t| builder.column(t, theta).map(column_discrepancy))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(DiscrepancyScores { w0, w1 })
}

/// Statistic of a single column `t`, used by the permutation test.
pub(crate) fn column_statistics(
    data: &Dataset,
    family: &dyn ScoreFamily,
    theta: &dyn ThetaSource,
    t: usize,
) -> Result<(f64, f64)> {
    let builder = ColumnBuilder::new(data, family, false)?;
    builder.column(t, theta).map(column_discrepancy)
}

/// Reverse sequential ranks `p̄_1..p̄_n` for testing `H_0n`.
///
/// `p̄_k` ranks the right score of `X_{n−k+1}` among those of
/// `X_{n−k+1}..X_n`, with bag `⟦X_{n−k+1}..X_n⟧` and an empty context.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPValues {
    values: Vec<f64>,
}

impl BackwardPValues {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `W̄ = √n · KS(p̄, u)`.
    pub fn statistic(&self) -> f64 {
        let mut v = self.values.clone();
        (v.len() as f64).sqrt() * ks_uniform_in_place(&mut v)
    }
}

pub fn backward_pvalues(data: &Dataset, family: &dyn ScoreFamily, theta: &dyn ThetaSource) -> Result<BackwardPValues> {
    let n = data.len();
    let prep = family.prepare(data)?;
    let counts = right_counts(prep.as_ref(), !family.uses_bag(), 0, n).map_err(|e| match e {
        Error::Score { t, r, j, source, .. } => Error::Score {
            side: Side::Backward,
            t,
            r,
            j,
            source,
        },
        other => other,
    })?;
    let mut thetas = vec![0.0; n];
    theta.fill(Side::Backward, n, &mut thetas);
    let values = (1..=n)
        .map(|k| {
            let row = n - k;
            rank_from_counts(counts.greater[row] as usize, counts.equal[row] as usize, k, thetas[k - 1])
        })
        .collect();
    Ok(BackwardPValues { values })
}
