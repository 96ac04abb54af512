//! Datasets and the unit-interval newtype.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real number in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitInterval(f64);

impl UnitInterval {
    pub const ZERO: UnitInterval = UnitInterval(0.0);
    pub const ONE: UnitInterval = UnitInterval(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(UnitInterval(value))
        } else {
            Err(Error::domain(format!("{value} is outside [0, 1]")))
        }
    }

    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn saturating(value: f64) -> Self {
        if value.is_nan() {
            UnitInterval(0.0)
        } else {
            UnitInterval(value.clamp(0.0, 1.0))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl From<UnitInterval> for f64 {
    fn from(u: UnitInterval) -> f64 {
        u.0
    }
}

/// An ordered list of `n >= 2` observations of a common dimension `d >= 1`.
///
/// Values are stored row-major; `get(i)` is 0-based, while results refer to
/// observation `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        Self::from_rows(1, values)
    }

    /// Builds a dataset from `dim`-dimensional rows concatenated in `values`.
    pub fn from_rows(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("observation dimension must be at least 1"));
        }
        if values.len() % dim != 0 {
            return Err(Error::domain(format!(
                "{} values do not split into rows of dimension {dim}",
                values.len()
            )));
        }
        if values.len() / dim < 2 {
            return Err(Error::domain("a dataset needs at least 2 observations"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "observation {} has a non-finite value",
                i / dim + 1
            )));
        }
        Ok(Dataset { dim, values })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// First coordinate of observation `i`; the value itself for scalar data.
    pub fn value(&self, i: usize) -> f64 {
        self.values[i * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Observations `range` as a new dataset (must keep at least 2 points).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Dataset> {
        Dataset::from_rows(
            self.dim,
            self.values[range.start * self.dim..range.end * self.dim].to_vec(),
        )
    }

    pub fn reversed(&self) -> Dataset {
        let values = (0..self.len())
            .rev()
            .flat_map(|i| self.get(i).iter().copied())
            .collect();
        Dataset {
            dim: self.dim,
            values,
        }
    }

    /// Reorders observations: position `k` of the result is observation `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Dataset {
        debug_assert_eq!(order.len(), self.len());
        let values = order
            .iter()
            .flat_map(|&i| self.get(i).iter().copied())
            .collect();
        Dataset {
            dim: self.dim,
            values,
        }
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    /// Reads one observation per row.
    ///
    /// A first row that does not parse as numbers is taken as a header. With a
    /// header containing a `value` column only that column is read; otherwise
    /// every column is a coordinate.
    pub fn read_csv(reader: impl Read) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut value_col: Option<usize> = None;
        let mut dim: Option<usize> = None;
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(|e| Error::parse(Some(line), e.to_string()))?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|f| f.parse::<f64>()).collect();
            let row = match parsed {
                Ok(row) => row,
                Err(_) if i == 0 => {
                    value_col = rec.iter().position(|h| h.eq_ignore_ascii_case("value"));
                    continue;
                }
                Err(e) => return Err(Error::parse(Some(line), format!("not a number: {e}"))),
            };
            let row = match value_col {
                Some(c) => vec![*row
                    .get(c)
                    .ok_or_else(|| Error::parse(Some(line), "missing value column"))?],
                None => row,
            };
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(Some(line), "non-finite value"));
            }
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::parse(
                        Some(line),
                        format!("expected {d} columns, found {}", row.len()),
                    ))
                }
                _ => {}
            }
            values.extend(row);
        }
        let dim = dim.ok_or_else(|| Error::parse(None, "no observations"))?;
        if values.len() / dim < 2 {
            return Err(Error::parse(None, "a dataset needs at least 2 observations"));
        }
        Dataset::from_rows(dim, values)
    }
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
#[must_use]
pub fn format_sig17(x: f64) -> String {
    format!("{x:.16e}")
}
