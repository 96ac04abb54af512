use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use super::{finite, PointwiseScores, PreparedScores, ScoreFamily, DENSITY_FLOOR};
use crate::data::Dataset;
use crate::error::{Error, Result, ScoreError};

const SIMPLEX_TOL: f64 = 1e-6;

/// Per-observation class probabilities from a pre-trained classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbTable {
    labels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl ClassProbTable {
    pub fn new(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::domain("class-probability table needs at least one label"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != labels.len() {
                return Err(Error::parse(
                    Some(i + 2),
                    format!("expected {} probabilities, found {}", labels.len(), row.len()),
                ));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::parse(
                    Some(i + 2),
                    format!("row is not a probability vector (sum {sum})"),
                ));
            }
        }
        Ok(ClassProbTable { labels, rows })
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Header row of class labels, then one row of probabilities per observation.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let labels: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::parse(Some(1), e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse(Some(line), e.to_string()))?;
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(Some(line), format!("not a number: {e}")))?;
            rows.push(row);
        }
        Self::new(labels, rows)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> Option<&[f64]> {
        self.rows.get(i).map(Vec::as_slice)
    }

    fn check_covers(&self, n: usize) -> std::result::Result<(), ScoreError> {
        if self.rows.len() < n {
            return Err(ScoreError::MissingRow { index: self.rows.len() });
        }
        Ok(())
    }

    /// Labels at which row `i` attains its maximum.
    fn argmax_labels(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.rows[i];
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter().enumerate().filter(move |(_, &p)| p >= best).map(|(s, _)| s)
    }

    /// Most popular class: the label that is an argmax for the most points in
    /// `points`; ties go to the smallest label index. `None` for no points.
    pub fn popular_class(&self, points: &[usize]) -> Option<usize> {
        if points.is_empty() {
            return None;
        }
        let mut counts = vec![0usize; self.labels.len()];
        for &i in points {
            for s in self.argmax_labels(i) {
                counts[s] += 1;
            }
        }
        Some(first_max(&counts))
    }
}

fn first_max(counts: &[usize]) -> usize {
    let mut best = 0;
    for (s, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = s;
        }
    }
    best
}

/// Classifier-based likelihood-ratio estimate:
/// `ĝ(x)_{ŝ(bag)} / ĝ(x)_{ŝ(context)}`, where `ŝ` is the most popular class.
///
/// Scores are indexed by observation position, so the table row `i` belongs to
/// observation `i`. An empty context contributes a denominator of 1.
#[derive(Debug, Clone)]
pub struct ClassifierFamily {
    table: Arc<ClassProbTable>,
}

impl ClassifierFamily {
    pub fn new(table: ClassProbTable) -> Self {
        ClassifierFamily { table: Arc::new(table) }
    }

    pub fn table(&self) -> &ClassProbTable {
        &self.table
    }

    fn prob(&self, x: usize, class: Option<usize>) -> Result<f64, ScoreError> {
        let row = self.table.row(x).ok_or(ScoreError::MissingRow { index: x })?;
        Ok(match class {
            Some(s) => row[s].max(DENSITY_FLOOR),
            None => 1.0,
        })
    }

    fn ratio(&self, x: usize, bag: &[usize], context: &[usize]) -> Result<f64, ScoreError> {
        for &i in bag.iter().chain(context) {
            self.table.row(i).ok_or(ScoreError::MissingRow { index: i })?;
        }
        let num = self.prob(x, self.table.popular_class(bag))?;
        let den = self.prob(x, self.table.popular_class(context))?;
        finite(num / den, x)
    }
}

impl ScoreFamily for ClassifierFamily {
    fn name(&self) -> &'static str {
        "classifier"
    }

    fn is_adaptive(&self) -> bool {
        true
    }

    fn uses_bag(&self) -> bool {
        true
    }

    fn left(&self, _data: &Dataset, x: usize, bag: &[usize], context: &[usize]) -> Result<f64, ScoreError> {
        self.ratio(x, bag, context)
    }

    fn right(&self, _data: &Dataset, x: usize, bag: &[usize], context: &[usize]) -> Result<f64, ScoreError> {
        self.ratio(x, bag, context)
    }

    fn prepare<'a>(&'a self, data: &'a Dataset) -> Result<Box<dyn PreparedScores + 'a>, ScoreError> {
        let n = data.len();
        self.table.check_covers(n)?;
        let k = self.table.labels.len();
        // prefix[m] = ŝ(X_1..X_m), suffix[m] = ŝ(X_m..X_n), 1-based m.
        let mut prefix = vec![0usize; n + 2];
        let mut suffix = vec![0usize; n + 2];
        let mut counts = vec![0usize; k];
        for m in 1..=n {
            for s in self.table.argmax_labels(m - 1) {
                counts[s] += 1;
            }
            prefix[m] = first_max(&counts);
        }
        counts.iter_mut().for_each(|c| *c = 0);
        for m in (1..=n).rev() {
            for s in self.table.argmax_labels(m - 1) {
                counts[s] += 1;
            }
            suffix[m] = first_max(&counts);
        }
        Ok(Box::new(ClassifierTables {
            table: &self.table,
            n,
            prefix,
            suffix,
        }))
    }
}

struct ClassifierTables<'a> {
    table: &'a ClassProbTable,
    n: usize,
    prefix: Vec<usize>,
    suffix: Vec<usize>,
}

impl ClassifierTables<'_> {
    fn score(&self, j: usize, num: usize, den: Option<usize>) -> Result<f64, ScoreError> {
        let row = &self.table.rows[j - 1];
        let d = den.map_or(1.0, |s| row[s].max(DENSITY_FLOOR));
        finite(row[num].max(DENSITY_FLOOR) / d, j - 1)
    }
}

impl PreparedScores for ClassifierTables<'_> {
    fn left(&self, t: usize, r: usize, j: usize) -> Result<f64, ScoreError> {
        let den = (t < self.n).then(|| self.suffix[t + 1]);
        self.score(j, self.prefix[r], den)
    }

    fn right(&self, t: usize, r: usize, j: usize) -> Result<f64, ScoreError> {
        let den = (t > 0).then(|| self.prefix[t]);
        self.score(j, self.suffix[r], den)
    }
}

/// Binary classifier odds: `left = g/(1 − g)`, `right = (1 − g)/g`, where `g`
/// is the estimated probability that an observation is post-change.
#[derive(Debug, Clone)]
pub struct BinaryClassifierFamily {
    post_change_prob: Arc<Vec<f64>>,
}

impl BinaryClassifierFamily {
    pub fn new(post_change_prob: Vec<f64>) -> Result<Self> {
        if let Some(p) = post_change_prob.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::domain(format!("probability {p} outside [0, 1]")));
        }
        Ok(BinaryClassifierFamily {
            post_change_prob: Arc::new(post_change_prob),
        })
    }

    /// Uses column `label` of a class-probability table as the post-change probability.
    pub fn from_table(table: &ClassProbTable, label: usize) -> Result<Self> {
        if label >= table.labels.len() {
            return Err(Error::config(format!("label index {label} out of range")));
        }
        Self::new(table.rows.iter().map(|r| r[label]).collect())
    }

    fn odds(&self, x: usize) -> Result<(f64, f64), ScoreError> {
        let g = *self.post_change_prob.get(x).ok_or(ScoreError::MissingRow { index: x })?;
        Ok((g.max(DENSITY_FLOOR), (1.0 - g).max(DENSITY_FLOOR)))
    }
}

impl ScoreFamily for BinaryClassifierFamily {
    fn name(&self) -> &'static str {
        "binary-classifier"
    }

    fn is_adaptive(&self) -> bool {
        false
    }

    fn uses_bag(&self) -> bool {
        false
    }

    fn left(&self, _data: &Dataset, x: usize, _bag: &[usize], _context: &[usize]) -> Result<f64, ScoreError> {
        let (g, h) = self.odds(x)?;
        finite(g / h, x)
    }

    fn right(&self, _data: &Dataset, x: usize, _bag: &[usize], _context: &[usize]) -> Result<f64, ScoreError> {
        let (g, h) = self.odds(x)?;
        finite(h / g, x)
    }

    fn prepare<'a>(&'a self, data: &'a Dataset) -> Result<Box<dyn PreparedScores + 'a>, ScoreError> {
        let scores = PointwiseScores::build(
            data.len(),
            |i| self.left(data, i, &[], &[]),
            |i| self.right(data, i, &[], &[]),
        )?;
        Ok(Box::new(scores))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::NaiveScores;
    use proptest::prelude::*;

    fn table(rows: Vec<Vec<f64>>) -> ClassProbTable {
        let k = rows[0].len();
        ClassProbTable::new((0..k).map(|i| format!("c{i}")).collect(), rows).unwrap()
    }

    #[test]
    fn opposite_popular_classes() {
        let t = table(vec![vec![0.8, 0.2], vec![0.7, 0.3], vec![0.9, 0.1], vec![0.1, 0.9], vec![0.2, 0.8]]);
        let f = ClassifierFamily::new(t);
        let d = Dataset::scalar(vec![0.0; 5]).unwrap();
        // bag {0, 1} votes class 0, context {3, 4} votes class 1, point 2 has (0.9, 0.1).
        let s = f.left(&d, 2, &[0, 1, 2], &[3, 4]).unwrap();
        assert!((s - 9.0).abs() < 1e-12);
    }

    #[test]
    fn shared_popular_class_scores_one() {
        let t = table(vec![vec![0.6, 0.4], vec![0.7, 0.3], vec![0.2, 0.8], vec![0.9, 0.1]]);
        let f = ClassifierFamily::new(t);
        let d = Dataset::scalar(vec![0.0; 4]).unwrap();
        for x in 0..4 {
            assert_eq!(f.left(&d, x, &[0, 1], &[2, 3]).unwrap(), 1.0);
        }
    }

    #[test]
    fn popularity_tie_takes_smallest_label() {
        let t = table(vec![vec![0.1, 0.6, 0.3], vec![0.1, 0.2, 0.7]]);
        assert_eq!(t.popular_class(&[0, 1]), Some(1));
        let t = table(vec![vec![0.6, 0.4], vec![0.4, 0.6]]);
        assert_eq!(t.popular_class(&[0, 1]), Some(0));
        assert_eq!(t.popular_class(&[]), None);
    }

    #[test]
    fn missing_row_is_an_error() {
        let f = ClassifierFamily::new(table(vec![vec![0.5, 0.5], vec![0.5, 0.5]]));
        let d = Dataset::scalar(vec![0.0; 3]).unwrap();
        assert!(matches!(f.prepare(&d), Err(ScoreError::MissingRow { index: 2 })));
    }

    #[test]
    fn rejects_non_simplex_rows() {
        assert!(ClassProbTable::new(vec!["a".into(), "b".into()], vec![vec![0.5, 0.6]]).is_err());
        let err = ClassProbTable::read_csv("a,b\n0.5,0.5\n0.3,x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: Some(3), .. }));
    }

    #[test]
    fn reads_csv() {
        let t = ClassProbTable::read_csv("cat,dog\n0.25,0.75\n1,0\n".as_bytes()).unwrap();
        assert_eq!(t.labels(), &["cat".to_string(), "dog".to_string()]);
        assert_eq!(t.row(1), Some(&[1.0, 0.0][..]));
    }

    #[test]
    fn tables_match_point_level() {
        let rows: Vec<Vec<f64>> = (0..11)
            .map(|i| {
                let a = ((i * 7) % 5) as f64 / 10.0;
                let b = ((i * 3) % 4) as f64 / 10.0;
                vec![a, b, 1.0 - a - b]
            })
            .collect();
        let f = ClassifierFamily::new(table(rows));
        let d = Dataset::scalar(vec![0.0; 11]).unwrap();
        let fast = f.prepare(&d).unwrap();
        let slow = NaiveScores::new(&f, &d);
        let n = d.len();
        for t in 1..=n {
            for r in 1..=t {
                for j in 1..=r {
                    assert_eq!(fast.left(t, r, j).unwrap(), slow.left(t, r, j).unwrap());
                }
            }
        }
        for t in 0..n {
            for r in t + 1..=n {
                for j in r..=n {
                    assert_eq!(fast.right(t, r, j).unwrap(), slow.right(t, r, j).unwrap());
                }
            }
        }
    }

    #[test]
    fn binary_odds() {
        let f = BinaryClassifierFamily::new(vec![0.8, 0.5]).unwrap();
        let d = Dataset::scalar(vec![0.0; 2]).unwrap();
        assert!((f.left(&d, 0, &[], &[]).unwrap() - 4.0).abs() < 1e-12);
        assert!((f.right(&d, 0, &[], &[]).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(f.left(&d, 1, &[], &[]).unwrap(), 1.0);
    }

    fn brute_popular(t: &ClassProbTable, points: &[usize]) -> usize {
        let k = t.labels().len();
        let count = |s: usize| {
            points
                .iter()
                .filter(|&&i| {
                    let row = t.row(i).unwrap();
                    (0..k).all(|o| row[s] >= row[o])
                })
                .count()
        };
        let mut best = 0;
        for s in 1..k {
            if count(s) > count(best) {
                best = s;
            }
        }
        best
    }

    proptest! {
        #[test]
        fn popular_class_matches_brute_force(
            raw in prop::collection::vec(prop::collection::vec(0u8..4, 3), 1..15),
        ) {
            let rows: Vec<Vec<f64>> = raw.iter().map(|r| {
                let w: Vec<f64> = r.iter().map(|&v| v as f64 + 1.0).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            }).collect();
            let t = table(rows);
            let points: Vec<usize> = (0..t.len()).collect();
            prop_assert_eq!(t.popular_class(&points), Some(brute_popular(&t, &points)));
        }
    }
}
