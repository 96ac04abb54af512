use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure raised while evaluating a score function.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("score is not finite at observation {index} (0-based)")]
    NonFinite { index: usize },
    #[error("observation {index} has no class-probability row")]
    MissingRow { index: usize },
    #[error("unsupported dimension {dim}: {family} requires scalar observations")]
    UnsupportedDimension { family: &'static str, dim: usize },
}

/// Which block of a matrix column a location refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Backward,
}

impl Side {
    pub(crate) fn code(self) -> u64 {
        match self {
            Side::Left => 0,
            Side::Right => 1,
            Side::Backward => 2,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Backward => "backward",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent or unsupported configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// A score evaluation failed at a matrix location (`t`, `r`, `j` are 1-based).
    #[error("score error in {side} block at t={t}, r={r}, j={j}: {source}")]
    Score {
        side: Side,
        t: usize,
        r: usize,
        j: usize,
        #[source]
        source: ScoreError,
    },
    /// A score family rejected the dataset before any evaluation.
    #[error("score family rejected dataset: {0}")]
    ScoreSetup(#[from] ScoreError),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    /// A multi-changepoint window too short to localize in.
    #[error("isolation failure: window {index} ({start}..={end}) has {len} points, need at least 4")]
    Isolation {
        index: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    /// Malformed input file; `line` is 1-based when known.
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    /// A binary file with an unexpected header or version.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    /// True for errors caused by user input rather than by the computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::Config(_) | Error::Parse { .. } | Error::Format(_)
        )
    }
}
