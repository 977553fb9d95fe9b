//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failure modes of the laboratory operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite sample at cell {index} (x = {point:?})")]
    NonFinite { index: usize, point: Vec<f64> },
    #[error("dilation t = {t} is below the resolvable floor {floor}")]
    UnderResolved { t: f64, floor: f64 },
    #[error("field is nonzero within the {margin}-cell boundary margin (cell {index})")]
    WrapRisk { margin: usize, index: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("could not draw a non-degenerate atom after {0} attempts")]
    DegenerateAtom(usize),
    #[error("open set covers the whole window; Whitney cover needs a complement")]
    NoComplement,
    #[error("partition of unity gap at cell {0}")]
    CoverGap(usize),
    #[error("projection weight has non-positive mass")]
    DegenerateWeight,
    #[error("constructed atom (level {j}, cube {k}) fails validation: {reason}")]
    ConstructionViolation { j: i32, k: usize, reason: String },
    #[error("declared kernel condition violated: {0}")]
    SpecMismatch(String),
    #[error("fixture file missing: {0}")]
    FixtureMissing(String),
    #[error("fixture was recorded for config hash {recorded}, current config hash is {current}")]
    StaleFixture { recorded: String, current: String },
    #[error("invalid config at `{path}`: {reason}")]
    Config { path: String, reason: String },
    #[error("malformed field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
