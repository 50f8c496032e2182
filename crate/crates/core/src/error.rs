use crate::inference::FitReport;

/// Library-wide error type.
///
/// `Usage` marks caller mistakes (shape mismatches, invalid options) and maps
/// to exit code 2 in the CLI; everything else maps to exit code 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed input file. `row` and `col` are zero-based positions within
    /// the data portion of the file (the header line, if any, is not counted).
    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    /// Input that is structurally valid but unusable (rank-deficient basis
    /// seed, empty dataset, fold without training rows).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A linear-algebra primitive failed or a quantity left the finite range.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// `fit` hit a numerical failure mid-run. The partial report preserves
    /// the objective trace up to the failing step for post-mortems.
    #[error("fit aborted: {reason}")]
    FitAborted {
        reason: String,
        report: Box<FitReport>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
