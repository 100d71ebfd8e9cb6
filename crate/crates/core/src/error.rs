use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // geography
    #[error("duplicate block group id `{0}`")]
    DuplicateId(String),
    #[error("`{child}` is contained in both `{first}` and `{second}`")]
    InconsistentContainment {
        child: String,
        first: String,
        second: String,
    },
    #[error("geography change references unknown area `{0}`")]
    UnknownMember(String),
    #[error("unknown area `{0}`")]
    UnknownArea(String),
    #[error("hierarchy is missing centroids for {0} block groups")]
    MissingCentroids(usize),

    // matrices
    #[error("block partition does not match matrix dimension (partition covers {partition}, matrix is {matrix})")]
    PartitionMismatch { partition: usize, matrix: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("scaling factor must be positive and finite, got {0}")]
    NonPositiveFactor(f64),
    #[error("entry ({row}, {col}) is negative or non-finite: {value}")]
    InvalidEntry { row: usize, col: usize, value: f64 },

    // records
    #[error("person `{0}` has no usable dates")]
    NoDates(String),
    #[error("person `{0}` has no address left after cleaning")]
    EmptyAfterCleaning(String),
    #[error("person `{person}` is active in {month} but has no residence distribution")]
    MissingMonth { person: String, month: String },

    // crosswalk
    #[error("crosswalk row for address `{address}` sums to {sum}, expected 1")]
    NotRowStochastic { address: String, sum: f64 },
    #[error("zip assignment for address `{0}` has no positive tract weight")]
    AllZeroWeights(String),

    // constraints
    #[error("no components of change for area `{0}`")]
    MissingComponent(String),
    #[error("coefficient of variation is undefined for a non-positive estimate")]
    ZeroEstimate,
    #[error("constraint set for year {0} has already been adjusted")]
    AlreadyAdjusted(i32),
    #[error("block group `{cbg}` lacks the population observation `{window}`")]
    MissingObservation { cbg: String, window: String },

    // harmonizer
    #[error("non-finite value in solver input")]
    NonFiniteInput,
    #[error("county marginals are inconsistent: previous-year total {prev}, current-year total {curr}")]
    InconsistentMarginals { prev: f64, curr: f64 },

    // validation and analytics
    #[error("matrix total is zero")]
    ZeroTotal,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("raw estimate has zero error but the harmonized one does not")]
    RawPerfect,
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("base share for category `{0}` is zero")]
    ZeroBaseShare(String),
    #[error("region `{0}` is empty")]
    EmptyRegion(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Failures of the numerical procedures as opposed to malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteInput
                | Error::InconsistentMarginals { .. }
                | Error::ZeroTotal
                | Error::RawPerfect
                | Error::ZeroVariance
                | Error::ZeroBaseShare(_)
                | Error::NonPositiveFactor(_)
        )
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
