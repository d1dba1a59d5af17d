use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category; the CLI maps each one onto a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Spec,
    Data,
    Stall,
    SizeGuard,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Spec => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Stall => 4,
            ErrorCategory::SizeGuard => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Spec => "spec",
            ErrorCategory::Data => "data",
            ErrorCategory::Stall => "stall",
            ErrorCategory::SizeGuard => "size_guard",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{column}` in table `{table}`")]
    UnknownColumn { table: String, column: String },
    #[error("join graph is disconnected: `{0}` is not reachable from the main table")]
    DisconnectedGraph(String),
    #[error("unsupported operator combination: {0}")]
    UnsupportedOperatorCombination(String),
    #[error("cannot parse query spec: {0}")]
    SpecParse(#[from] serde_json::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch in table `{table}` at line {line}: {detail}")]
    SchemaMismatch {
        table: String,
        line: u64,
        detail: String,
    },
    #[error("csv error in table `{table}`: {source}")]
    Csv {
        table: String,
        #[source]
        source: csv::Error,
    },
    #[error("non-finite weight {value} for row {row} of table `{table}`")]
    NonFiniteWeight { table: String, row: u64, value: f64 },
    #[error("negative weight {value} for row {row} of table `{table}`")]
    NegativeWeight { table: String, row: u64, value: f64 },
    #[error("value `{value}` in `{table}.{column}` is not numeric")]
    NonNumeric {
        table: String,
        column: String,
        value: String,
    },
    #[error("ordered comparison on non-numeric join value `{value}` in table `{table}`")]
    OrderedComparisonOnNonNumeric { table: String, value: String },
    #[error("lookup weight table has no entry for `{value}` (column `{table}.{column}`)")]
    LookupMiss {
        table: String,
        column: String,
        value: String,
    },
    #[error("key violation: {0}")]
    KeyViolation(String),
    #[error("temporary storage error: {0}")]
    TempStorage(String),

    #[error("total join weight is zero")]
    ZeroTotalWeight,
    #[error("empty population")]
    EmptyPopulation,
    #[error("no previously selected items to redraw from")]
    EmptyDistinctSet,
    #[error("cumulative weight {reached} fell short of draw {target}")]
    TotalMismatch { target: f64, reached: f64 },
    #[error("pending draw {target} on table `{table}` was not resolved (cumulative {reached})")]
    UnresolvedDraw {
        table: String,
        target: f64,
        reached: f64,
    },
    #[error("acceptance stalled after {rounds} rounds (acceptance rate {rate:.3e})")]
    AcceptanceStall { rounds: usize, rate: f64 },
    #[error("hashed join retry budget exceeded after {rounds} rounds ({collected} of {wanted} samples)")]
    RetryBudgetExceeded {
        rounds: usize,
        collected: usize,
        wanted: usize,
    },
    #[error("event index {index} outside 1..={size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("empty sample")]
    EmptySample,
    #[error("sampled tree is not a row of the enumerated join: {0}")]
    ForeignTree(String),
    #[error("join enumeration exceeds the size guard of {limit} rows")]
    SizeGuardExceeded { limit: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            InvalidQuery(_)
            | UnknownTable(_)
            | UnknownColumn { .. }
            | DisconnectedGraph(_)
            | UnsupportedOperatorCombination(_)
            | SpecParse(_) => ErrorCategory::Spec,
            AcceptanceStall { .. } | RetryBudgetExceeded { .. } => ErrorCategory::Stall,
            SizeGuardExceeded { .. } => ErrorCategory::SizeGuard,
            _ => ErrorCategory::Data,
        }
    }
}
