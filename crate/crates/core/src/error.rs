use thiserror::Error;

/// Errors raised by the analysis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("missing column `{0}` in input header")]
    MissingColumn(String),

    #[error(
        "line {line}: duplicate observation for unit `{unit}` in window {window}; \
         pre-aggregate the input to one row per unit and window"
    )]
    DuplicateObservation { line: u64, unit: String, window: usize },

    #[error("input contains no observations")]
    EmptySource,

    #[error("cohort labels must form a contiguous range 1..=m, found {0:?}")]
    NonContiguousCohorts(Vec<usize>),

    #[error("unit `{unit}` appears in cohorts {first} and {second}")]
    InconsistentCohort { unit: String, first: usize, second: usize },

    #[error("panel has unresolved timestamps; bucket it into windows first")]
    Unbucketed,

    #[error("timestamps are required for this bucketing mode")]
    TimestampsRequired,

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("panel does not fit schedule: {0}")]
    ScheduleMismatch(String),

    #[error("cell (cohort {cohort}, window {window}) has {count} units, need at least {needed}")]
    EmptyCell {
        cohort: usize,
        window: usize,
        count: usize,
        needed: usize,
    },

    #[error("need at least {needed} windows, panel has {found}")]
    TooFewWindows { needed: usize, found: usize },

    #[error("need at least 2 units per arm, found {treatment} treatment and {control} control")]
    TooFewUnits { treatment: usize, control: usize },

    #[error("no unit has at least two exposed windows")]
    NoQualifyingUnits,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fit did not converge")]
    NotConverged,

    #[error("{dropped} of {total} bootstrap replicates failed to converge (limit 20%)")]
    BootstrapFailures { dropped: usize, total: usize },

    #[error("replication {replication}: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
