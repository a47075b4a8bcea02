use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // ingest
    #[error("ingest: filename `{name}` does not match adapter pattern")]
    UnparseableFilename { name: String },
    #[error("ingest: malformed payload in {path} at line {line}: {reason}")]
    MalformedPayload {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("ingest: trial file {path} contains no samples")]
    EmptyTrial { path: PathBuf },
    #[error("ingest: voltage {volts} V outside (0, {reference} V)")]
    OutOfRangeVoltage { volts: f64, reference: f64 },
    #[error("ingest: degenerate series: {0}")]
    DegenerateSeries(String),
    #[error("ingest: unknown sensor column {0}")]
    UnknownColumn(u8),
    #[error("ingest: no parseable trials under {0}")]
    EmptyDataset(PathBuf),
    #[error("ingest: invalid metadata: {0}")]
    InvalidMeta(String),

    // driftmetrics
    #[error("driftmetrics: no valid pre-release samples for trial {trial_id} sensor {column}")]
    NoValidSamples { trial_id: String, column: u8 },
    #[error("driftmetrics: group mean is not positive ({0})")]
    ZeroMean(f64),
    #[error("driftmetrics: need at least {needed} trials, got {got}")]
    InsufficientTrials { needed: usize, got: usize },
    #[error("driftmetrics: filters select no trials for any group")]
    EmptyGroup,

    // schedule_audit
    #[error("schedule: {labels} labels for {trials} session-assigned trials")]
    LabelMismatch { labels: usize, trials: usize },

    // probes
    #[error("probes: window [{start}, {end}) s outside trial of {duration} s")]
    WindowOutOfRange { start: f64, end: f64, duration: f64 },
    #[error("probes: layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("probes: training data contains a single class")]
    SingleClass,
    #[error("probes: non-finite feature at row {row} column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("probes: class `{label}` has {count} trials, need at least 2")]
    InsufficientClassTrials { label: String, count: usize },
    #[error("probes: selection contains no usable trials: {0}")]
    EmptySelection(String),

    // curation
    #[error("curation: subset is empty: {0}")]
    EmptySubset(String),

    // synthgen / config
    #[error("config: {0}")]
    InvalidConfig(String),

    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
