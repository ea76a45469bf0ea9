use thiserror::Error;

/// Errors produced by the decomposition pipeline and its stages.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameter value.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (files, spectra, models).
    #[error("data error: {0}")]
    Data(String),

    /// A spectrum violated its construction invariants.
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    /// A mixture model violated its construction invariants.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An operation was asked to work on an empty index range.
    #[error("empty range")]
    EmptyRange,

    /// No peaks available for scale estimation.
    #[error("no peaks for scale estimation")]
    NoPeaks,

    /// A fit collapsed: all components removed, or the model carries no
    /// mass over the requested range.
    #[error("degenerate fit: {0}")]
    Degenerate(String),

    /// No component of a splitter-segment fit survived the proximity rule;
    /// the anchor is demoted and its segment merged into neighbours.
    #[error("splitter rejected at anchor {anchor}")]
    SplitterRejected { anchor: f64 },

    /// Non-finite values appeared where the algorithm guarantees finite ones.
    /// This signals a bug, not bad data.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) => 4,
            _ => 3,
        }
    }

    /// Prefix an error with the pipeline stage (and segment) it came from.
    pub fn in_stage(self, stage: &str) -> Error {
        match self {
            Error::Config(m) => Error::Config(format!("{stage}: {m}")),
            Error::Data(m) => Error::Data(format!("{stage}: {m}")),
            Error::Degenerate(m) => Error::Degenerate(format!("{stage}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{stage}: {m}")),
            other => Error::Data(format!("{stage}: {other}")),
        }
    }
}
