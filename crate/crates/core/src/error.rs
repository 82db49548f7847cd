use std::path::PathBuf;

use thiserror::Error;

use crate::Band;

pub type Result<T, E = PszError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PszError {
    #[error("degenerate geometry: source and receiver coincide at ({x}, {y})")]
    DegenerateGeometry { x: f64, y: f64 },

    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty band mask: {0}")]
    EmptyMask(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical overflow: non-finite value in {0}")]
    NumericalOverflow(&'static str),

    #[error("training diverged at step {step}: non-finite loss")]
    TrainingDiverged { step: usize },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version mismatch: file has {found}, supported is {supported}")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("band mismatch: expected {expected}, found {found}")]
    BandMismatch { expected: Band, found: Band },

    #[error("band not enabled: {0}")]
    BandNotEnabled(Band),

    #[error("corrupt container: {0}")]
    CorruptContainer(String),

    #[error("overlap risk: anchor ({x2:.4}, {y2:.4}) is not admissible for r_max = {r_max}")]
    OverlapRisk { x2: f64, y2: f64, r_max: f64 },

    #[error("perturbed input leaves the coordinate bounds")]
    OutOfBounds,

    #[error("bounds too tight: no admissible anchor after {attempts} draws")]
    BoundsTooTight { attempts: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing files in {dir}: {missing:?}")]
    MissingFiles { dir: PathBuf, missing: Vec<String> },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl PszError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PszError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category label used for CLI exit diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            PszError::DegenerateGeometry { .. }
            | PszError::OverlapRisk { .. }
            | PszError::OutOfBounds
            | PszError::BoundsTooTight { .. } => "geometry",
            PszError::LengthMismatch { .. }
            | PszError::GridMismatch(_)
            | PszError::EmptyMask(_)
            | PszError::EmptyInput(_)
            | PszError::InvalidParameter(_) => "input",
            PszError::NumericalOverflow(_) | PszError::TrainingDiverged { .. } => "numerical",
            PszError::CorruptCheckpoint(_)
            | PszError::VersionMismatch { .. }
            | PszError::ShapeMismatch(_)
            | PszError::BandMismatch { .. }
            | PszError::CorruptContainer(_) => "checkpoint",
            PszError::BandNotEnabled(_) | PszError::Config(_) => "config",
            PszError::MissingFiles { .. } | PszError::Io { .. } | PszError::Csv(_) => "io",
        }
    }
}
