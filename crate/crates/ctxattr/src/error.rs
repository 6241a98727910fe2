use std::fmt;
use std::io;
use std::path::PathBuf;

use crate::manifest::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage, used to tag failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Validate,
    Filter,
    Synthesize,
    Attribute,
    Ingest,
    Analyze,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Validate => "validate",
            Stage::Filter => "filter",
            Stage::Synthesize => "synthesize",
            Stage::Attribute => "attribute",
            Stage::Ingest => "ingest",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ctxattr_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}:{line}: {message}")]
    Schema { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Validation(ValidationReport),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no attribution map for sample {sample_id:?}, variant {variant:?} (looked for {path})")]
    MissingMap { sample_id: String, variant: String, path: PathBuf },
    #[error("prediction row for unknown sample {sample_id:?} (variant {variant:?})")]
    OrphanRecord { sample_id: String, variant: String },
    #[error("duplicate prediction for sample {sample_id:?}, variant {variant:?}, model {model_id:?}")]
    DuplicateRecord { sample_id: String, variant: String, model_id: String },
    #[error("no samples left after the context filter (threshold {threshold})")]
    FilterEmptied { threshold: f64 },
    #[error("{sample_id} / {variant}: {source}")]
    Sample { sample_id: String, variant: String, source: Box<Error> },
    #[error("[{stage}] {source}")]
    Stage { stage: Stage, source: Box<Error> },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    pub fn for_sample(self, sample_id: &str, variant: &str) -> Self {
        Error::Sample { sample_id: sample_id.into(), variant: variant.into(), source: Box::new(self) }
    }

    /// Innermost error, skipping stage and sample tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Sample { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit status: 2 for invalid input, 3 for a failed stage.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Validation(_) | Error::Config(_) => 2,
            _ => 3,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.into().in_stage(stage))
    }
}
