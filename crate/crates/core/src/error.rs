use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid language id {0:?}: expected 2-8 lowercase ASCII letters")]
    InvalidLanguage(String),
    #[error("invalid tag set: {0}")]
    InvalidTagSet(String),
    #[error("line {line}: malformed line {content:?} (need at least 2 columns)")]
    MalformedLine { line: usize, content: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("document contains no sentences")]
    EmptyDocument,
    #[error("duplicate language {0}")]
    DuplicateLanguage(String),
    #[error("tag set mismatch: {0}")]
    TagSetMismatch(String),
    #[error("polyglot corpus needs at least 2 languages, got {0}")]
    TooFewLanguages(usize),
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("invalid dropout rate {0}: must be in [0, 1)")]
    InvalidRate(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("sequence length {got} does not match potentials length {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("sentence has no tokens")]
    EmptySentence,
    #[error("word boundaries cover {boundaries} bytes but logits have {logits} rows")]
    BoundaryMismatch { boundaries: usize, logits: usize },

    #[error("overlapping spans at byte {0}")]
    OverlappingSpans(usize),

    #[error("split {0} is empty or missing")]
    EmptySplit(String),
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("vocabulary incompatible: {0}")]
    VocabIncompatible(String),
    #[error("no runs to select from")]
    EmptyRuns,
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format version mismatch: file has version {found}, this build reads version {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("checksum mismatch: file is truncated or corrupted")]
    ChecksumMismatch,
    #[error("bad file format: {0}")]
    Format(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid pruning fraction {0}: must be in [0, 1)")]
    InvalidFraction(f64),
    #[error("prune curve has no baseline (fraction 0.0) for language {0}")]
    MissingBaseline(String),
    #[error("unsupported architecture for this operation: {0}")]
    UnsupportedArchitecture(String),
    #[error("parameter layouts differ: {0}")]
    LayoutMismatch(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
