use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate verse id `{verse_id}` in {lang} (line {line})")]
    DuplicateVerse {
        lang: String,
        verse_id: String,
        line: usize,
    },

    #[error("no aligned verses")]
    NoAlignedVerses,

    #[error("unknown language `{0}`")]
    UnknownLanguage(String),

    #[error("invalid inventory: {0}")]
    Inventory(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("id {id} out of range for table of {size} rows")]
    IndexOutOfRange { id: usize, size: usize },

    #[error("every position is masked")]
    FullyMasked,

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("bad magic: expected LATL checkpoint")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("malformed checkpoint header: {0}")]
    Header(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("language `{0}` has no corpus tokens")]
    NoCorpusTokens(String),

    #[error("language space has {rows} rows but inventory lists {languages} languages")]
    SpaceMismatch { rows: usize, languages: usize },

    #[error("zero vector for language `{0}` under cosine distance")]
    ZeroVector(String),

    #[error(
        "perplexity calibration failed for point {point}: entropy {entropy} bits, target {target}"
    )]
    Calibration {
        point: usize,
        entropy: f64,
        target: f64,
    },

    #[error("missing family labels: {0}")]
    MissingLabels(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
