//! Error type shared by every module of the workbench.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown token {token:?} at offset {offset}")]
    UnknownToken { offset: usize, token: String },

    #[error("unbound variable {0}")]
    UnboundVariable(char),

    #[error("duplicate variable {0}")]
    DuplicateVariable(char),

    #[error("variable {0} is not in the declared alphabet")]
    VariableOutsideAlphabet(char),

    #[error("no single-fact corruption flips the answer of sample {0}")]
    NoAnswerFlippingCorruption(String),

    #[error("clean and corrupt prompts of {pair} tokenize to different lengths ({clean} vs {corrupt})")]
    TokenizationMisaligned { pair: String, clean: usize, corrupt: usize },

    #[error("ambiguous annotation: {0}")]
    AnnotationAmbiguous(String),

    #[error("answer surface form {0:?} is not a single token")]
    MultiTokenAnswer(String),

    #[error("tokenizer cannot encode {piece:?} at byte {offset}")]
    Tokenization { offset: usize, piece: String },

    #[error("activation site {0} is out of range")]
    SiteOutOfRange(String),

    #[error("cache has no entry for site {0}")]
    MissingCacheEntry(String),

    #[error("shape mismatch at {site}: expected {expected} values, found {found}")]
    ShapeMismatch { site: String, expected: usize, found: usize },

    #[error("baseline logit difference {0} is too close to zero for a ratio")]
    DegenerateBaseline(f64),

    #[error("layer-group scheme {scheme} is not valid for {n_layers} layers")]
    LayerGroupScheme { scheme: String, n_layers: usize },

    #[error("refusing to aggregate a per-layer normalized grid ({0})")]
    NormalizedGrid(String),

    #[error("annotation length {annotations} does not match matrix size {matrix}")]
    AnnotationLengthMismatch { annotations: usize, matrix: usize },

    #[error("attention matrix for head ({layer}, {head}) is invalid: {message}")]
    InvalidAttention { layer: usize, head: usize, message: String },

    #[error("adapter does not support {0}")]
    Unsupported(&'static str),

    #[error("model {0:?} is not available (set PLMI_MODEL_CACHE or select the toy backend)")]
    ModelUnavailable(String),

    #[error("pair {pair}: {source}")]
    Pair {
        pair: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn for_pair(self, pair: &str) -> Self {
        Error::Pair {
            pair: pair.to_string(),
            source: Box::new(self),
        }
    }
}
