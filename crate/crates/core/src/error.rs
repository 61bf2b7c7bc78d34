//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("input missing: {0}")]
    InputMissing(PathBuf),

    #[error("malformed array header: {0}")]
    MalformedHeader(String),

    #[error("unsupported element type: {0}")]
    UnsupportedDType(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty array")]
    EmptyArray,

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("unsupported format version {0:?}")]
    UnsupportedVersion(String),

    #[error("checksum mismatch for {path}: expected {expected}, found {actual}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("id coverage violation in {context}: missing {missing:?}")]
    IdCoverage {
        context: String,
        /// First (at most ten) missing ids.
        missing: Vec<String>,
    },

    #[error("duplicate id {id:?} in {context}")]
    DuplicateId { context: String, id: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("zero-norm embedding row {id:?} in {context}")]
    ZeroNorm { context: String, id: String },

    #[error("concept {0:?} is not normalized")]
    NotNormalized(String),

    #[error("duplicate concept {0:?}")]
    DuplicateConcept(String),

    #[error("empty line at line {0}")]
    EmptyLine(usize),

    #[error("no concepts survived extraction: {0}")]
    EmptyConceptSet(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("missing embedding for image {0:?}")]
    MissingEmbedding(String),

    #[error("image {0:?} has no class")]
    UnmappedImage(String),

    #[error("neuron {0:?} has no class label")]
    UnlabeledNeuron(String),

    #[error("neuron {0:?} has an empty annotation")]
    EmptyAnnotation(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unknown neuron {0:?}")]
    UnknownNeuron(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

/// Coarse error categories. Each maps to a stable process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Io,
    InputMissing,
    Format,
    Integrity,
    Coverage,
    Validation,
    EmptyResult,
    Lookup,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Io => 3,
            Category::InputMissing => 4,
            Category::Format => 5,
            Category::Integrity => 6,
            Category::Coverage => 7,
            Category::Validation => 8,
            Category::EmptyResult => 9,
            Category::Lookup => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Io => "io",
            Category::InputMissing => "input-missing",
            Category::Format => "format",
            Category::Integrity => "integrity",
            Category::Coverage => "coverage",
            Category::Validation => "validation",
            Category::EmptyResult => "empty-result",
            Category::Lookup => "lookup",
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::InputMissing(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn category(&self) -> Category {
        use Error::*;
        match self {
            Io { .. } => Category::Io,
            InputMissing(_) => Category::InputMissing,
            MalformedHeader(_)
            | UnsupportedDType(_)
            | NonFiniteValue { .. }
            | ShapeMismatch(_)
            | EmptyArray
            | Manifest(_)
            | UnsupportedVersion(_)
            | NotNormalized(_)
            | DuplicateConcept(_)
            | EmptyLine(_)
            | ZeroNorm { .. }
            | DuplicateId { .. }
            | Parse { .. } => Category::Format,
            ChecksumMismatch { .. } => Category::Integrity,
            IdCoverage { .. }
            | DimensionMismatch(_)
            | MissingEmbedding(_)
            | UnmappedImage(_)
            | UnlabeledNeuron(_) => Category::Coverage,
            InvalidParam(_) => Category::Validation,
            EmptyConceptSet(_) | EmptyAnnotation(_) | EmptyInput(_) => Category::EmptyResult,
            UnknownNeuron(_) => Category::Lookup,
        }
    }
}
