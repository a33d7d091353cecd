use std::path::PathBuf;

use thiserror::Error;

use crate::data_model::RoiId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the toolkit. Variants carry enough context to locate the
/// offending row, column, ROI or fold.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateSampleId(String),
    #[error("non-numeric value at row {row}, column `{col}`")]
    NonNumericValue { row: usize, col: String },
    #[error("unknown ROI id {0}")]
    UnknownRoiId(String),
    #[error("invalid metadata at row {row}: {msg}")]
    InvalidMeta { row: usize, msg: String },
    #[error("dataset invariant violated: {0}")]
    InvalidDataset(String),
    #[error("invalid contrast: {0}")]
    InvalidContrast(String),
    #[error("contrast has no samples on the {0} side")]
    EmptyClass(&'static str),

    #[error("all series in the block are constant")]
    ConstantAllSeries,
    #[error("need at least {need} series/time points, got {got}")]
    TooFewSeries { need: usize, got: usize },
    #[error("in-mask variance is zero")]
    ZeroVariance,
    #[error("ROI {0} has no voxels")]
    EmptyRoi(RoiId),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("need at least {need} subjects, found {got}")]
    TooFewSubjects { need: usize, got: usize },
    #[error("labels contain a single class")]
    SingleClass,

    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("segment is empty")]
    EmptySegment,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("need at least {need} candidate models, got {got}")]
    TooFewCandidates { need: usize, got: usize },
    #[error("metric `{0}` is undefined")]
    UndefinedMetric(&'static str),

    #[error("covariate columns are rank deficient: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("covariate mismatch: {0}")]
    CovariateMismatch(String),

    #[error("case data lacks selected features: {0:?}")]
    CaseMissingFeatures(Vec<RoiId>),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("contrast `{contrast}`, fold {fold:?}: {source}")]
    Context {
        contrast: String,
        fold: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_contrast(self, contrast: &str, fold: Option<usize>) -> Self {
        match self {
            e @ Error::Context { .. } => e,
            e => Error::Context {
                contrast: contrast.to_string(),
                fold,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by malformed input data rather than configuration.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::InvalidConfig(_) | Error::InvalidSpec(_) => false,
            Error::Context { source, .. } => source.is_data_error(),
            _ => true,
        }
    }
}
