use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("enumeration of {requested} items exceeds the cap of {cap}")]
    CapExceeded { requested: u128, cap: usize },

    #[error("invalid knowledge program: {0}")]
    InvalidProgram(String),

    #[error("invalid knowledge table: {0}")]
    InvalidTable(String),

    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("score sum and test score are both zero")]
    DegenerateScores,

    #[error("method `{method}` requires {input}")]
    MissingInput { method: &'static str, input: &'static str },

    #[error("record {id}: missing ground truth for {side}")]
    MissingGroundTruth { id: String, side: &'static str },

    #[error("prior assigns mass to infeasible concept vector {index}")]
    InfeasiblePrior { index: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {id}: dimension mismatch: {message}")]
    DimensionMismatch { id: String, message: String },

    #[error("record {id}: (c*, y*) = ({c_star:?}, {y_star}) is outside the knowledge support")]
    SupportViolation { id: String, c_star: Vec<usize>, y_star: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn cap(requested: u128, cap: usize) -> Self {
        Error::CapExceeded { requested, cap }
    }

    /// True for errors caused by malformed or inconsistent input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidDistribution(_)
                | Error::EmptyCalibration
                | Error::EmptyDataset
                | Error::DegenerateScores
                | Error::MissingGroundTruth { .. }
                | Error::InfeasiblePrior { .. }
                | Error::Parse { .. }
                | Error::DimensionMismatch { .. }
                | Error::SupportViolation { .. }
                | Error::InvalidTable(_)
                | Error::Io(_)
        )
    }
}
