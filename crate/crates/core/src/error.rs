use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the pipeline. The display form is prefixed with the
/// module that produced it so CLI diagnostics stay one line.
#[derive(Debug, Error)]
pub enum Error {
    #[error("trajectory: format error: {0}")]
    Format(String),
    #[error("trajectory: validation error: {0}")]
    Validation(String),
    #[error("trajectory: {0}")]
    Collection(String),
    #[error("features: {0}")]
    Features(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("network: {0}")]
    Network(String),
    #[error("training: {0}")]
    Training(String),
    #[error("tuning: {0}")]
    Tuning(String),
    #[error("evaluation: {0}")]
    Evaluation(String),
    #[error("model: {0}")]
    Model(String),
    #[error("io: {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
