use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no point projects in front of the camera")]
    NoVisiblePoints,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopoError {
    #[error("map is empty")]
    EmptyMap,
    #[error("matching failed: {0}")]
    MatchFailed(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub fn schema(line: usize, message: impl Into<String>) -> Self {
        Self::Schema {
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by the caller's input rather than the runtime.
    pub fn is_validation(&self) -> bool {
        matches!(self, Self::Schema { .. } | Self::Invalid(_) | Self::Json(_))
    }
}
