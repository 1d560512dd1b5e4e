use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed network: {0}")]
    Network(String),
    #[error("malformed scenario: {0}")]
    Scenario(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("on/off assignment has no entry for edge `{0}`")]
    MissingAssignment(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("topology does not allow exact reconstruction: {0}")]
    Topology(String),
    #[error("pump `{pump}`: no real speed for this flow and head (discriminant {discriminant:.3e})")]
    NoRealSpeed { pump: String, discriminant: f64 },
    #[error("relaxed solution violates the pipe cone at `{pipe}` by {excess:.3e}")]
    ConeViolated { pipe: String, excess: f64 },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Program(#[from] misocp::ProgramError),
}

impl Error {
    /// Errors caused by bad input files rather than by the model.
    pub fn is_malformed_input(&self) -> bool {
        matches!(
            self,
            Error::Network(_)
                | Error::Scenario(_)
                | Error::UnknownNode(_)
                | Error::MissingAssignment(_)
                | Error::Dimension(_)
                | Error::Config(_)
                | Error::Io { .. }
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
