use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate cross-section: {0}")]
    DegenerateCrossSection(String),

    #[error("track store consistency error: {0}")]
    Consistency(String),

    #[error("training diverged at epoch {epoch}; last good parameters kept")]
    Diverged { epoch: usize },

    #[error("missing upstream artifact: run stage `{stage}` first ({detail})")]
    MissingUpstream { stage: String, detail: String },

    #[error("stale artifact from stage `{stage}`: {detail}; re-run `{stage}`")]
    StaleArtifact { stage: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
