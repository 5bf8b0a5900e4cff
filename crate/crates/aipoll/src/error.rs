use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] aipoll_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("missing {path}; run `aipoll {stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("backend refused the request, aborting the run: {0}")]
    BackendFatal(String),
    #[error("embedding backend: {0}")]
    Embedding(String),
    #[error("{0}")]
    Input(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}

pub(crate) fn format_err(path: impl Into<PathBuf>, detail: impl std::fmt::Display) -> Error {
    Error::Format { path: path.into(), detail: detail.to_string() }
}
