use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{service}: credential rejected or missing ({detail})")]
    Credential { service: &'static str, detail: String },
    #[error("rate limited by {url} after {attempts} attempts")]
    RateLimited { url: String, attempts: u32 },
    #[error("HTTP {status} from {url}")]
    Http { status: u16, url: String },
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no recorded response for {url} (expected fixture {path})")]
    FixtureMissing { url: String, path: PathBuf },
    #[error("malformed response: {0}")]
    Parse(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] nrec_core::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

impl CorpusError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.into(),
            source,
        }
    }
}
