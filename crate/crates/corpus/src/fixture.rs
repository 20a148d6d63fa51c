//! Recorded HTTP responses, one file per request key, so ingestion can be
//! replayed without network access.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CorpusError, Result};
use crate::http::{redact_url, request_key, HttpRequest, HttpResponse, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureMode {
    /// Only recorded responses; a miss is an error.
    Replay,
    /// Always hit the inner transport and overwrite the recording.
    Record,
    /// Replay when recorded, otherwise fetch and record (a disk cache).
    Cache,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordedRequest {
    method: String,
    url: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Recording {
    request: RecordedRequest,
    status: u16,
    body: String,
}

pub struct FixtureTransport {
    dir: PathBuf,
    mode: FixtureMode,
    inner: Option<Box<dyn Transport>>,
}

impl FixtureTransport {
    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        FixtureTransport {
            dir: dir.into(),
            mode: FixtureMode::Replay,
            inner: None,
        }
    }

    pub fn new(dir: impl Into<PathBuf>, mode: FixtureMode, inner: Box<dyn Transport>) -> Self {
        FixtureTransport {
            dir: dir.into(),
            mode,
            inner: Some(inner),
        }
    }

    pub fn path_for(&self, req: &HttpRequest) -> PathBuf {
        self.dir.join(format!("{}.json", request_key(req)))
    }

    fn load(path: &Path) -> Result<HttpResponse> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        let rec: Recording =
            serde_json::from_str(&text).map_err(|e| CorpusError::Parse(format!("{}: {e}", path.display())))?;
        Ok(HttpResponse {
            status: rec.status,
            body: rec.body,
        })
    }

    fn store(&self, path: &Path, req: &HttpRequest, resp: &HttpResponse) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| CorpusError::io(&self.dir, e))?;
        let rec = Recording {
            request: RecordedRequest {
                method: req.method.clone(),
                url: redact_url(&req.url),
            },
            status: resp.status,
            body: resp.body.clone(),
        };
        let mut text = serde_json::to_string_pretty(&rec).expect("recording serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CorpusError::io(path, e))
    }

    fn fetch(&self, path: &Path, req: &HttpRequest) -> Result<HttpResponse> {
        let inner = self.inner.as_ref().ok_or_else(|| CorpusError::FixtureMissing {
            url: redact_url(&req.url),
            path: path.to_path_buf(),
        })?;
        let resp = inner.send(req)?;
        // rate-limit and server errors are transient; don't pin them
        if resp.status != 429 && resp.status < 500 {
            self.store(path, req, &resp)?;
        }
        Ok(resp)
    }
}

impl Transport for FixtureTransport {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse> {
        let path = self.path_for(req);
        match self.mode {
            FixtureMode::Replay if path.exists() => Self::load(&path),
            FixtureMode::Replay => Err(CorpusError::FixtureMissing {
                url: redact_url(&req.url),
                path,
            }),
            FixtureMode::Cache if path.exists() => Self::load(&path),
            FixtureMode::Cache | FixtureMode::Record => self.fetch(&path, req),
        }
    }

    fn is_offline(&self) -> bool {
        self.mode == FixtureMode::Replay
    }
}
