use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{request_hash, CompletionBackend, Exchange, GatewayError};
use crate::prompt::PromptRequest;

/// Directory store: `responses/<hash>.txt` holds the raw text and
/// `index.jsonl` one metadata line per first-recorded exchange.
#[derive(Debug)]
pub struct ReplayStore {
    root: PathBuf,
    writes: Mutex<()>,
}

impl ReplayStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: &Path) -> Result<Self, GatewayError> {
        let responses = root.join("responses");
        fs::create_dir_all(&responses).map_err(|source| GatewayError::Io { path: responses, source })?;
        Ok(ReplayStore { root: root.to_path_buf(), writes: Mutex::new(()) })
    }

    /// Opens a store that must already exist, for replay-only use.
    pub fn open_existing(root: &Path) -> Result<Self, GatewayError> {
        if !root.join("responses").is_dir() {
            return Err(GatewayError::Config(format!("replay store {} does not exist", root.display())));
        }
        Self::open(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn response_path(&self, hash: &str) -> PathBuf {
        self.root.join("responses").join(format!("{hash}.txt"))
    }

    pub fn contains(&self, hash: &str) -> bool {
        self.response_path(hash).is_file()
    }

    pub fn get(&self, hash: &str) -> Result<String, GatewayError> {
        let path = self.response_path(hash);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(GatewayError::ReplayMiss { hash: hash.to_string(), store: self.root.clone() })
            }
            Err(source) => Err(GatewayError::Io { path, source }),
        }
    }

    /// Appends exchanges not already present; returns how many were new.
    /// The first recording of a hash wins.
    pub fn record_run(&self, exchanges: &[Exchange]) -> Result<usize, GatewayError> {
        let _guard = self.writes.lock().unwrap_or_else(|p| p.into_inner());
        let index_path = self.root.join("index.jsonl");
        let mut added = 0;
        for ex in exchanges {
            let path = self.response_path(&ex.hash);
            if path.exists() {
                continue;
            }
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, &ex.response).map_err(|source| GatewayError::Io { path: tmp.clone(), source })?;
            fs::rename(&tmp, &path).map_err(|source| GatewayError::Io { path: path.clone(), source })?;
            let mut index = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&index_path)
                .map_err(|source| GatewayError::Io { path: index_path.clone(), source })?;
            let line = serde_json::to_string(ex).expect("exchange serializes");
            writeln!(index, "{line}").map_err(|source| GatewayError::Io { path: index_path.clone(), source })?;
            added += 1;
        }
        Ok(added)
    }

    /// Number of stored responses.
    pub fn len(&self) -> usize {
        fs::read_dir(self.root.join("responses"))
            .map(|d| d.filter_map(Result::ok).filter(|e| e.path().extension().is_some_and(|x| x == "txt")).count())
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Metadata lines from the index, in recording order.
    pub fn index(&self) -> Result<Vec<Exchange>, GatewayError> {
        let path = self.root.join("index.jsonl");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(GatewayError::Io { path, source }),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| GatewayError::Protocol(format!("index.jsonl: {e}"))))
            .collect()
    }
}

/// Serves completions from a [`ReplayStore`]; a missing hash is an error.
#[derive(Debug)]
pub struct ReplayBackend {
    store: ReplayStore,
    model: String,
}

impl ReplayBackend {
    pub fn new(store: ReplayStore, model: impl Into<String>) -> Self {
        ReplayBackend { store, model: model.into() }
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, request: &PromptRequest, sample_index: usize) -> Result<String, GatewayError> {
        self.store.get(&request_hash(&self.model, request, sample_index))
    }

    fn model(&self) -> &str {
        &self.model
    }
}
