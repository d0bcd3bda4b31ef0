use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Hex SHA-256 of a value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Threads allowed for worker pools, from `DUB3D_THREADS` (default: all).
pub fn worker_threads() -> usize {
    std::env::var("DUB3D_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Append-only JSON-lines event log for one run. The first line records the
/// resolved configuration and seed.
pub struct RunLog {
    out: Option<BufWriter<File>>,
    path: Option<PathBuf>,
}

impl RunLog {
    /// Creates `<dir>/runs/<command>-<unix millis>.jsonl`.
    pub fn create(dir: &Path, command: &str, config: &impl Serialize, seed: u64) -> io::Result<Self> {
        let runs = dir.join("runs");
        fs::create_dir_all(&runs)?;
        let mut millis = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        let path = loop {
            let p = runs.join(format!("{command}-{millis}.jsonl"));
            if !p.exists() {
                break p;
            }
            millis += 1;
        };
        let mut log = RunLog {
            out: Some(BufWriter::new(File::create(&path)?)),
            path: Some(path),
        };
        let config = serde_json::to_value(config).map_err(io::Error::other)?;
        log.event("config", json!({ "command": command, "seed": seed, "config": config }))?;
        Ok(log)
    }

    /// A log that drops every event.
    pub fn disabled() -> Self {
        RunLog { out: None, path: None }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn event(&mut self, kind: &str, payload: Value) -> io::Result<()> {
        let Some(out) = self.out.as_mut() else {
            return Ok(());
        };
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let line = json!({ "timestamp": ts, "event": kind, "payload": payload });
        writeln!(out, "{line}")?;
        out.flush()
    }
}
