//! Per-command run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    /// Unix seconds.
    pub started: u64,
    pub finished: u64,
    /// Produced files relative to the run directory, sorted.
    pub files: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command = {}", self.command);
        let _ = writeln!(out, "config_hash = {}", self.config_hash);
        let _ = writeln!(out, "code_version = {}", self.code_version);
        let _ = writeln!(out, "started = {}", self.started);
        let _ = writeln!(out, "finished = {}", self.finished);
        for f in &self.files {
            let _ = writeln!(out, "file = {f}");
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |m: String| Error::format("run manifest", path, m);
        let mut m = RunManifest { command: String::new(), config_hash: String::new(), code_version: String::new(), started: 0, finished: 0, files: Vec::new() };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ").ok_or_else(|| bad(format!("bad line {line:?}")))?;
            match k {
                "command" => m.command = v.to_string(),
                "config_hash" => m.config_hash = v.to_string(),
                "code_version" => m.code_version = v.to_string(),
                "started" => m.started = v.parse().map_err(|_| bad(format!("bad start time {v:?}")))?,
                "finished" => m.finished = v.parse().map_err(|_| bad(format!("bad end time {v:?}")))?,
                "file" => m.files.push(v.to_string()),
                _ => return Err(bad(format!("unknown field {k:?}"))),
            }
        }
        if m.command.is_empty() || m.config_hash.is_empty() {
            return Err(bad("missing command or config_hash".into()));
        }
        Ok(m)
    }

    /// Writes the manifest through a temporary file and a rename.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&tmp, self.to_text()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text, &path)
    }
}

/// Relative, `/`-separated, sorted paths of `files` under `dir`.
pub fn relative_files(dir: &Path, files: &[PathBuf]) -> Vec<String> {
    let mut out: Vec<String> = files.iter().map(|f| f.strip_prefix(dir).unwrap_or(f).components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")).collect();
    out.sort();
    out.dedup();
    out
}
