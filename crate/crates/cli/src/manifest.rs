//! Per-output-directory record of which stage produced which files, with
//! content hashes, so that downstream stages can refuse stale inputs.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const FORMAT: &str = "nextverse-manifest v1";
pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".nextverse.lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Upstream stage name (or `file:<name>` for external inputs) to digest.
    pub inputs: BTreeMap<String, String>,
    /// Hash of the configuration the stage ran with.
    pub params: String,
    /// Output path relative to the output directory, to sha256.
    pub outputs: BTreeMap<String, String>,
}

impl StageRecord {
    /// Digest over all outputs; what downstream stages record as their input.
    pub fn digest(&self) -> String {
        let mut joined = String::new();
        for (path, hash) in &self.outputs {
            joined.push_str(path);
            joined.push('\t');
            joined.push_str(hash);
            joined.push('\n');
        }
        sha256_hex(joined.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Why a stage cannot be used as an input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Staleness {
    Missing { stage: String },
    OutputChanged { stage: String, path: String },
    UpstreamChanged { stage: String, upstream: String },
}

impl std::fmt::Display for Staleness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Staleness::Missing { stage } => write!(f, "stage `{stage}` has not been run"),
            Staleness::OutputChanged { stage, path } => {
                write!(
                    f,
                    "output {path} of stage `{stage}` is missing or was modified"
                )
            }
            Staleness::UpstreamChanged { stage, upstream } => {
                write!(
                    f,
                    "stage `{stage}` is stale: `{upstream}` changed since it ran"
                )
            }
        }
    }
}

impl std::error::Error for Staleness {}

impl Manifest {
    pub fn load(out: &Path) -> Result<Self> {
        let path = out.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(raw) => {
                let m: Manifest = serde_json::from_str(&raw)
                    .with_context(|| format!("parsing {}", path.display()))?;
                anyhow::ensure!(
                    m.format == FORMAT,
                    "unsupported manifest format {:?}",
                    m.format
                );
                Ok(m)
            }
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(Manifest {
                format: FORMAT.into(),
                stages: BTreeMap::new(),
            }),
            Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
        }
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let mut raw = serde_json::to_string_pretty(self)?;
        raw.push('\n');
        write_atomic(&out.join(MANIFEST_FILE), raw.as_bytes())
    }

    /// Checks that `stage` ran, its outputs are intact, and every upstream
    /// stage it consumed is itself fresh and unchanged.
    pub fn check_fresh(&self, out: &Path, stage: &str) -> Result<(), Staleness> {
        let record = self.stages.get(stage).ok_or_else(|| Staleness::Missing {
            stage: stage.to_string(),
        })?;
        for (path, hash) in &record.outputs {
            let intact = fs::read(out.join(path)).is_ok_and(|bytes| &sha256_hex(&bytes) == hash);
            if !intact {
                return Err(Staleness::OutputChanged {
                    stage: stage.to_string(),
                    path: path.clone(),
                });
            }
        }
        for (input, digest) in &record.inputs {
            if input.starts_with("file:") {
                continue;
            }
            self.check_fresh(out, input)?;
            if self.stages[input].digest() != *digest {
                return Err(Staleness::UpstreamChanged {
                    stage: stage.to_string(),
                    upstream: input.clone(),
                });
            }
        }
        Ok(())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

/// Exclusive writer lock on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let path = out.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => anyhow::bail!(
                "{} is locked by another run (remove {} if no run is active)",
                out.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
