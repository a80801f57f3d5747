//! Staged output files and the run manifest.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use tempfile::NamedTempFile;

/// Outputs are written to temporary files next to their destination and
/// renamed into place only once every output of the run is complete.
#[derive(Default)]
pub struct Outputs {
    staged: Vec<(NamedTempFile, PathBuf)>,
}

impl Outputs {
    /// Stages `path` and hands its contents to `fill`.
    pub fn write(&mut self, path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("cannot create a file in {}", dir.display()))?;
        {
            let mut w = BufWriter::new(tmp.as_file_mut());
            fill(&mut w)?;
            w.flush()?;
        }
        self.staged.push((tmp, path.to_path_buf()));
        Ok(())
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        self.staged.iter().map(|(_, p)| p.clone()).collect()
    }

    /// Moves every staged file into place; on failure the files already
    /// moved are removed again.
    pub fn commit(self) -> Result<()> {
        let mut done: Vec<PathBuf> = Vec::new();
        for (tmp, path) in self.staged {
            if let Err(e) = tmp.persist(&path) {
                for p in &done {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e.error).with_context(|| format!("cannot write {}", path.display()));
            }
            done.push(path);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Everything needed to repeat a run. `params` holds the effective flags
/// (with the seed actually used), so the manifest can be passed back as
/// `--config` to reproduce the outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub timestamp: String,
    pub results: serde_json::Value,
}

/// `<out>.manifest.json` next to the primary output.
pub fn default_manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
