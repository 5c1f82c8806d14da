//! Run directory bookkeeping and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use deadoil::config::RunConfig;
use deadoil::grid::{ScalarField, Trajectory};
use deadoil::io::{field_to_csv, write_trajectory};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

/// SHA-256 of `blob <len>\0<bytes>`, the git object hashing scheme.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory of one invocation; remembers every file written.
pub struct RunDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl RunDir {
    pub fn create(root: &Path) -> std::io::Result<RunDir> {
        fs::create_dir_all(root)?;
        Ok(RunDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(deadoil::Error::from)?;
        }
        fs::write(&path, contents).map_err(deadoil::Error::from)?;
        self.written.push(path);
        Ok(())
    }

    pub fn json(&mut self, rel: &str, value: &impl Serialize) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| deadoil::Error::Format(e.to_string()))?;
        self.write(rel, text + "\n")
    }

    pub fn field(&mut self, rel: &str, field: &ScalarField) -> CliResult<()> {
        self.write(rel, field_to_csv(field))
    }

    pub fn trajectory(&mut self, rel: &str, traj: &Trajectory) -> CliResult<()> {
        let paths = write_trajectory(&self.root.join(rel), traj)?;
        self.written.extend(paths);
        Ok(())
    }

    /// Hash every written file, sorted by relative path.
    pub fn records(&self) -> std::io::Result<Vec<OutputRecord>> {
        let mut out = Vec::with_capacity(self.written.len());
        for path in &self.written {
            let bytes = fs::read(path)?;
            let rel = path.strip_prefix(&self.root).unwrap_or(path);
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.push(OutputRecord {
                path: rel,
                bytes: bytes.len(),
                sha256: sha256_hex(&bytes),
            });
        }
        out.sort_by(|a, b| a.path.cmp(&b.path));
        out.dedup_by(|a, b| a.path == b.path);
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutputRecord {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Everything that determines the outputs of a run.
#[derive(Clone, Debug, Serialize)]
pub struct Inputs {
    pub subcommand: String,
    pub config_text: Option<String>,
    pub seed: u64,
    pub levels: Option<usize>,
    pub case: Option<String>,
}

impl Inputs {
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("inputs serialize");
        blob_hash(&canonical)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_path: Option<String>,
    pub config: Option<RunConfig>,
    pub seed: u64,
    pub levels: Option<usize>,
    pub case: Option<String>,
    pub jobs: Option<usize>,
    pub input_hash: String,
    pub status: String,
    pub error: Option<String>,
    pub exit_code: i32,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputRecord>,
}

impl RunManifest {
    /// Write through a temporary file and rename into place.
    pub fn write_atomic(&self, dir: &Path) -> std::io::Result<()> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(&tmp, text + "\n")?;
        fs::rename(&tmp, dir.join(MANIFEST_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --stdin` under sha256 object format
        assert_eq!(
            blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn input_hash_tracks_the_seed() {
        let a = Inputs {
            subcommand: "simulate".into(),
            config_text: Some("x".into()),
            seed: 1,
            levels: None,
            case: None,
        };
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
