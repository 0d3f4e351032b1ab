//! Output sets rendered in memory and committed to disk all-or-nothing,
//! plus the run manifest written next to them.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Command;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, rel: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.files.push((rel.into(), bytes.into()));
    }

    /// Renders through a writer callback; writers into a `Vec` cannot fail.
    pub fn add_with(&mut self, rel: impl Into<PathBuf>, render: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) {
        let mut buf = Vec::new();
        render(&mut buf).expect("writing to memory");
        self.add(rel, buf);
    }

    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.files
            .iter()
            .map(|(p, b)| (slash_path(p), sha256(b)))
            .collect()
    }

    /// Writes every file under `dir`. On failure removes whatever this call
    /// created, so the directory never holds a partial set.
    pub fn commit(&self, dir: &Path) -> io::Result<()> {
        let mut created_dirs = Vec::new();
        let mut written = Vec::new();
        let result = self.write_all(dir, &mut created_dirs, &mut written);
        if result.is_err() {
            for f in written.iter().rev() {
                let _ = fs::remove_file(f);
            }
            for d in created_dirs.iter().rev() {
                let _ = fs::remove_dir(d);
            }
        }
        result
    }

    fn write_all(&self, dir: &Path, created_dirs: &mut Vec<PathBuf>, written: &mut Vec<PathBuf>) -> io::Result<()> {
        make_dirs(dir, created_dirs)?;
        for (rel, bytes) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                make_dirs(parent, created_dirs)?;
            }
            fs::write(&path, bytes)?;
            written.push(path);
        }
        Ok(())
    }
}

/// `create_dir_all` that records each directory it actually created.
fn make_dirs(dir: &Path, created: &mut Vec<PathBuf>) -> io::Result<()> {
    let mut missing = Vec::new();
    let mut cur = Some(dir);
    while let Some(d) = cur {
        if d.as_os_str().is_empty() || d.is_dir() {
            break;
        }
        missing.push(d.to_path_buf());
        cur = d.parent();
    }
    for d in missing.into_iter().rev() {
        fs::create_dir(&d)?;
        created.push(d);
    }
    Ok(())
}

fn slash_path(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// The resolved command with every parameter, replayable as is.
    pub command: Command,
    /// sha256 of every input file, keyed by absolute path.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every output file, keyed by path relative to the output dir.
    pub outputs: BTreeMap<String, String>,
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn new(command: Command, inputs: BTreeMap<String, String>, outputs: BTreeMap<String, String>, duration_seconds: f64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            inputs,
            outputs,
            duration_seconds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_nested_files() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = Outputs::default();
        out.add("a.csv", "x\n");
        out.add("sub/b.csv", "y\n");
        let dir = tmp.path().join("new/out");
        out.commit(&dir).unwrap();
        assert_eq!(fs::read_to_string(dir.join("sub/b.csv")).unwrap(), "y\n");
        assert_eq!(out.hashes().keys().cloned().collect::<Vec<_>>(), ["a.csv", "sub/b.csv"]);
    }

    #[test]
    fn failed_commit_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("out");
        let mut out = Outputs::default();
        out.add("a.csv", "x\n");
        // a directory where a file must go makes the second write fail
        out.add("b", "y\n");
        fs::create_dir_all(tmp.path().join("out/b")).unwrap();
        assert!(out.commit(&dir).is_err());
        assert!(!dir.join("a.csv").exists());
        assert!(dir.join("b").is_dir());
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
