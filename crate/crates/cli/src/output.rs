//! Output confinement and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use faeclust_core::io::write_json_atomic;
use serde::Serialize;

use crate::CliError;

/// Everything a subcommand writes lives under `root`.
pub struct OutRoot {
    root: PathBuf,
    manifest: PathBuf,
    written: Vec<String>,
}

impl OutRoot {
    /// `--out` names a directory.
    pub fn dir(out: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out.display())))?;
        let root = canon(out)?;
        let manifest = root.join("run_manifest.json");
        Ok(OutRoot { root, manifest, written: Vec::new() })
    }

    /// `--out` names a file; its directory becomes the root.
    pub fn file(out: &Path) -> Result<Self, CliError> {
        let name = out
            .file_name()
            .ok_or_else(|| CliError::Usage(format!("--out {} is not a file name", out.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", parent.display())))?;
        let root = canon(&parent)?;
        let manifest = root.join(format!("{name}.run.json"));
        Ok(OutRoot { root, manifest, written: Vec::new() })
    }

    /// Resolves a user-supplied output path, rejecting anything that would
    /// land outside the root.
    pub fn place(&mut self, requested: &Path) -> Result<PathBuf, CliError> {
        let absolute = if requested.is_absolute() {
            requested.to_path_buf()
        } else {
            std::env::current_dir().map_err(|e| CliError::Usage(e.to_string()))?.join(requested)
        };
        let parent = absolute.parent().unwrap_or(Path::new("/"));
        let parent = if parent.exists() { canon(parent)? } else { lexical(parent) };
        let name = absolute
            .file_name()
            .ok_or_else(|| CliError::Usage(format!("{} is not a file name", requested.display())))?;
        let resolved = parent.join(name);
        if !resolved.starts_with(&self.root) {
            return Err(CliError::Usage(format!(
                "{} lies outside the output location {}",
                requested.display(),
                self.root.display()
            )));
        }
        fs::create_dir_all(&parent).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", parent.display())))?;
        self.record(&resolved);
        Ok(resolved)
    }

    /// A fixed artifact name inside the root.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.record(&p);
        p
    }

    fn record(&mut self, p: &Path) {
        let shown = p.strip_prefix(&self.root).unwrap_or(p).display().to_string();
        if !self.written.contains(&shown) {
            self.written.push(shown);
        }
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<(), CliError> {
        manifest.output_root = self.root.display().to_string();
        manifest.artifacts = self.written;
        write_json_atomic(&self.manifest, &manifest)?;
        Ok(())
    }
}

fn canon(p: &Path) -> Result<PathBuf, CliError> {
    fs::canonicalize(p).map_err(|e| CliError::Usage(format!("cannot resolve {}: {e}", p.display())))
}

/// Normalizes `.` and `..` without touching the file system.
fn lexical(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    out
}

/// Provenance of one invocation. Replaying `argv` reproduces every artifact.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub output_root: String,
    pub artifacts: Vec<String>,
    pub timings: BTreeMap<String, f64>,
    pub wall_time_s: f64,
}
