//! Content-hash lineage records written next to every artifact as `<file>.meta.json`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hashing::sha256_hex;
use crate::jsonl;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRef {
    /// File name only, so records do not depend on the working directory.
    pub name: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub stage: String,
    pub sha256: String,
    /// Hash of the source dataset every input descends from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<String>,
    pub seed: u64,
    pub inputs: Vec<InputRef>,
    pub params: Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name: OsString = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn file_sha(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn base_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn stale(path: &Path, stage: &str, reason: impl Into<String>) -> Error {
    Error::StaleArtifact {
        path: path.to_path_buf(),
        stage: stage.to_string(),
        reason: reason.into(),
    }
}

/// Verifies an artifact produced by `stage`: it exists, still matches its
/// recorded hash, and every recorded input found next to it is unchanged.
pub fn check_artifact(path: &Path, stage: &str) -> Result<ArtifactMeta> {
    if !path.is_file() {
        return Err(stale(path, stage, "file is missing"));
    }
    let side = sidecar_path(path);
    if !side.is_file() {
        return Err(stale(path, stage, "no lineage record"));
    }
    let meta: ArtifactMeta = jsonl::read_json(&side)?;
    if meta.stage != stage {
        return Err(stale(path, stage, format!("produced by `{}`", meta.stage)));
    }
    if file_sha(path)? != meta.sha256 {
        return Err(stale(path, stage, "contents changed after it was produced"));
    }
    let dir = path.parent().unwrap_or(Path::new(""));
    for input in &meta.inputs {
        let sibling = dir.join(&input.name);
        if sibling.is_file() && file_sha(&sibling)? != input.sha256 {
            return Err(stale(
                path,
                stage,
                format!("its input {} has changed since", input.name),
            ));
        }
    }
    Ok(meta)
}

/// Inputs and source root collected by one command.
#[derive(Clone, Debug, Default)]
pub struct Lineage {
    inputs: Vec<InputRef>,
    root: Option<(String, PathBuf, String)>,
}

impl Lineage {
    pub fn new() -> Self {
        Self::default()
    }

    fn merge_root(&mut self, root: &str, path: &Path, stage: &str) -> Result<()> {
        match &self.root {
            Some((r, other, _)) if r != root => Err(stale(
                path,
                stage,
                format!(
                    "lineage mismatch: derived from a different source than {}",
                    other.display()
                ),
            )),
            Some(_) => Ok(()),
            None => {
                self.root = Some((root.to_string(), path.to_path_buf(), stage.to_string()));
                Ok(())
            }
        }
    }

    /// Adds an upstream artifact after [`check_artifact`].
    pub fn upstream(&mut self, path: &Path, stage: &str) -> Result<ArtifactMeta> {
        let meta = check_artifact(path, stage)?;
        if let Some(root) = &meta.root {
            self.merge_root(root, path, stage)?;
        }
        self.inputs.push(InputRef {
            name: base_name(path),
            sha256: meta.sha256.clone(),
        });
        Ok(meta)
    }

    /// Adds a user-supplied file. A source file becomes the lineage root.
    pub fn raw(&mut self, path: &Path, source: bool) -> Result<String> {
        let sha = file_sha(path)?;
        if source {
            self.merge_root(&sha, path, "ingest")?;
        }
        self.inputs.push(InputRef {
            name: base_name(path),
            sha256: sha.clone(),
        });
        Ok(sha)
    }

    pub fn root(&self) -> Option<&str> {
        self.root.as_ref().map(|r| r.0.as_str())
    }

    /// Writes a sidecar for every output.
    pub fn record(&self, stage: &str, seed: u64, params: Value, outputs: &[&Path]) -> Result<()> {
        for out in outputs {
            let meta = ArtifactMeta {
                stage: stage.to_string(),
                sha256: file_sha(out)?,
                root: self.root().map(str::to_string),
                seed,
                inputs: self.inputs.clone(),
                params: params.clone(),
            };
            jsonl::write_json(&sidecar_path(out), &meta)?;
        }
        Ok(())
    }
}

/// Refuses to replace existing outputs unless `force` is set.
pub fn guard_outputs(outputs: &[&Path], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    match outputs.iter().find(|p| p.exists()) {
        Some(p) => Err(Error::WouldOverwrite(p.to_path_buf())),
        None => Ok(()),
    }
}
