//! Provenance manifests: every pipeline step records the content hashes of
//! what it read and wrote, so later steps can detect stale or tampered
//! inputs.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::PhaseMark;
use crate::error::{Error, Result};

pub const DIR_MANIFEST: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub parameters: serde_json::Value,
    /// Manifests of the inputs, by content hash.
    #[serde(default)]
    pub parents: Vec<FileDigest>,
    #[serde(default)]
    pub lineage: Vec<PhaseMark>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<serde_json::Value>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::in_file(path, e.into()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Content hash of a file, or of a directory's files (excluding its
/// manifest) in name order.
pub fn artifact_hash(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let mut names: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    names.retain(|p| p.is_file() && p.file_name().is_some_and(|n| n != DIR_MANIFEST));
    names.sort();
    let mut hasher = Sha256::new();
    for p in names {
        hasher.update(p.file_name().unwrap().to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update(sha256_file(&p)?.as_bytes());
        hasher.update(b"\n");
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: artifact_hash(path)?,
    })
}

/// `<dir>/manifest.json` for directories, `<file>.manifest.json` otherwise.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        artifact.join(DIR_MANIFEST)
    } else {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        artifact.with_file_name(name)
    }
}

impl Manifest {
    pub fn new(command: &str, parameters: serde_json::Value) -> Self {
        Manifest {
            format_version: FORMAT_VERSION,
            command: command.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            parameters,
            parents: Vec::new(),
            lineage: Vec::new(),
            run: None,
        }
    }

    /// Record a raw input (no upstream manifest expected).
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    /// Record an input produced by an earlier step, together with its manifest.
    pub fn add_verified_input(&mut self, path: &Path, upstream: &Manifest) -> Result<()> {
        self.add_input(path)?;
        let mpath = manifest_path(path);
        self.parents.push(digest(&mpath)?);
        if self.lineage.is_empty() {
            self.lineage = upstream.lineage.clone();
        }
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(digest(path)?);
        Ok(())
    }

    /// Write next to each output. Outputs must already exist.
    pub fn write_for(&self, outputs: &[&Path]) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        for out in outputs {
            fs::write(manifest_path(out), &bytes)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::in_file(path, e.into()))?;
        let m: Manifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::in_file(path, e.into()))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Manifest(format!(
                "{}: unsupported format version {}",
                path.display(),
                m.format_version
            )));
        }
        Ok(m)
    }
}

/// Load the manifest of an upstream artifact and check that the artifact's
/// current content hash is one of the manifest's outputs.
pub fn verify_artifact(artifact: &Path) -> Result<Manifest> {
    let mpath = manifest_path(artifact);
    if !mpath.exists() {
        return Err(Error::Manifest(format!(
            "no manifest for {}",
            artifact.display()
        )));
    }
    let manifest = Manifest::load(&mpath)?;
    let hash = artifact_hash(artifact)?;
    if !manifest.outputs.iter().any(|o| o.sha256 == hash) {
        return Err(Error::Manifest(format!(
            "{} does not match the hash recorded in its manifest",
            artifact.display()
        )));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn chain_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data.jsonl");
        fs::write(&out, "1\n").unwrap();
        let mut m = Manifest::new("filter", serde_json::json!({"threshold": 0.5}));
        m.add_output(&out).unwrap();
        m.write_for(&[&out]).unwrap();
        assert_eq!(
            manifest_path(&out),
            dir.path().join("data.jsonl.manifest.json")
        );
        assert_eq!(verify_artifact(&out).unwrap().command, "filter");

        fs::write(&out, "2\n").unwrap();
        assert!(matches!(verify_artifact(&out), Err(Error::Manifest(_))));
        let other = dir.path().join("other.jsonl");
        fs::write(&other, "x").unwrap();
        assert!(matches!(verify_artifact(&other), Err(Error::Manifest(_))));
    }

    #[test]
    fn directory_hash_ignores_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("model.json"), "{}").unwrap();
        let before = artifact_hash(dir.path()).unwrap();
        fs::write(dir.path().join(DIR_MANIFEST), "{}").unwrap();
        assert_eq!(artifact_hash(dir.path()).unwrap(), before);
        fs::write(dir.path().join("model.json"), "{ }").unwrap();
        assert_ne!(artifact_hash(dir.path()).unwrap(), before);
    }
}
