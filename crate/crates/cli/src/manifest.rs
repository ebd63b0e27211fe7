//! Output directories and the `run-manifest.json` written beside them.

use std::path::{Path, PathBuf};

use anyhow::Context;
use polyglot_ner::training::{write_atomic, FORMAT_VERSION};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run-manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Versions {
    pub ner: &'static str,
    pub checkpoint_format: u32,
}

impl Versions {
    pub fn current() -> Self {
        Versions { ner: env!("CARGO_PKG_VERSION"), checkpoint_format: FORMAT_VERSION }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub versions: Versions,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Digests of the given files, or of every file below the given directories,
/// in sorted path order.
pub fn digest_inputs(paths: &[&Path]) -> anyhow::Result<Vec<FileDigest>> {
    let mut files = Vec::new();
    for p in paths {
        collect_files(p, &mut files)?;
    }
    files.sort();
    files.dedup();
    files
        .into_iter()
        .map(|f| {
            let bytes = std::fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
            Ok(FileDigest { path: f.display().to_string(), sha256: sha256_hex(&bytes) })
        })
        .collect()
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if path.is_dir() {
        let entries = std::fs::read_dir(path).with_context(|| format!("listing {}", path.display()))?;
        for entry in entries {
            collect_files(&entry?.path(), out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Collects files written below one directory so the manifest can list them.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileDigest>,
}

impl OutputDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutputDir { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> anyhow::Result<()> {
        write_atomic(&self.path(rel), bytes)?;
        self.push(rel, bytes);
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> anyhow::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Records a file some other writer already put below the root.
    pub fn record(&mut self, rel: &str) -> anyhow::Result<()> {
        let path = self.path(rel);
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        self.push(rel, &bytes);
        Ok(())
    }

    fn push(&mut self, rel: &str, bytes: &[u8]) {
        self.files.retain(|f| f.path != rel);
        self.files.push(FileDigest { path: rel.to_string(), sha256: sha256_hex(bytes) });
    }

    pub fn digest(&self, rel: &str) -> Option<&str> {
        self.files.iter().find(|f| f.path == rel).map(|f| f.sha256.as_str())
    }

    /// Writes the manifest. `config` should not mention the output
    /// directory, so reruns into a fresh directory hash the same.
    pub fn finish(mut self, command: &str, config: serde_json::Value, seed: Option<u64>, inputs: Vec<FileDigest>) -> anyhow::Result<RunManifest> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: command.to_string(),
            config_hash: sha256_hex(&serde_json::to_vec(&config)?),
            config,
            seed,
            versions: Versions::current(),
            inputs,
            outputs: self.files,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.root.join(MANIFEST_FILE), &bytes)?;
        Ok(manifest)
    }
}
