//! Run manifests and staged output directories.
//!
//! Outputs are written to a hidden sibling directory first and moved under
//! `--out` only after every file has been produced, so a failing run leaves
//! no partial artifacts behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dustbin::digest::sha256_file;
use serde::Serialize;

#[derive(Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Config echo, seed, input digests and tool version for one run. No
/// timestamps or host details, so reruns produce identical manifests.
#[derive(Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    pub threads: usize,
    pub precision: crate::Precision,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &'static str, global: &crate::Global, config: &impl Serialize, seed: Option<u64>) -> Self {
        Self {
            tool: "dustbin",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            threads: global.threads,
            precision: global.precision,
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> dustbin::Result<()> {
        let digest = FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        };
        self.inputs.insert(role.to_string(), digest);
        Ok(())
    }
}

pub struct Staging {
    dir: PathBuf,
    out: PathBuf,
    files: Vec<String>,
}

fn io_err(path: &Path, e: std::io::Error) -> dustbin::Error {
    dustbin::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

impl Staging {
    pub fn new(out: &Path) -> dustbin::Result<Self> {
        let name = out
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let dir = out.with_file_name(format!(".{name}.partial-{}", std::process::id()));
        if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self {
            dir,
            out: out.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Path of a new output file inside the staging directory.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> dustbin::Result<()> {
        let p = self.file(name);
        std::fs::write(&p, bytes).map_err(|e| io_err(&p, e))
    }

    /// Digest the staged files, add the manifest and move everything under
    /// the output directory.
    pub fn commit(mut self, mut manifest: Manifest) -> dustbin::Result<()> {
        for f in &self.files {
            manifest.outputs.insert(f.clone(), sha256_file(self.dir.join(f))?);
        }
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        self.write("manifest.json", json)?;
        std::fs::create_dir_all(&self.out).map_err(|e| io_err(&self.out, e))?;
        for f in &self.files {
            let dst = self.out.join(f);
            std::fs::rename(self.dir.join(f), &dst).map_err(|e| io_err(&dst, e))?;
        }
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}
