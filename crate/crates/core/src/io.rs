//! Output artifacts: raw tensors with JSON sidecars, CSV tables, JSON
//! documents and a manifest hashing every file written.
//!
//! Tensors are stored as contiguous little-endian `f64` in C order; the
//! sidecar `<name>.json` records the shape, axis names and grid metadata.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub dtype: String,
    pub byte_order: String,
    pub shape: Vec<usize>,
    pub axes: Vec<String>,
    /// Free-form metadata such as grid origin and spacing.
    pub attributes: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub status: String,
    pub error: Option<String>,
    pub crate_version: String,
    pub config_sha256: String,
    /// The validated config with every default written out.
    pub config: String,
    pub seed: u64,
    pub files: Vec<FileEntry>,
    /// Wall-clock seconds per stage; excluded from [`Manifest::fingerprint`].
    pub timing: BTreeMap<String, f64>,
}

impl Manifest {
    /// Hash of everything except the timings.
    pub fn fingerprint(&self) -> String {
        let mut m = self.clone();
        m.timing.clear();
        sha256_hex(&serde_json::to_vec(&m).expect("manifest serialises"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the files written into one output directory.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
    timing: BTreeMap<String, f64>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
            timing: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record_time(&mut self, stage: &str, seconds: f64) {
        self.timing.insert(stage.into(), seconds);
    }

    fn register(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(&path)?;
        f.write_all(bytes)?;
        self.files.retain(|e| e.path != name);
        self.files.push(FileEntry {
            path: name.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.register(name, bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.register(name, &text)
    }

    /// One JSON document per line.
    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut text = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut text, r)?;
            text.push(b'\n');
        }
        self.register(name, &text)
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let mut text = header.join(",");
        text.push('\n');
        for r in rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            text.push_str(&line.join(","));
            text.push('\n');
        }
        self.register(name, text.as_bytes())
    }

    /// `<name>.f64` with its `<name>.json` sidecar.
    pub fn write_tensor(
        &mut self,
        name: &str,
        data: &[f64],
        shape: &[usize],
        axes: &[&str],
        attributes: serde_json::Value,
    ) -> Result<()> {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape mismatch");
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.register(&format!("{name}.f64"), &bytes)?;
        let meta = TensorMeta {
            dtype: "f64".into(),
            byte_order: "little".into(),
            shape: shape.to_vec(),
            axes: axes.iter().map(|s| s.to_string()).collect(),
            attributes,
        };
        self.write_json(&format!("{name}.json"), &meta)
    }

    /// Writes `manifest.json`; a failed run carries the `FAILED` status and
    /// the error text alongside whatever was flushed before the failure.
    pub fn finish(
        mut self,
        command: &str,
        config: &str,
        seed: u64,
        error: Option<String>,
    ) -> Result<Manifest> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: command.into(),
            status: if error.is_some() { "FAILED".into() } else { "ok".into() },
            error,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: sha256_hex(config.as_bytes()),
            config: config.into(),
            seed,
            files: self.files,
            timing: self.timing,
        };
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

/// Reads a tensor written by [`OutputDir::write_tensor`].
pub fn read_tensor(dir: &Path, name: &str) -> Result<(TensorMeta, Vec<f64>)> {
    let meta: TensorMeta =
        serde_json::from_slice(&fs::read(dir.join(format!("{name}.json")))?)?;
    let bytes = fs::read(dir.join(format!("{name}.f64")))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((meta, data))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write_tensor("v", &[1.0, -2.5, 3.0, 0.0], &[2, 2], &["y", "x"], serde_json::json!({}))
            .unwrap();
        out.write_csv("t.csv", &["a", "b"], &[vec![1.0, 2.0]]).unwrap();
        out.record_time("solve", 1.5);
        let m = out.finish("solve-hjb", "schema = 1", 7, None).unwrap();
        let (meta, data) = read_tensor(dir.path(), "v").unwrap();
        assert_eq!(meta.shape, vec![2, 2]);
        assert_eq!(data, vec![1.0, -2.5, 3.0, 0.0]);
        assert_eq!(m.files.len(), 3);
        let back = read_manifest(dir.path()).unwrap();
        assert_eq!(back, m);
        let mut other = m.clone();
        other.timing.insert("solve".into(), 99.0);
        assert_eq!(other.fingerprint(), m.fingerprint());
    }

    #[test]
    fn failures_are_marked() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path()).unwrap();
        let m = out.finish("verify", "", 0, Some("boom".into())).unwrap();
        assert_eq!(m.status, "FAILED");
    }
}
