//! Run artifacts: CSV tables, JSON summaries and the SHA-256 manifest.

use std::fs;
use std::path::{Path, PathBuf};

use drgp::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Comma-separated table with a header row.
pub fn csv_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Columns of equal length, one per header entry.
pub fn csv_columns(header: &[&str], columns: &[&[f64]]) -> String {
    let len = columns.first().map_or(0, |c| c.len());
    debug_assert!(columns.iter().all(|c| c.len() == len));
    let rows: Vec<Vec<String>> = (0..len)
        .map(|i| columns.iter().map(|c| fmt_f64(c[i])).collect())
        .collect();
    csv_table(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>(), &rows)
}

/// Square matrix over grid coordinates: the header row and the first column
/// carry the coordinates.
pub fn csv_grid_matrix(coords: &[f64], m: &DMatrix<f64>) -> String {
    debug_assert_eq!(m.nrows(), coords.len());
    debug_assert_eq!(m.ncols(), coords.len());
    let mut header = vec!["x".to_string()];
    header.extend(coords.iter().map(|c| fmt_f64(*c)));
    let rows: Vec<Vec<String>> = coords
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut row = vec![fmt_f64(*c)];
            row.extend(m.row(i).iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    csv_table(&header, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub kind: String,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub files: Vec<ManifestEntry>,
}

/// Output directory that records every file it writes.
pub struct OutputDir {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `name` and records it under `group`. The kind is the file
    /// extension.
    pub fn write(&mut self, name: &str, group: &str, contents: &str) -> Result<(), CliError> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        let kind = Path::new(name)
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_string();
        self.entries.retain(|e| e.path != name);
        self.entries.push(ManifestEntry {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
            kind,
            group: group.to_string(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, group: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(name, group, &text)
    }

    /// Writes `manifest.json` listing every recorded file, sorted by path.
    pub fn finish(mut self, command: &str) -> Result<Manifest, CliError> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            tool: "drgp".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            files: self.entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST), text)?;
        Ok(manifest)
    }
}

/// Checks every manifest entry against the bytes on disk.
pub fn verify_manifest(root: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(root.join(MANIFEST))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad manifest: {e}")))?;
    for entry in &manifest.files {
        let bytes = fs::read(root.join(&entry.path))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != entry.sha256 {
            return Err(CliError::Diagnostic(format!("checksum mismatch for {}", entry.path)));
        }
    }
    Ok(manifest)
}
