//! File formats: CSV with full double precision, JSON reports, and
//! two-column `.dat` companions for plotting.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// A named file held in memory until export.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header row plus one line per index; all columns must have equal length.
pub fn csv(header: &[&str], columns: &[&[f64]]) -> Contents {
    assert_eq!(header.len(), columns.len());
    let rows = columns.first().map_or(0, |c| c.len());
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..rows {
        let line: Vec<String> = columns.iter().map(|c| num(c[i])).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Contents(out.into_bytes())
}

/// `# x value` comment and whitespace-separated pairs.
pub fn dat(labels: [&str; 2], x: &[f64], y: &[f64]) -> Contents {
    let mut out = format!("# {} {}\n", labels[0], labels[1]);
    for (a, b) in x.iter().zip(y) {
        let _ = writeln!(out, "{} {}", num(*a), num(*b));
    }
    Contents(out.into_bytes())
}

pub fn json<T: Serialize>(value: &T) -> Contents {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    Contents(s.into_bytes())
}

/// Config-format text, e.g. a vorticity model that can be read back.
pub fn toml_text<T: Serialize>(value: &T) -> Contents {
    Contents(
        toml::to_string(value)
            .expect("model serializes")
            .into_bytes(),
    )
}

/// Unnamed file contents.
pub struct Contents(pub Vec<u8>);

impl Contents {
    pub fn named(self, name: impl Into<String>) -> Artifact {
        Artifact {
            name: name.into(),
            bytes: self.0,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes every artifact into `dir` and returns the manifest in artifact order.
pub fn export_results(artifacts: &[Artifact], dir: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    artifacts
        .iter()
        .map(|a| {
            let path = dir.join(&a.name);
            std::fs::write(&path, &a.bytes).map_err(|e| CliError::io(&path, e))?;
            Ok(ManifestEntry {
                path: a.name.clone(),
                bytes: a.bytes.len(),
                sha256: sha256_hex(&a.bytes),
            })
        })
        .collect()
}
