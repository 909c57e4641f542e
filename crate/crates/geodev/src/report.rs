//! Residual reports and deterministic CSV/JSON emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

/// Sup-norm summary of an operator evaluated along a path.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub label: String,
    pub samples: usize,
    pub sup: f64,
    pub worst_s: f64,
    pub component_sup: Vec<f64>,
}

impl ResidualReport {
    /// Collapse per-sample operator values `(s, residual vector)`.
    pub fn from_samples(label: impl Into<String>, entries: &[(f64, Vec<f64>)]) -> Self {
        let dim = entries.first().map(|(_, v)| v.len()).unwrap_or(0);
        let mut sup = 0.0f64;
        let mut worst_s = f64::NAN;
        let mut component_sup = vec![0.0f64; dim];
        for (s, v) in entries {
            for (i, c) in v.iter().enumerate() {
                component_sup[i] = component_sup[i].max(c.abs());
            }
            let m = v.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            if m >= sup {
                sup = m;
                worst_s = *s;
            }
        }
        ResidualReport {
            label: label.into(),
            samples: entries.len(),
            sup,
            worst_s,
            component_sup,
        }
    }
}

/// Full-precision float formatting (17 significant digits) so CSV diffs
/// are meaningful.
pub fn format_full(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format_full(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| crate::error::Error::Config(e.to_string()))?;
    body.push('\n');
    fs::write(path, body)?;
    Ok(path.to_path_buf())
}
