//! CSV and manifest emission. CSVs are RFC-4180 with a header row and '.'
//! decimal separators; identical configs (seed included) produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed float formatting so output bytes are a pure function of the values.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn fmt_acc(v: f64) -> String {
    format!("{v:.6}")
}

#[derive(Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub command: String,
    pub suites: BTreeMap<String, bool>,
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            config_hash,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            suites: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, suite: &str, passed: bool) {
        self.suites.insert(suite.to_string(), passed);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_rfc4180_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, &["a", "b"], &[vec!["1".into(), "with,comma".into()]]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("a,b"));
        assert!(text.contains("\"with,comma\""));
    }

    #[test]
    fn float_formatting_is_deterministic() {
        assert_eq!(fmt_f64(0.1 + 0.2), fmt_f64(0.30000000000000004));
        assert_eq!(fmt_acc(0.25), "0.250000");
    }
}
