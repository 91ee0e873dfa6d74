//! Machine-readable experiment outputs: CSV tables for plottable series and
//! JSON for structured reports. Every file embeds the full configuration and
//! a code-version string so a run can be reproduced from its outputs alone.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::config::ExperimentConfig;
use crate::error::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// CSV with '#'-prefixed provenance lines, a header row, '.' decimals and LF
/// line endings.
pub struct CsvWriter {
    lines: Vec<String>,
    columns: usize,
}

impl CsvWriter {
    pub fn new(experiment: &str, config: &ExperimentConfig, header: &[&str]) -> CsvWriter {
        let mut lines = Vec::new();
        lines.push(format!("# horomix {VERSION} experiment={experiment}"));
        for (k, v) in config.entries() {
            lines.push(format!("# {k} = {v}"));
        }
        lines.push(header.join(","));
        CsvWriter {
            lines,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.columns, "csv row arity mismatch");
        self.lines.push(fields.join(","));
    }

    pub fn footer(&mut self, note: &str) {
        self.lines.push(format!("# {note}"));
    }

    pub fn to_string(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_string().as_bytes())?;
        Ok(())
    }
}

/// JSON report skeleton with config and version embedded.
pub fn json_report(experiment: &str, config: &ExperimentConfig, payload: Value) -> Value {
    let mut cfg = Map::new();
    for (k, v) in config.entries() {
        cfg.insert(k, Value::String(v));
    }
    json!({
        "experiment": experiment,
        "version": VERSION,
        "config": Value::Object(cfg),
        "report": payload,
    })
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

impl From<serde_json::Error> for crate::error::Error {
    fn from(e: serde_json::Error) -> Self {
        crate::error::Error::Io(std::io::Error::other(e))
    }
}
