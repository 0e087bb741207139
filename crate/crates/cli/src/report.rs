use std::collections::BTreeMap;
use std::fmt::Write as _;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

/// Machine-readable record of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub input: String,
    /// Hex SHA-256 of the input file bytes.
    pub input_digest: String,
    pub payload: Value,
    pub timings_ms: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, input: &str, bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let mut hex = String::with_capacity(64);
        for b in digest {
            let _ = write!(hex, "{b:02x}");
        }
        Self {
            command: command.to_string(),
            input: input.to_string(),
            input_digest: hex,
            payload: Value::Null,
            timings_ms: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = std::time::Instant::now();
        let out = f();
        self.timings_ms
            .insert(label.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }
}

/// Rendered result of a command, in every output format.
pub struct Outcome {
    pub report: RunReport,
    pub table: String,
    pub csv: String,
    pub code: i32,
}

impl Outcome {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(&self.report).expect("report serializes") + "\n",
            Format::Csv => self.csv.clone(),
            Format::Table => {
                let mut s = self.table.clone();
                for w in &self.report.warnings {
                    let _ = writeln!(s, "warning: {w}");
                }
                s
            }
        }
    }
}

/// `x` to six significant digits, `%g` style.
pub fn sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let e = x.abs().log10().floor() as i32;
    if (-5..6).contains(&e) {
        let s = format!("{:.*}", (5 - e).max(0) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.5e}");
        let (m, exp) = s.split_once('e').unwrap();
        let m = if m.contains('.') {
            m.trim_end_matches('0').trim_end_matches('.')
        } else {
            m
        };
        format!("{m}e{exp}")
    }
}

pub fn opt_sig(x: Option<f64>) -> String {
    x.map(sig).unwrap_or_default()
}
