//! CSV tables and report emission.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use crate::config::Format;
use crate::Failure;

pub const SCHEMA_VERSION: u32 = 1;

/// 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct Csv {
    pub header: &'static str,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &'static str) -> Self {
        Csv { header, rows: Vec::new() }
    }

    pub fn push(&mut self, cells: &[f64]) {
        self.rows.push(cells.iter().map(|&v| num(v)).collect());
    }

    pub fn render(&self) -> String {
        let mut s = String::with_capacity(self.rows.len() * 64);
        s.push_str(self.header);
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
        }
        std::fs::write(path, self.render()).map_err(|e| io_fail(path, e))
    }
}

pub fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::Input(format!("cannot write {}: {e}", path.display()))
}

/// Result of one command: a JSON report, its text rendering, an optional
/// table for --out and the process exit code.
pub struct Outcome {
    pub command: &'static str,
    pub report: Value,
    pub text: String,
    pub csv: Option<Csv>,
    pub exit: u8,
}

impl Outcome {
    pub fn new(command: &'static str, report: Value) -> Self {
        Outcome { command, report, text: String::new(), csv: None, exit: 0 }
    }

    pub fn line(&mut self, text: impl AsRef<str>) {
        let _ = writeln!(self.text, "{}", text.as_ref());
    }

    pub fn emit(self, format: Format, out: Option<&Path>) -> Result<u8, Failure> {
        if let (Some(csv), Some(path)) = (&self.csv, out) {
            csv.write(path)?;
        }
        match format {
            Format::Text => {
                print!("{}", self.text);
                if let (Some(csv), None) = (&self.csv, out) {
                    print!("{}", csv.render());
                }
            }
            Format::Json => {
                let mut doc = json!({ "schema": format!("parisdiv.{}/v{SCHEMA_VERSION}", self.command) });
                if let (Value::Object(d), Value::Object(r)) = (&mut doc, self.report) {
                    d.extend(r);
                }
                println!("{}", serde_json::to_string_pretty(&doc).expect("report serializes"));
            }
        }
        Ok(self.exit)
    }
}
