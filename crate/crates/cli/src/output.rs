//! CSV artifacts: a `#` metadata block, a header row, one row per grid point.

use std::io::{self, Write};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Int(i64),
    Bool(bool),
    Text(String),
    Empty,
}

impl Value {
    /// Reals carry 17 significant digits, enough to round-trip any `f64`.
    pub fn render(&self) -> String {
        match self {
            Value::Real(x) if x.is_finite() => format!("{x:.16e}"),
            Value::Real(x) if x.is_nan() => "nan".to_string(),
            Value::Real(x) => if *x > 0.0 { "inf" } else { "-inf" }.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Text(s) => s.clone(),
            Value::Empty => String::new(),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Real(x)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as i64)
    }
}

impl From<u64> for Value {
    fn from(x: u64) -> Self {
        Value::Int(x as i64)
    }
}

impl From<bool> for Value {
    fn from(x: bool) -> Self {
        Value::Bool(x)
    }
}

impl From<&str> for Value {
    fn from(x: &str) -> Self {
        Value::Text(x.to_string())
    }
}

impl From<String> for Value {
    fn from(x: String) -> Self {
        Value::Text(x)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(x: Option<T>) -> Self {
        x.map_or(Value::Empty, Into::into)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// Rows that record a failure in their `error` column.
    pub failed_rows: usize,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), ..Default::default() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Metadata lines: config echo, then versions.
pub fn metadata(config: &ExperimentConfig) -> Vec<String> {
    let mut lines: Vec<String> = config.to_entries().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
    lines.push(format!("version.slb-cli={}", env!("CARGO_PKG_VERSION")));
    lines.push(format!("version.slb-core={}", slb_core::VERSION));
    lines
}

pub fn write_csv<W: Write>(out: W, config: &ExperimentConfig, table: &Table) -> io::Result<()> {
    let mut out = io::BufWriter::new(out);
    for line in metadata(config) {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(Value::render))?;
    }
    w.flush()
}
