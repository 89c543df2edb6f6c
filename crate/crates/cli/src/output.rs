//! Tabular results with a metadata header, written as CSV or JSON.
//!
//! Numbers are written in scientific notation with 15 significant digits,
//! so identical inputs give byte-identical files.

use std::io::Write;

use serde_json::{Map, Value};

use crate::config::Format;
use crate::error::{CliError, CliResult};

/// Significant digits after the leading one.
const DIGITS: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Bool(bool),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format_num(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self, precise: bool) -> Value {
        match self {
            Cell::Num(v) if precise => Value::String(format_num(*v)),
            Cell::Num(v) => serde_json::Number::from_f64(*v).map(Value::Number).unwrap_or(Value::Null),
            Cell::Int(v) => Value::from(*v),
            Cell::Bool(v) => Value::Bool(*v),
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map(Into::into).unwrap_or(Cell::Empty)
    }
}

/// `d.dddddddddddddde±x`; non-finite values as `nan`/`inf`/`-inf`.
pub fn format_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.DIGITS$e}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    /// Ordered key/value pairs written before the data.
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            metadata: Vec::new(),
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.push((key.into(), value.to_string()));
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// CSV: `# key: value` comment lines, then a header row and the data.
    pub fn write_csv<W: Write>(&self, mut out: W) -> CliResult<()> {
        let io = |e: std::io::Error| CliError::Output(e.to_string());
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}: {v}").map_err(io)?;
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let csv_err = |e: csv::Error| CliError::Output(e.to_string());
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).map_err(csv_err)?;
        }
        w.flush().map_err(io)
    }

    pub fn to_json(&self, precise: bool) -> Value {
        let metadata: Map<String, Value> = self
            .metadata
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                Value::Object(
                    self.columns
                        .iter()
                        .zip(row)
                        .map(|(c, cell)| (c.clone(), cell.json(precise)))
                        .collect(),
                )
            })
            .collect();
        let mut doc = Map::new();
        doc.insert("metadata".into(), Value::Object(metadata));
        doc.insert("columns".into(), Value::from(self.columns.clone()));
        doc.insert("rows".into(), Value::Array(rows));
        Value::Object(doc)
    }

    pub fn write<W: Write>(&self, format: Format, mut out: W) -> CliResult<()> {
        match format {
            Format::Csv => self.write_csv(out),
            Format::Json | Format::JsonPrecise => {
                let doc = self.to_json(format == Format::JsonPrecise);
                serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| CliError::Output(e.to_string()))?;
                writeln!(out).map_err(|e| CliError::Output(e.to_string()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_carry_fifteen_significant_digits() {
        assert_eq!(format_num(1.3318e5), "1.33180000000000e5");
        assert_eq!(format_num(-0.1), "-1.00000000000000e-1");
        assert_eq!(format_num(f64::NAN), "nan");
        let v = std::f64::consts::PI * 1e-7;
        let back: f64 = format_num(v).parse().unwrap();
        assert!((back - v).abs() <= 1e-14 * v);
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new(["x", "label", "flag"]);
        t.meta("command", "test");
        t.push(vec![0.5.into(), "a,b".into(), true.into()]);
        t.push(vec![Cell::Empty, "plain".into(), false.into()]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# command: test\nx,label,flag\n5.00000000000000e-1,\"a,b\",true\n,plain,false\n"
        );
    }

    #[test]
    fn json_variants() {
        let mut t = Table::new(["x"]);
        t.push(vec![0.25.into()]);
        assert_eq!(t.to_json(false)["rows"][0]["x"], Value::from(0.25));
        assert_eq!(t.to_json(true)["rows"][0]["x"], Value::from("2.50000000000000e-1"));
    }
}
