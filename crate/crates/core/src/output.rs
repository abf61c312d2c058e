//! Result tables and their CSV/JSON emission.
//!
//! Floats are written with 17 significant digits in scientific notation so a
//! rerun with the same seed reproduces every file byte for byte.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, OutputFormat};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Float(x) => format_float(*x),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Float(x) if x.is_finite() => json!(x),
            Cell::Float(x) => json!(format_float(*x)),
            Cell::Int(n) => json!(n),
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::Int(n)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Bool(b)
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

/// `{:.16e}` for finite values, `inf`/`-inf`/`nan` otherwise.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Joins a vector into one `;`-separated cell.
pub fn join_floats(v: &[f64]) -> Cell {
    Cell::Text(v.iter().map(|&x| format_float(x)).collect::<Vec<_>>().join(";"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_columns(name: &str, columns: Vec<String>) -> Self {
        Table {
            name: name.to_string(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width of table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Config echo carried by every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub config: Value,
}

impl Provenance {
    pub fn of(config: &ExperimentConfig) -> Self {
        Provenance {
            config_sha256: config.sha256(),
            seed: config.seed(),
            config: serde_json::from_str(&config.canonical_json()).expect("canonical config is JSON"),
        }
    }
}

pub fn write_csv<W: Write>(out: &mut W, table: &Table, prov: &Provenance) -> io::Result<()> {
    writeln!(out, "# config_sha256={}", prov.config_sha256)?;
    writeln!(out, "# seed={}", prov.seed)?;
    writeln!(out, "# config={}", prov.config)?;
    writeln!(out, "{}", table.columns.join(","))?;
    for row in &table.rows {
        let line: Vec<String> = row.iter().map(Cell::csv).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn table_json(table: &Table, prov: &Provenance) -> Value {
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|row| {
            let obj: Map<String, Value> = table.columns.iter().cloned().zip(row.iter().map(Cell::json)).collect();
            Value::Object(obj)
        })
        .collect();
    json!({
        "provenance": prov,
        "table": table.name,
        "columns": table.columns,
        "rows": rows,
    })
}

fn write_text(path: &Path, bytes: &[u8]) -> io::Result<()> {
    fs::write(path, bytes)
}

/// Writes each table in the configured format plus `summary.json`; returns
/// the paths written.
pub fn write_artifacts(
    dir: &Path,
    format: OutputFormat,
    tables: &[Table],
    summary: &Value,
    prov: &Provenance,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in tables {
        let (path, bytes) = match format {
            OutputFormat::Csv => {
                let mut buf = Vec::new();
                write_csv(&mut buf, t, prov)?;
                (dir.join(format!("{}.csv", t.name)), buf)
            }
            OutputFormat::Json => {
                let mut buf = serde_json::to_vec_pretty(&table_json(t, prov))?;
                buf.push(b'\n');
                (dir.join(format!("{}.json", t.name)), buf)
            }
        };
        write_text(&path, &bytes)?;
        written.push(path);
    }
    let mut doc = Map::new();
    doc.insert("provenance".into(), serde_json::to_value(prov)?);
    if let Value::Object(m) = summary {
        doc.extend(m.clone());
    } else {
        doc.insert("summary".into(), summary.clone());
    }
    let mut buf = serde_json::to_vec_pretty(&Value::Object(doc))?;
    buf.push(b'\n');
    let path = dir.join("summary.json");
    write_text(&path, &buf)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            config_sha256: "ab".into(),
            seed: 7,
            config: json!({"k": 1}),
        }
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new("t", &["x", "n", "s"]);
        t.push(vec![0.1.into(), 3u64.into(), "a,b".into()]);
        t.push(vec![f64::INFINITY.into(), 0u64.into(), "c".into()]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &t, &prov()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# config_sha256=ab\n# seed=7\n# config={\"k\":1}\nx,n,s\n\
             1.0000000000000001e-1,3,\"a,b\"\ninf,0,c\n"
        );
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [std::f64::consts::PI, 1e-300, -2.5e17, 0.1 + 0.2] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn json_rows_are_objects() {
        let mut t = Table::new("t", &["x", "ok"]);
        t.push(vec![1.5.into(), true.into()]);
        let v = table_json(&t, &prov());
        assert_eq!(v["rows"][0]["x"], json!(1.5));
        assert_eq!(v["provenance"]["seed"], json!(7));
    }
}
