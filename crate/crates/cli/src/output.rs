//! Result tables with a metadata header, written as CSV or JSON.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde_json::json;

use crate::config::{Config, Format};

pub const TOOL: &str = concat!("kmeflow ", env!("CARGO_PKG_VERSION"));

/// Header lines written before every table.
#[derive(Clone, Debug)]
pub struct Metadata {
    pub command: String,
    pub seed: u64,
    pub created_unix: u64,
    pub config: Config,
}

impl Metadata {
    pub fn new(command: &str, config: &Config) -> Metadata {
        Metadata {
            command: command.to_string(),
            seed: config.seed.unwrap_or_default(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or_default(),
            config: config.clone(),
        }
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("tool", TOOL.to_string()),
            ("command", self.command.clone()),
            ("seed", self.seed.to_string()),
            ("created_unix", self.created_unix.to_string()),
            ("sobol", kmeflow::sampling::DIRECTION_NUMBERS.to_string()),
            ("enkf_variant", kmeflow::baselines::ENKF_VARIANT.to_string()),
            ("config", self.config.to_json()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
    Na,
}

impl Value {
    fn csv(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Float(v) => v.to_string(),
            Value::Text(s) => s.clone(),
            Value::Na => "NA".into(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Value::Int(v) => json!(v),
            Value::Float(v) => json!(v),
            Value::Text(s) => json!(s),
            Value::Na => serde_json::Value::Null,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Value {
        Value::Float(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Value {
        Value::Int(v as i64)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Value {
        Value::Text(v.to_string())
    }
}

impl From<Option<f64>> for Value {
    fn from(v: Option<f64>) -> Value {
        v.map_or(Value::Na, Value::Float)
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    pub name: &'static str,
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &'static str, columns: &'static [&'static str]) -> Table {
        Table {
            name,
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width for {}", self.name);
        self.rows.push(row);
    }
}

/// Writes `table` into `dir` as `<name>.csv` or `<name>.json`.
pub fn write_table(dir: &Path, meta: &Metadata, table: &Table, format: Format) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{}.{}", table.name, format.name()));
    let text = match format {
        Format::Csv => render_csv(meta, table)?,
        Format::Json => render_json(meta, table),
    };
    let mut f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn render_csv(meta: &Metadata, table: &Table) -> Result<String> {
    let mut out = String::new();
    for (k, v) in meta.pairs() {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(Value::csv))?;
    }
    out.push_str(std::str::from_utf8(&w.into_inner()?)?);
    Ok(out)
}

fn render_json(meta: &Metadata, table: &Table) -> String {
    let mut m = serde_json::Map::new();
    for (k, v) in meta.pairs() {
        let v = if k == "config" {
            serde_json::from_str(&v).expect("config JSON is valid")
        } else {
            json!(v)
        };
        m.insert(k.to_string(), v);
    }
    let rows: Vec<Vec<serde_json::Value>> = table
        .rows
        .iter()
        .map(|r| r.iter().map(Value::json).collect())
        .collect();
    let doc = json!({ "metadata": m, "columns": table.columns, "rows": rows });
    serde_json::to_string_pretty(&doc).expect("table serializes") + "\n"
}

/// Writes the resolved configuration as `config.toml`.
pub fn write_config(dir: &Path, config: &Config) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("config.toml");
    let text = format!("# {TOOL}\n{}", config.to_toml());
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// File contents without `#` header lines.
pub fn body_of(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> Metadata {
        Metadata {
            command: "toy".into(),
            seed: 7,
            created_unix: 0,
            config: Config {
                seed: Some(7),
                ..Config::default()
            },
        }
    }

    #[test]
    fn csv_has_header_then_columns() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec![1usize.into(), Value::Na]);
        t.push(vec![0.5.into(), "x".into()]);
        let s = render_csv(&meta(), &t).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[0], format!("# tool: {TOOL}"));
        assert_eq!(lines[2], "# seed: 7");
        assert_eq!(lines[6], "# config: {\"seed\":7}");
        assert_eq!(&lines[7..], ["a,b", "1,NA", "0.5,x"]);
        assert_eq!(body_of(&s), "a,b\n1,NA\n0.5,x\n");
    }

    #[test]
    fn json_keeps_types() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec![2usize.into(), Value::Na]);
        let v: serde_json::Value = serde_json::from_str(&render_json(&meta(), &t)).unwrap();
        assert_eq!(v["rows"][0][0], json!(2));
        assert!(v["rows"][0][1].is_null());
        assert_eq!(v["metadata"]["config"]["seed"], json!(7));
    }
}
