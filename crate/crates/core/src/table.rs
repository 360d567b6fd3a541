//! Column-named string tables used for every CSV/JSON artifact.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a value
//! written and read back is bit-identical; absent values are empty cells
//! (CSV) or `null` (JSON).

use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?} (expected csv or json)")),
        }
    }
}

pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // normalize -0
        "0".to_string()
    } else {
        format!("{x}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(headers: &[S]) -> Self {
        Self {
            headers: headers.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Column index, or a schema error naming the missing column. A table
    /// with neither columns nor rows (an empty JSON array) satisfies any
    /// column requirement.
    pub fn require(&self, name: &str) -> Result<usize> {
        if self.headers.is_empty() && self.rows.is_empty() {
            return Ok(0);
        }
        self.column(name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.iter().map(str::to_string).collect();
        let mut table = Table {
            headers,
            rows: Vec::new(),
        };
        for rec in rdr.records() {
            table.rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(table)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file)).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(writer);
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    /// JSON array of objects with keys in column order. Cells that parse as
    /// finite numbers or booleans are written as such; empty cells as null.
    pub fn to_json(&self) -> String {
        let mut out = String::from("[");
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(if i == 0 { "\n  {" } else { ",\n  {" });
            for (j, (h, cell)) in self.headers.iter().zip(row).enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(h).expect("string serializes"));
                out.push(':');
                out.push_str(&cell_json(cell));
            }
            out.push('}');
        }
        out.push_str(if self.rows.is_empty() { "]\n" } else { "\n]\n" });
        out
    }

    pub fn write(&self, path: &Path, format: Format) -> Result<()> {
        match format {
            Format::Csv => {
                let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
                self.write_csv(std::io::BufWriter::new(file))
            }
            Format::Json => std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e)),
        }
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        self.write(path, Format::Csv)
    }

    /// Reads a table written by [`Table::to_json`]. Column order follows the
    /// first object; an empty array gives a table with no columns.
    pub fn read_json(text: &str) -> Result<Self> {
        let objects: Vec<OrderedObject> = serde_json::from_str(text)?;
        let headers: Vec<String> = objects
            .first()
            .map(|o| o.0.iter().map(|(k, _)| k.clone()).collect())
            .unwrap_or_default();
        let mut table = Table {
            headers,
            rows: Vec::new(),
        };
        for (i, obj) in objects.into_iter().enumerate() {
            let keys: Vec<&String> = obj.0.iter().map(|(k, _)| k).collect();
            if keys.len() != table.headers.len() || keys.iter().zip(&table.headers).any(|(a, b)| *a != b) {
                return Err(Error::Schema(format!("row {}: keys differ from the first row", i + 1)));
            }
            let row = obj
                .0
                .into_iter()
                .map(|(k, v)| match v {
                    Value::Null => Ok(String::new()),
                    Value::Bool(b) => Ok(b.to_string()),
                    Value::String(s) => Ok(s),
                    Value::Number(n) => n
                        .as_f64()
                        .map(fmt_f64)
                        .ok_or_else(|| Error::Schema(format!("{k}: unrepresentable number"))),
                    _ => Err(Error::Schema(format!("{k}: nested values are not table cells"))),
                })
                .collect::<Result<_>>()?;
            table.rows.push(row);
        }
        Ok(table)
    }

    /// Reads a CSV or JSON table, chosen by the file extension.
    pub fn read_path(path: &Path) -> Result<Self> {
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if !is_json {
            return Self::read_csv_path(path);
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::read_json(&text).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            Error::Serde(e) => Error::Schema(format!("{}: {e}", path.display())),
            other => other,
        })
    }
}

/// JSON object that keeps its key order.
struct OrderedObject(Vec<(String, Value)>);

impl<'de> serde::Deserialize<'de> for OrderedObject {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Visit;
        impl<'de> serde::de::Visitor<'de> for Visit {
            type Value = OrderedObject;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: serde::de::MapAccess<'de>>(self, mut map: A) -> std::result::Result<OrderedObject, A::Error> {
                let mut entries = Vec::new();
                while let Some(entry) = map.next_entry::<String, Value>()? {
                    entries.push(entry);
                }
                Ok(OrderedObject(entries))
            }
        }
        d.deserialize_map(Visit)
    }
}

/// A cell is written as a JSON number only when reading it back through
/// [`fmt_f64`] reproduces the same text, so strings such as `"1.10"` or
/// `"007"` survive a round trip.
fn cell_json(cell: &str) -> String {
    if cell.is_empty() {
        return "null".into();
    }
    if cell == "true" || cell == "false" {
        return cell.into();
    }
    if let Ok(x) = cell.parse::<f64>() {
        if x.is_finite() && fmt_f64(x) == cell {
            if let Ok(Value::Number(n)) = serde_json::from_str::<Value>(cell) {
                return n.to_string();
            }
            return serde_json::Number::from_f64(x).map_or_else(|| cell.to_string(), |n| n.to_string());
        }
    }
    Value::String(cell.to_string()).to_string()
}

/// Parses a numeric cell; empty cells are `None`.
pub fn parse_opt(cell: &str, what: &str) -> Result<Option<f64>> {
    if cell.trim().is_empty() {
        return Ok(None);
    }
    cell.trim()
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Schema(format!("{what}: not a number: {cell:?}")))
}

pub fn parse_req(cell: &str, what: &str) -> Result<f64> {
    parse_opt(cell, what)?.ok_or_else(|| Error::Schema(format!("{what}: empty value")))
}

pub fn parse_count(cell: &str, what: &str) -> Result<usize> {
    cell.trim()
        .parse::<usize>()
        .map_err(|_| Error::Schema(format!("{what}: not a count: {cell:?}")))
}
