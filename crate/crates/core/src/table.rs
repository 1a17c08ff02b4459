//! Numeric tables as CSV with a fixed header and 17 significant digits.

use std::path::Path;

use crate::error::{Error, Result};

/// Formats with 17 significant digits (`d.dddddddddddddddde±x`), which
/// round-trips every finite `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("not a number: {s:?}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match header");
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Format(format!("missing column {name:?}")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| fmt_f64(*v))).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Strict reader: every record must have exactly the header's width and
    /// every field must parse as a number.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_path(path)
            .map_err(csv_err)?;
        let columns: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            rows.push(rec.iter().map(parse_f64).collect::<Result<Vec<f64>>>()?);
        }
        Ok(Self { columns, rows })
    }

    /// Reads and checks that the header matches `expected` exactly.
    pub fn read_expecting(path: impl AsRef<Path>, expected: &[&str]) -> Result<Self> {
        let t = Self::read(path)?;
        if t.columns.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(Error::Format(format!(
                "unexpected columns {:?}, expected {:?}",
                t.columns, expected
            )));
        }
        Ok(t)
    }
}

/// Row-at-a-time writer producing the same format as [`Table::write`], for
/// outputs too large to hold in memory.
pub struct TableWriter {
    inner: csv::Writer<std::fs::File>,
    width: usize,
}

impl TableWriter {
    pub fn create<S: AsRef<str>>(path: impl AsRef<Path>, columns: &[S]) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).map_err(csv_err)?;
        inner
            .write_record(columns.iter().map(|c| c.as_ref()))
            .map_err(csv_err)?;
        Ok(Self {
            inner,
            width: columns.len(),
        })
    }

    pub fn write_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::InvalidInput("row width does not match header".into()));
        }
        self.inner
            .write_record(row.iter().map(|v| fmt_f64(*v)))
            .map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
