//! CSV tables with a fixed numeric format.

use std::path::{Path, PathBuf};

use crate::CliError;

/// One CSV cell. Numbers are written with 12 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(usize),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

pub fn format_number(v: f64) -> String {
    format!("{v:.11e}")
}

/// An in-memory table written in one go.
#[derive(Debug, Clone)]
pub struct Table {
    pub file_name: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(file_name: &'static str, header: Vec<String>) -> Self {
        Table {
            file_name,
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len(), "{}: row width", self.file_name);
        self.rows.push(row);
    }

    /// Writes the table to `dir`, refusing non-finite numbers.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(self.file_name);
        let mut cells: Vec<Vec<String>> = Vec::with_capacity(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            let mut out = Vec::with_capacity(row.len());
            for (col, cell) in row.iter().enumerate() {
                out.push(match cell {
                    Cell::Num(v) if !v.is_finite() => {
                        return Err(CliError::NonFinite {
                            file: self.file_name.to_string(),
                            row: i + 1,
                            column: self.header[col].clone(),
                        })
                    }
                    Cell::Num(v) => format_number(*v),
                    Cell::Int(v) => v.to_string(),
                    Cell::Text(s) => s.clone(),
                    Cell::Empty => String::new(),
                });
            }
            cells.push(out);
        }
        let io = |e: csv::Error| CliError::Csv {
            path: path.clone(),
            source: e,
        };
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        w.write_record(&self.header).map_err(io)?;
        for row in &cells {
            w.write_record(row).map_err(io)?;
        }
        w.flush().map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

/// `prefix_1 .. prefix_n`.
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}
