//! Tabular and JSON output. Every CSV starts with a `# config-hash:` line,
//! then a header row, then one row per record with floats printed to 17
//! significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::coeffs::{GridFunction, TimeGrid};
use crate::error::{Error, Result};

/// Hex SHA-256 of a canonical serialization of the run configuration.
pub fn config_hash(canonical: &[u8]) -> String {
    Sha256::digest(canonical)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// A header and numeric rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// A `t` column followed by the flattened node values of each function.
    pub fn from_grid(grid: &TimeGrid, columns: &[(&str, &GridFunction)]) -> Result<Self> {
        let mut header = vec!["t".to_string()];
        for (prefix, g) in columns {
            if g.grid() != grid {
                return Err(Error::Shape(format!("column `{prefix}` lives on a different grid")));
            }
            header.extend(g.column_names(prefix));
        }
        let mut table = Table::new(header);
        for (k, t) in grid.nodes().enumerate() {
            let mut row = vec![t];
            for (_, g) in columns {
                row.extend_from_slice(g.node(k).as_slice());
            }
            table.push(row);
        }
        Ok(table)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn to_csv_string(&self, hash: &str) -> Result<String> {
        let mut out = Vec::new();
        self.write(&mut out, hash)?;
        String::from_utf8(out).map_err(|e| Error::Format(e.to_string()))
    }

    fn write(&self, out: impl Write, hash: &str) -> Result<()> {
        let mut out = out;
        writeln!(out, "# config-hash: {hash}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|x| format_float(*x)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path, hash: &str) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?), hash)
    }

    /// Reads a CSV written by [`Table::write_csv`] or by hand; `#` lines are
    /// skipped.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut table = Table::new(header);
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Format(format!("row {}: `{f}` is not a number", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != table.header.len() {
                return Err(Error::Format(format!("row {} has {} fields", i + 1, row.len())));
            }
            table.push(row);
        }
        Ok(table)
    }
}

/// Pretty JSON with a trailing newline. Field order follows the struct
/// definitions, so output is stable.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::Mat;

    #[test]
    fn round_trip_is_exact() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let g = GridFunction::from_fn(grid, |t| Mat::from_column_slice(2, 1, &[t.sin() / 3.0, -t * 1e-300]));
        let table = Table::from_grid(&grid, &[("x", &g)]).unwrap();
        let text = table.to_csv_string("abc").unwrap();
        assert!(text.starts_with("# config-hash: abc\nt,x_1,x_2\n"));
        assert_eq!(Table::parse(&text).unwrap(), table);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(Table::parse("a,b\n1,2\n3\n").is_err());
        assert!(Table::parse("a\nx\n").is_err());
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            config_hash(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
