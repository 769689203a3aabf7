//! Plain CSV tables with `# key=value` metadata lines.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a file
//! read back reproduces the in-memory values bit for bit.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::{DivisionRate, SizeDensity, UniformGrid};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Source line of each row, 1-based.
    pub lines: Vec<usize>,
    pub meta: BTreeMap<String, String>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn require_column(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    }

    pub fn meta_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.meta.get(key) {
            None => Ok(None),
            Some(v) => v.trim().parse::<f64>().map(Some).map_err(|_| Error::Parse {
                line: 0,
                message: format!("metadata `{key}` is not a number: `{v}`"),
            }),
        }
    }
}

/// Reads a header line followed by numeric rows. Lines starting with `#` are
/// metadata (`# key=value`) or comments and may appear anywhere.
pub fn read_table<R: BufRead>(reader: R) -> Result<Table> {
    let mut table = Table::default();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                table
                    .meta
                    .insert(key.trim().to_string(), value.trim().to_string());
            }
            continue;
        }
        if table.headers.is_empty() {
            table.headers = trimmed.split(',').map(|h| h.trim().to_string()).collect();
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != table.headers.len() {
            return Err(Error::Parse {
                line: lineno,
                message: format!(
                    "expected {} fields, found {}",
                    table.headers.len(),
                    fields.len()
                ),
            });
        }
        let row = fields
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("`{}` is not a number", f.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: lineno,
                message: "non-finite value".to_string(),
            });
        }
        table.rows.push(row);
        table.lines.push(lineno);
    }
    if table.headers.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no header line".to_string(),
        });
    }
    Ok(table)
}

/// Recovers the uniform grid from an `x` column starting at the origin.
pub fn grid_from_nodes(x: &[f64]) -> Result<UniformGrid> {
    if x.len() < 4 {
        return Err(Error::InvalidGrid(format!(
            "need at least 4 nodes, got {}",
            x.len()
        )));
    }
    if x[0] != 0.0 {
        return Err(Error::InvalidGrid("first node must be x = 0".to_string()));
    }
    let dx = x[x.len() - 1] / (x.len() - 1) as f64;
    let grid = UniformGrid::new(dx, x.len())?;
    for (i, &xi) in x.iter().enumerate() {
        if (xi - grid.x(i)).abs() > 1e-9 * dx.max(xi.abs()) {
            return Err(Error::InvalidGrid(format!(
                "node {i} at {xi} is off the uniform grid"
            )));
        }
    }
    Ok(grid)
}

/// Writes `x,<name>` rows then the metadata lines.
pub fn write_profile<W: Write>(
    mut w: W,
    grid: &UniformGrid,
    name: &str,
    values: &[f64],
    meta: &[(&str, String)],
) -> Result<()> {
    writeln!(w, "x,{name}")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{},{}", grid.x(i), v)?;
    }
    for (k, v) in meta {
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

pub fn write_density<W: Write>(w: W, d: &SizeDensity, meta: &[(&str, String)]) -> Result<()> {
    write_profile(w, d.grid(), "N", d.values(), meta)
}

pub fn write_rate<W: Write>(w: W, b: &DivisionRate, meta: &[(&str, String)]) -> Result<()> {
    write_profile(w, b.grid(), "B", b.values(), meta)
}

/// Reads an `x,N` density file.
pub fn read_density<R: BufRead>(reader: R) -> Result<(SizeDensity, Table)> {
    let table = read_table(reader)?;
    let x = table.require_column("x")?;
    let n = table.require_column("N")?;
    let grid = grid_from_nodes(&x)?;
    Ok((SizeDensity::new(grid, n)?, table))
}

/// Reads the `B` column of a rate file (`x,B` or a reconstruction export).
pub fn read_rate<R: BufRead>(reader: R) -> Result<(DivisionRate, Table)> {
    let table = read_table(reader)?;
    let x = table.require_column("x")?;
    let b = table.require_column("B")?;
    let grid = grid_from_nodes(&x)?;
    Ok((DivisionRate::new(grid, b)?, table))
}
