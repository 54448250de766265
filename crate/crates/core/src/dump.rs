//! Delimited-text field dumps.
//!
//! One header line carries the grid metadata and column names, then one row per node of the
//! full grid in node order (`y` slowest, last spatial axis fastest):
//! `y x1..xn u1..um r1..rm contact1..contactm`. Numbers use the shortest representation that
//! parses back to the same `f64`, so dumps are bit-stable and round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub nx: Vec<usize>,
    pub ny: usize,
    pub bounds: Vec<(f64, f64)>,
    pub length: f64,
    pub m: usize,
    pub columns: Vec<String>,
    /// Row-major, one row per node.
    pub rows: Vec<Vec<f64>>,
}

pub fn column_names(dim: usize, m: usize) -> Vec<String> {
    let mut c = vec!["y".to_string()];
    c.extend((1..=dim).map(|k| format!("x{k}")));
    for prefix in ["u", "r", "contact"] {
        c.extend((1..=m).map(|i| format!("{prefix}{i}")));
    }
    c
}

fn header(grid: &Grid, m: usize) -> String {
    let join = |v: Vec<String>| v.join(",");
    format!(
        "# n={} nx={} ny={} bounds={} L={} m={} columns={}",
        grid.dim(),
        join(grid.nx().iter().map(|n| n.to_string()).collect()),
        grid.ny(),
        join(grid.domain().bounds().iter().map(|(a, b)| format!("{a}:{b}")).collect()),
        grid.length(),
        m,
        join(column_names(grid.dim(), m)),
    )
}

/// Dump text for a field with entries `node * m + i`.
pub fn format_field(grid: &Grid, m: usize, values: &[f64], residuals: &[f64], contact: &[bool]) -> String {
    let mut out = header(grid, m);
    out.push('\n');
    for node in 0..grid.len() {
        let mut first = true;
        let mut put = |out: &mut String, v: &dyn std::fmt::Display| {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v}").unwrap();
        };
        for v in grid.location(node) {
            put(&mut out, &v);
        }
        for i in 0..m {
            put(&mut out, &values[node * m + i]);
        }
        for i in 0..m {
            put(&mut out, &residuals.get(node * m + i).copied().unwrap_or(0.0));
        }
        for i in 0..m {
            put(&mut out, &u8::from(contact.get(node * m + i).copied().unwrap_or(false)));
        }
        out.push('\n');
    }
    out
}

pub fn write_field(path: &Path, grid: &Grid, m: usize, values: &[f64], residuals: &[f64], contact: &[bool]) -> Result<()> {
    std::fs::write(path, format_field(grid, m, values, residuals, contact)).map_err(|e| Error::io(path, e))
}

fn shape(path: &Path, message: impl Into<String>) -> Error {
    Error::Shape { path: path.to_path_buf(), message: message.into() }
}

impl FieldDump {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let head = lines.next().and_then(|l| l.strip_prefix('#')).ok_or_else(|| shape(path, "missing header line"))?;
        let mut get = std::collections::HashMap::new();
        for kv in head.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| shape(path, format!("bad header field {kv:?}")))?;
            get.insert(k, v);
        }
        let field = |k: &str| get.get(k).copied().ok_or_else(|| shape(path, format!("header lacks {k}")));
        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| shape(path, format!("bad {k} value {v:?}")));
        let int = |k: &str, v: &str| v.parse::<usize>().map_err(|_| shape(path, format!("bad {k} value {v:?}")));
        let n = int("n", field("n")?)?;
        let nx = field("nx")?.split(',').map(|v| int("nx", v)).collect::<Result<Vec<_>>>()?;
        let ny = int("ny", field("ny")?)?;
        let bounds = field("bounds")?
            .split(',')
            .map(|b| {
                let (a, c) = b.split_once(':').ok_or_else(|| shape(path, format!("bad bounds {b:?}")))?;
                Ok((num("bounds", a)?, num("bounds", c)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let length = num("L", field("L")?)?;
        let m = int("m", field("m")?)?;
        let columns: Vec<String> = field("columns")?.split(',').map(str::to_string).collect();
        if nx.len() != n || bounds.len() != n || columns != column_names(n, m) {
            return Err(shape(path, "header fields disagree on dimension or mode count"));
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| shape(path, format!("line {}: bad number {v:?}", k + 2))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != columns.len() {
                return Err(shape(path, format!("line {}: {} columns, header names {}", k + 2, row.len(), columns.len())));
            }
            rows.push(row);
        }
        let want = nx.iter().product::<usize>() * ny;
        if rows.len() != want {
            return Err(shape(path, format!("{} rows, grid has {want} nodes", rows.len())));
        }
        Ok(Self { nx, ny, bounds, length, m, columns, rows })
    }

    /// Checks that the dump was written on a grid with the same lattice as `grid`.
    pub fn check_grid(&self, grid: &Grid, path: &Path) -> Result<()> {
        if self.nx != grid.nx() || self.ny != grid.ny() || self.bounds != grid.domain().bounds() || self.length != grid.length() {
            return Err(shape(
                path,
                format!(
                    "dump grid nx={:?} ny={} bounds={:?} L={} differs from nx={:?} ny={} bounds={:?} L={}",
                    self.nx,
                    self.ny,
                    self.bounds,
                    self.length,
                    grid.nx(),
                    grid.ny(),
                    grid.domain().bounds(),
                    grid.length()
                ),
            ));
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[idx]).collect()
    }

    fn block(&self, prefix: &str) -> Vec<f64> {
        let start = self.column_index(&format!("{prefix}1")).expect("column present");
        self.rows.iter().flat_map(|r| r[start..start + self.m].iter().copied()).collect()
    }

    /// Field values, entry `node * m + i`.
    pub fn values(&self) -> Vec<f64> {
        self.block("u")
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.block("r")
    }

    pub fn contact(&self) -> Vec<bool> {
        self.block("contact").into_iter().map(|v| v != 0.0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Domain;

    fn grid() -> Grid {
        Grid::build(Domain::new(vec![(0.0, 1.0)], 1.0).unwrap(), &[5], 3).unwrap()
    }

    #[test]
    fn row_and_column_counts() {
        let g = grid();
        let m = 2;
        let values: Vec<f64> = (0..g.len() * m).map(|k| k as f64 / 7.0).collect();
        let text = format_field(&g, m, &values, &vec![0.0; values.len()], &vec![false; values.len()]);
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 15);
        assert!(rows.iter().all(|r| r.split(' ').count() == 2 + 3 * m));
        assert!(text.lines().next().unwrap().starts_with("# n=1 nx=5 ny=3 bounds=0:1 L=1 m=2"));
    }

    #[test]
    fn parse_format_is_a_fixed_point() {
        let g = grid();
        let m = 2;
        let values: Vec<f64> = (0..g.len() * m).map(|k| (k as f64 * 0.37).sin() / 3.0).collect();
        let res: Vec<f64> = values.iter().map(|v| v * 1e-13).collect();
        let contact: Vec<bool> = values.iter().map(|v| *v > 0.1).collect();
        let text = format_field(&g, m, &values, &res, &contact);
        let d = FieldDump::parse(&text, Path::new("mem")).unwrap();
        d.check_grid(&g, Path::new("mem")).unwrap();
        assert_eq!(d.values(), values);
        assert_eq!(d.residuals(), res);
        assert_eq!(d.contact(), contact);
        assert_eq!(format_field(&g, m, &d.values(), &d.residuals(), &d.contact()), text);
        assert!(d.column(d.column_index("contact1").unwrap()).iter().all(|&c| c == 0.0 || c == 1.0));
    }

    #[test]
    fn shape_errors() {
        let g = grid();
        let text = format_field(&g, 1, &vec![0.0; g.len()], &[], &[]);
        let short: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(FieldDump::parse(&short, Path::new("x")), Err(Error::Shape { .. })));
        let other = Grid::build(Domain::new(vec![(0.0, 1.0)], 1.0).unwrap(), &[9], 3).unwrap();
        let d = FieldDump::parse(&text, Path::new("x")).unwrap();
        assert!(d.check_grid(&other, Path::new("x")).is_err());
    }
}
