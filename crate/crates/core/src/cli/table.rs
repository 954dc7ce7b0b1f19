//! Result tables and their CSV form: `#`-prefixed metadata lines, a header
//! row, then one line per row. Numbers are written with 6 significant digits.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(i) => write!(f, "{i}"),
            Cell::Num(x) => f.write_str(&format_sig6(*x)),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

/// `x` rounded to 6 significant digits, trailing zeros trimmed.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
    metadata: Vec<(String, String)>,
}

impl ResultTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Result<Self> {
        let columns: Vec<String> = columns.into_iter().map(Into::into).collect();
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].contains(c) {
                return Err(Error::invalid(format!("duplicate column `{c}`")));
            }
        }
        Ok(Self {
            columns,
            rows: Vec::new(),
            metadata: Vec::new(),
        })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn push_row(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::invalid(format!(
                "row has {} cells for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn add_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.push((key.into(), value.into()));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::to_string).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Writes `table` as CSV to `path`.
pub fn emit_csv(table: &ResultTable, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, table.to_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig6(0.123456789), "0.123457");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(0.5), "0.5");
        assert_eq!(format_sig6(-2.25), "-2.25");
        assert_eq!(format_sig6(1234567.0), "1.23457e6");
        assert_eq!(format_sig6(123456.4), "123456");
        assert_eq!(format_sig6(0.000012345678), "1.23457e-5");
        assert_eq!(format_sig6(0.0001), "0.0001");
        assert_eq!(format_sig6(999999.7), "1e6");
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(f64::NAN), "nan");
    }

    #[test]
    fn empty_table_has_metadata_and_header() {
        let mut t = ResultTable::new(["theta", "seed", "test_acc"]).unwrap();
        t.add_metadata("version", "0.1.0");
        assert_eq!(t.to_csv(), "# version: 0.1.0\ntheta,seed,test_acc\n");
    }

    #[test]
    fn rows_and_validation() {
        assert!(ResultTable::new(["a", "a"]).is_err());
        let mut t = ResultTable::new(["theta", "seed", "test_acc"]).unwrap();
        t.push_row(vec![Cell::Num(0.1), Cell::Int(3), Cell::Num(0.8125)]).unwrap();
        t.push_row(vec![Cell::Num(0.1), Cell::Text("mean".into()), Cell::Num(2.0 / 3.0)]).unwrap();
        assert!(t.push_row(vec![Cell::Int(1)]).is_err());
        assert_eq!(t.to_csv(), "theta,seed,test_acc\n0.1,3,0.8125\n0.1,mean,0.666667\n");
    }

    #[test]
    fn emit_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = ResultTable::new(["x"]).unwrap();
        t.push_row(vec![Cell::Num(std::f64::consts::PI)]).unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        emit_csv(&t, &a).unwrap();
        emit_csv(&t, &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        assert!(matches!(emit_csv(&t, dir.path().join("missing/x.csv")), Err(Error::Io(_))));
    }
}
