//! Whitespace-separated XYZ point files: one point per line, `x y z [f1 … fd]`,
//! `#` lines are comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Parses XYZ text into a cloud (label 0). Coordinates are not normalized.
pub fn parse_xyz<T: Scalar>(text: &str) -> Result<PointCloud<T>> {
    let mut coords = Vec::new();
    let mut feats: Vec<T> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map(T::of)
                    .map_err(|_| Error::parse(lineno, None, format!("non-numeric token `{tok}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        if values.len() < 3 {
            return Err(Error::parse(lineno, None, format!("expected at least 3 columns, found {}", values.len())));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::parse(lineno, None, format!("expected {w} columns, found {}", values.len())));
            }
            Some(_) => {}
        }
        coords.push([values[0], values[1], values[2]]);
        feats.extend_from_slice(&values[3..]);
    }
    let Some(width) = width else {
        return Err(Error::parse(0, None, "point file contains no points"));
    };
    let d = width - 3;
    let feats = (d > 0).then(|| Matrix::from_vec(coords.len(), d, feats)).transpose()?;
    PointCloud::new(coords, feats, 0)
}

/// Reads an XYZ file.
pub fn load_xyz<T: Scalar>(path: impl AsRef<Path>) -> Result<PointCloud<T>> {
    parse_xyz(&fs::read_to_string(path)?)
}

/// Renders a cloud as XYZ text, with `comments` as leading `#` lines and
/// optional extra columns appended after the features.
pub fn format_xyz<T: Scalar>(cloud: &PointCloud<T>, comments: &[String], extra: Option<&[Vec<f64>]>) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for (i, p) in cloud.coords.iter().enumerate() {
        let mut fields: Vec<String> = p.iter().map(|x| x.to_f64_lossy().to_string()).collect();
        if let Some(f) = &cloud.feats {
            fields.extend(f.row(i).iter().map(|x| x.to_f64_lossy().to_string()));
        }
        if let Some(extra) = extra {
            fields.extend(extra[i].iter().map(f64::to_string));
        }
        let _ = writeln!(out, "{}", fields.join(" "));
    }
    out
}

pub fn save_xyz<T: Scalar>(cloud: &PointCloud<T>, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
    fs::write(path, format_xyz(cloud, comments, None))?;
    Ok(())
}
