//! CSV readers and writers for label matrices, label vectors, labeled
//! subsets and predictions.
//!
//! Label matrix: one data point per line, comma-separated integers. Lines
//! starting with `#` are headers/comments. LF and CRLF endings are accepted.
//! Predictions: one probability per line (binary) or `C` comma-separated
//! class probabilities (multi-class), written with 17 significant digits.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labelcore::{LabelMatrix, LabelMode, LabelVector, ProbVector};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Yields `(1-based line number, trimmed content)` for data lines.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim_end_matches('\r').trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, column: usize) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        column,
        message: format!("cannot parse {:?}", field.trim()),
    })
}

pub fn parse_matrix(text: &str, mode: LabelMode) -> Result<LabelMatrix> {
    let mut entries = Vec::new();
    let mut n = 0;
    let mut m = None;
    let mut last_line = 0;
    for (line, content) in data_lines(text) {
        last_line = line;
        let start = entries.len();
        for (k, field) in content.split(',').enumerate() {
            let v: i8 = parse_field(field, line, k + 1)?;
            let ok = match mode {
                LabelMode::Binary => (-1..=1).contains(&v),
                LabelMode::Multiclass(c) => v >= 0 && v <= c as i8,
            };
            if !ok {
                return Err(Error::Parse {
                    line,
                    column: k + 1,
                    message: format!("value {v} is outside the {mode:?} alphabet"),
                });
            }
            entries.push(v);
        }
        let width = entries.len() - start;
        match m {
            None => m = Some(width),
            Some(w) if w != width => {
                return Err(Error::Parse {
                    line,
                    column: width.min(w) + 1,
                    message: format!("row has {width} values, expected {w}"),
                })
            }
            _ => {}
        }
        n += 1;
    }
    let m = m.ok_or(Error::Parse {
        line: last_line.max(1),
        column: 1,
        message: "no data rows".into(),
    })?;
    LabelMatrix::new(n, m, mode, entries)
}

pub fn load_matrix(path: &Path, mode: LabelMode) -> Result<LabelMatrix> {
    parse_matrix(&read(path)?, mode)
}

pub fn format_matrix(x: &LabelMatrix) -> String {
    let mut out = String::with_capacity(x.n() * x.m() * 3);
    for i in 0..x.n() {
        let row: Vec<String> = x.row(i).iter().map(i8::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses one integer label per line. `classes = None` means binary.
pub fn parse_labels(text: &str, classes: Option<u8>) -> Result<LabelVector> {
    let mut labels = Vec::new();
    for (line, content) in data_lines(text) {
        let v: i8 = parse_field(content, line, 1)?;
        let ok = match classes {
            None => v == 1 || v == -1,
            Some(c) => v >= 1 && v <= c as i8,
        };
        if !ok {
            return Err(Error::Parse { line, column: 1, message: format!("label {v} out of range") });
        }
        labels.push(v);
    }
    Ok(LabelVector::from_raw(labels))
}

pub fn load_labels(path: &Path, classes: Option<u8>) -> Result<LabelVector> {
    parse_labels(&read(path)?, classes)
}

pub fn format_labels(y: &LabelVector) -> String {
    y.as_slice().iter().map(|v| format!("{v}\n")).collect()
}

/// Parses `index,label` lines.
pub fn parse_subset(text: &str) -> Result<Vec<(usize, i8)>> {
    data_lines(text)
        .map(|(line, content)| {
            let mut fields = content.split(',');
            let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(Error::Parse { line, column: 1, message: "expected `index,label`".into() });
            };
            Ok((parse_field(a, line, 1)?, parse_field(b, line, 2)?))
        })
        .collect()
}

/// Parses a predictions CSV into rows of probabilities.
pub fn parse_predictions(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (line, content) in data_lines(text) {
        let row = content
            .split(',')
            .enumerate()
            .map(|(k, f)| {
                let v: f64 = parse_field(f, line, k + 1)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Parse { line, column: k + 1, message: format!("{v} is not a probability") });
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first().map(Vec::len) {
            if first != row.len() {
                return Err(Error::Parse { line, column: 1, message: "inconsistent column count".into() });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Vec<f64>>> {
    parse_predictions(&read(path)?)
}

pub fn format_probs(p: &ProbVector<f64>) -> String {
    p.as_slice().iter().map(|v| format!("{v:.16e}\n")).collect()
}

pub fn format_soft_labels(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Writes `contents` via a temporary sibling and rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp~");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
