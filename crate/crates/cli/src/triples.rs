//! Sparse triple files: `row,col,value` with 1-based indices.
//!
//! The on-disk format is UTF-8, comma-separated, LF line endings, with the
//! exact header `row,col,value`. Values round-trip exactly: they are written
//! with Rust's shortest round-trip float formatting. Indices are converted
//! to 0-based at this boundary.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::CliError;

pub const TRIPLE_HEADER: &str = "row,col,value";
pub const CELLS_HEADER: &str = "row,col";

fn parse_index(field: &str, line_no: usize, what: &str) -> Result<usize, CliError> {
    let value: usize = field.trim().parse().map_err(|_| {
        CliError::Parse(format!(
            "line {line_no}: {what} index '{field}' is not a positive integer"
        ))
    })?;
    if value == 0 {
        return Err(CliError::Parse(format!(
            "line {line_no}: {what} index must be 1-based, got 0"
        )));
    }
    Ok(value - 1)
}

fn parse_value(field: &str, line_no: usize) -> Result<f64, CliError> {
    let value: f64 = field
        .trim()
        .parse()
        .map_err(|_| CliError::Parse(format!("line {line_no}: value '{field}' is not a number")))?;
    if !value.is_finite() {
        return Err(CliError::Parse(format!(
            "line {line_no}: value must be finite"
        )));
    }
    Ok(value)
}

/// Reads a triple file into 0-based `(row, col, value)` triples.
///
/// Duplicate `(row, col)` pairs are a parse error; de-duplicate upstream.
pub fn read_triple_file(path: &Path) -> Result<Vec<(usize, usize, f64)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == TRIPLE_HEADER => {}
        Some((_, header)) => {
            return Err(CliError::Parse(format!(
                "expected header '{TRIPLE_HEADER}', got '{header}'"
            )))
        }
        None => return Err(CliError::Parse("empty file".into())),
    }
    let mut triples = Vec::new();
    for (idx, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let mut fields = line.split(',');
        let (r, c, v) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(r), Some(c), Some(v), None) => (r, c, v),
            _ => {
                return Err(CliError::Parse(format!(
                    "line {line_no}: expected three comma-separated fields"
                )))
            }
        };
        triples.push((
            parse_index(r, line_no, "row")?,
            parse_index(c, line_no, "col")?,
            parse_value(v, line_no)?,
        ));
    }
    let mut seen: Vec<(usize, usize)> = triples.iter().map(|&(i, j, _)| (i, j)).collect();
    seen.sort_unstable();
    if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Parse(format!(
            "duplicate entry for cell ({}, {})",
            w[0].0 + 1,
            w[0].1 + 1
        )));
    }
    Ok(triples)
}

/// Writes 0-based triples with the canonical header and 1-based indices.
pub fn write_triples<W: Write>(
    out: &mut W,
    triples: impl IntoIterator<Item = (usize, usize, f64)>,
) -> std::io::Result<()> {
    writeln!(out, "{TRIPLE_HEADER}")?;
    for (i, j, y) in triples {
        writeln!(out, "{},{},{}", i + 1, j + 1, y)?;
    }
    Ok(())
}

/// Reads a prediction cell list (`row,col` header, 1-based indices) into
/// 0-based pairs.
pub fn read_cells_file(path: &Path) -> Result<Vec<(usize, usize)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == CELLS_HEADER => {}
        Some((_, header)) => {
            return Err(CliError::Parse(format!(
                "expected header '{CELLS_HEADER}', got '{header}'"
            )))
        }
        None => return Err(CliError::Parse("empty cell list".into())),
    }
    let mut cells = Vec::new();
    for (idx, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let mut fields = line.split(',');
        let (r, c) = match (fields.next(), fields.next(), fields.next()) {
            (Some(r), Some(c), None) => (r, c),
            _ => {
                return Err(CliError::Parse(format!(
                    "line {line_no}: expected two comma-separated fields"
                )))
            }
        };
        cells.push((
            parse_index(r, line_no, "row")?,
            parse_index(c, line_no, "col")?,
        ));
    }
    Ok(cells)
}
