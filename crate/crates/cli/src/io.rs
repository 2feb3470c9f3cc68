//! Dense CSV and coordinate-triplet matrix files.

use std::fs;
use std::path::Path;

use sparse_cca::DenseMatrix;

use crate::error::{CliError, CliResult};

/// Format a value with 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parse comma-separated rows into a matrix (one matrix row per line).
pub fn parse_dense(text: &str, has_header: bool, origin: &str) -> CliResult<DenseMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => CliError::format(
                    origin,
                    line,
                    None,
                    format!("row has {len} fields, expected {expected_len}"),
                ),
                _ => CliError::format(origin, line, None, e.to_string()),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.parse::<f64>().map_err(|_| {
                    CliError::format(origin, line, Some(c + 1), format!("not a number: {field:?}"))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CliError::format(origin, 1, None, "no numeric rows"));
    }
    let cols = rows[0].len();
    Ok(DenseMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn load_dense(path: &Path, has_header: bool) -> CliResult<DenseMatrix> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_dense(&text, has_header, &path.display().to_string())
}

/// Comma-separated text with an optional header line.
pub fn format_dense(m: &DenseMatrix, header: Option<&[String]>) -> String {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    if let Some(h) = header {
        writer.write_record(h).expect("in-memory write");
    }
    for row in m.row_iter() {
        writer
            .write_record(row.iter().map(|v| format_value(*v)))
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("ASCII output")
}

pub fn save_dense(path: &Path, m: &DenseMatrix) -> CliResult<()> {
    fs::write(path, format_dense(m, None)).map_err(|e| CliError::io(path, e))
}

/// Parse the coordinate format: a `rows cols nnz` line followed by `i j value`
/// lines with 1-based indices; lines starting with `%` are comments.
/// Repeated coordinates are summed.
pub fn parse_sparse_triplets(text: &str, origin: &str) -> CliResult<DenseMatrix> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i as u64 + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (hline, header) = lines
        .next()
        .ok_or_else(|| CliError::format(origin, 1, None, "missing size line"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .enumerate()
        .map(|(c, t)| {
            t.parse()
                .map_err(|_| CliError::format(origin, hline, Some(c + 1), format!("bad size field {t:?}")))
        })
        .collect::<CliResult<_>>()?;
    let [rows, cols, nnz] = dims[..] else {
        return Err(CliError::format(origin, hline, None, "size line must be `rows cols nnz`"));
    };
    let mut m = DenseMatrix::zeros(rows, cols);
    let mut count = 0usize;
    for (line, content) in lines {
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(CliError::format(origin, line, None, "expected `i j value`"));
        }
        let index = |c: usize, bound: usize| -> CliResult<usize> {
            let v: usize = fields[c]
                .parse()
                .map_err(|_| CliError::format(origin, line, Some(c + 1), format!("bad index {:?}", fields[c])))?;
            if v == 0 || v > bound {
                return Err(CliError::format(
                    origin,
                    line,
                    Some(c + 1),
                    format!("index {v} outside 1..={bound}"),
                ));
            }
            Ok(v - 1)
        };
        let (i, j) = (index(0, rows)?, index(1, cols)?);
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| CliError::format(origin, line, Some(3), format!("not a number: {:?}", fields[2])))?;
        m[(i, j)] += value;
        count += 1;
    }
    if count != nnz {
        return Err(CliError::format(
            origin,
            hline,
            None,
            format!("size line declares {nnz} entries, found {count}"),
        ));
    }
    Ok(m)
}

pub fn load_sparse_triplets(path: &Path) -> CliResult<DenseMatrix> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_sparse_triplets(&text, &path.display().to_string())
}
