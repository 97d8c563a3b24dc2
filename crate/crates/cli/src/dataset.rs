use std::path::Path;

use thiserror::Error;

use reslab::{Dataset, Matrix};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("line {line}: expected {expected} fields, found {got}")]
    DimensionError { line: u64, expected: usize, got: usize },
    #[error("header must be `x1,...,xd,y`, found `{0}`")]
    BadHeader(String),
    #[error("dataset has no rows")]
    EmptyDataset,
}

/// Reads a CSV file with header `x1,...,xd,y`.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| DataError::ParseError {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let width = header.len();
    let expected: Vec<String> = (1..width).map(|k| format!("x{k}")).chain(["y".to_string()]).collect();
    if width < 2 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(DataError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
    }
    let d = width - 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::ParseError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != width {
            return Err(DataError::DimensionError {
                line,
                expected: width,
                got: record.len(),
            });
        }
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| DataError::ParseError {
                line,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(DataError::ParseError {
                    line,
                    message: format!("`{field}` is not finite"),
                });
            }
            if k < d {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let inputs = Matrix::from_vec(ys.len(), d, xs).expect("finite values checked");
    Ok(Dataset::new(inputs, ys).expect("shape and values checked"))
}

/// CSV text for `data`, in the format [`parse_dataset`] reads.
pub fn to_csv(data: &Dataset) -> String {
    let d = data.d_x();
    let mut out = (1..=d).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",");
    out.push_str(",y\n");
    for i in 0..data.len() {
        for v in data.x(i) {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", data.y(i)));
    }
    out
}
