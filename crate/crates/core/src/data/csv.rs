use std::path::Path;

use super::{LabeledSet, Pattern};
use crate::error::{Error, Result};

/// Reads a numeric CSV with a header row. Features are min-max normalized
/// per column (a constant column becomes 0). Label values are mapped to
/// dense ids in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LabeledSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, path, label_column)
}

pub(crate) fn parse_csv(reader: impl std::io::Read, path: &Path, label_column: &str) -> Result<LabeledSet> {
    let parse_err = |row: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let mut rdr = ::csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, 0, e.to_string()))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::config(format!("{}: no column named {label_column:?}", path.display())))?;
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(Error::config(format!("{}: no feature columns", path.display())));
    }

    let mut label_names: Vec<String> = Vec::new();
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        // Row numbers are 1-based and count the header line.
        let row = r + 2;
        let record = record.map_err(|e| parse_err(row, 0, e.to_string()))?;
        let mut features = Vec::with_capacity(dim);
        let mut label = None;
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if c == label_idx {
                let id = match label_names.iter().position(|n| n == cell) {
                    Some(id) => id,
                    None => {
                        label_names.push(cell.to_string());
                        label_names.len() - 1
                    }
                };
                label = Some(id);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| parse_err(row, c + 1, format!("non-numeric value {cell:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(row, c + 1, format!("non-finite value {cell:?}")));
                }
                features.push(v);
            }
        }
        rows.push((features, label.expect("csv reader enforces equal record lengths")));
    }

    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for (f, _) in &rows {
        for k in 0..dim {
            lo[k] = lo[k].min(f[k]);
            hi[k] = hi[k].max(f[k]);
        }
    }
    let patterns = rows
        .into_iter()
        .map(|(f, label)| Pattern {
            input: f
                .iter()
                .enumerate()
                .map(|(k, &v)| if hi[k] > lo[k] { (v - lo[k]) / (hi[k] - lo[k]) } else { 0.0 })
                .collect(),
            label,
        })
        .collect();
    Ok(LabeledSet {
        dim,
        classes: label_names.len(),
        patterns,
    })
}
