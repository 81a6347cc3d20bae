//! MatrixMarket coordinate files (`real`, `integer` or `pattern`; `general`).

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub fn parse_matrix_market<R: Read>(reader: R) -> Result<SparseMatrix> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let parse_err = |line: usize, msg: String| Error::Parse { line, msg };

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("empty MatrixMarket file".into()))?;
    let header = header.map_err(|e| parse_err(1, e.to_string()))?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(1, format!("bad MatrixMarket header '{header}'")));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(1, format!("unsupported format '{}'", tokens[2])));
    }
    let pattern = match tokens[3].as_str() {
        "real" | "integer" => false,
        "pattern" => true,
        other => return Err(parse_err(1, format!("unsupported field '{other}'"))),
    };
    if tokens[4] != "general" {
        return Err(parse_err(1, format!("unsupported symmetry '{}'", tokens[4])));
    }

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for (n, line) in lines {
        let lineno = n + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let Some((nrows, ncols, _)) = size else {
            if fields.len() != 3 {
                return Err(parse_err(lineno, "size line must be 'rows cols nnz'".into()));
            }
            let p = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| parse_err(lineno, format!("bad size field '{s}'")))
            };
            size = Some((p(fields[0])?, p(fields[1])?, p(fields[2])?));
            continue;
        };
        let want = if pattern { 2 } else { 3 };
        if fields.len() != want {
            return Err(parse_err(lineno, format!("expected {want} fields, got {}", fields.len())));
        }
        let idx = |s: &str, bound: usize, what: &str| -> Result<usize> {
            let i: usize = s
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad {what} index '{s}'")))?;
            if i == 0 || i > bound {
                return Err(parse_err(
                    lineno,
                    format!("{what} index {i} outside 1..={bound}"),
                ));
            }
            Ok(i - 1)
        };
        let r = idx(fields[0], nrows, "row")?;
        let c = idx(fields[1], ncols, "column")?;
        let v = if pattern {
            1.0
        } else {
            let v: f64 = fields[2]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad value '{}'", fields[2])))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite value '{}'", fields[2])));
            }
            v
        };
        triplets.push((r, c, v, lineno));
    }
    let (nrows, ncols, nnz) = size.ok_or_else(|| Error::Format("missing size line".into()))?;
    if triplets.len() != nnz {
        return Err(Error::Format(format!(
            "size line declares {nnz} entries, found {}",
            triplets.len()
        )));
    }
    triplets.sort_by_key(|&(r, c, _, _)| (r, c));
    for w in triplets.windows(2) {
        if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
            return Err(parse_err(
                w[0].3.max(w[1].3),
                format!("duplicate entry ({}, {})", w[1].0 + 1, w[1].1 + 1),
            ));
        }
    }
    let plain: Vec<(usize, usize, f64)> = triplets.iter().map(|&(r, c, v, _)| (r, c, v)).collect();
    SparseMatrix::from_triplets(nrows, ncols, &plain)
}

/// Loads a feature matrix (one row per entity) from a MatrixMarket file.
pub fn load_side_info(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_market(file)
}

pub fn write_matrix_market(path: impl AsRef<Path>, m: &SparseMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    writeln!(buf, "%%MatrixMarket matrix coordinate real general").expect("write to Vec");
    writeln!(buf, "{} {} {}", m.nrows(), m.ncols(), m.nnz()).expect("write to Vec");
    for (r, c, v) in m.triplets() {
        writeln!(buf, "{} {} {v}", r + 1, c + 1).expect("write to Vec");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
