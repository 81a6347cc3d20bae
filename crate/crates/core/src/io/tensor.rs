//! Tab-separated tensor cells.
//!
//! ```text
//! mode0<TAB>mode1<TAB>mode2<TAB>value
//! 0<TAB>0<TAB>0<TAB>1.5
//! ```
//! Indices are 0-based. The `value` column is optional for cell lists that
//! only name positions (prediction requests).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ObservationSet;

/// Raw parsed cells before mode dimensions are fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCells {
    pub n_modes: usize,
    pub indices: Vec<Vec<usize>>,
    /// `None` when the file has no value column.
    pub values: Option<Vec<f64>>,
}

impl TensorCells {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `1 + max index` per mode.
    pub fn observed_dims(&self) -> Vec<usize> {
        let mut dims = vec![0; self.n_modes];
        for idx in &self.indices {
            for (d, &i) in dims.iter_mut().zip(idx) {
                *d = (*d).max(i + 1);
            }
        }
        dims
    }

    pub fn into_observations(self, mode_dims: Vec<usize>) -> Result<ObservationSet> {
        let values = self
            .values
            .ok_or_else(|| Error::Format("cell list has no value column".into()))?;
        ObservationSet::new(mode_dims, self.indices.into_iter().zip(values).collect())
    }
}

/// Parses a tensor TSV. `require_values` rejects files without a value column.
pub fn parse_tensor<R: Read>(reader: R, require_values: bool) -> Result<TensorCells> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((n, line)) => {
                let line = line.map_err(|e| Error::Parse { line: n + 1, msg: e.to_string() })?;
                if !line.trim().is_empty() {
                    break (n + 1, line);
                }
            }
            None => return Err(Error::Format("empty tensor file (missing header)".into())),
        }
    };
    let cols: Vec<&str> = header.1.trim_end_matches('\r').split('\t').collect();
    let has_value = cols.last() == Some(&"value");
    let n_modes = cols.len() - usize::from(has_value);
    let header_ok = n_modes >= 1 && cols[..n_modes].iter().enumerate().all(|(m, c)| *c == format!("mode{m}"));
    if !header_ok {
        return Err(Error::Parse {
            line: header.0,
            msg: format!("expected header mode0<TAB>…<TAB>value, got '{}'", header.1),
        });
    }
    if require_values && !has_value {
        return Err(Error::Parse { line: header.0, msg: "header has no value column".into() });
    }

    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
    for (n, line) in lines {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} tab-separated fields, got {}", cols.len(), fields.len()),
            });
        }
        let idx = fields[..n_modes]
            .iter()
            .map(|f| {
                f.trim().parse::<usize>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("index '{f}' is not a non-negative integer"),
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        if has_value {
            let raw = fields[n_modes].trim();
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("value '{raw}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { line: lineno, msg: format!("non-finite value '{raw}'") });
            }
            values.push(v);
        }
        if let Some(first) = seen.insert(idx.clone(), lineno) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("duplicate cell {idx:?} (first seen on line {first})"),
            });
        }
        indices.push(idx);
    }
    Ok(TensorCells {
        n_modes,
        indices,
        values: has_value.then_some(values),
    })
}

pub fn read_tensor_cells(path: impl AsRef<Path>, require_values: bool) -> Result<TensorCells> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tensor(file, require_values)
}

/// Loads a tensor TSV with mode dimensions `1 + max index` per mode.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<ObservationSet> {
    let cells = read_tensor_cells(path, true)?;
    if cells.is_empty() {
        return Err(Error::Format("no observations".into()));
    }
    let dims = cells.observed_dims();
    cells.into_observations(dims)
}

pub fn write_header<W: Write>(w: &mut W, n_modes: usize, with_value: bool) -> std::io::Result<()> {
    let mut cols: Vec<String> = (0..n_modes).map(|m| format!("mode{m}")).collect();
    if with_value {
        cols.push("value".into());
    }
    writeln!(w, "{}", cols.join("\t"))
}

fn write_cells<W: Write>(
    w: &mut W,
    data: &ObservationSet,
    values: &[f64],
    fmt: impl Fn(f64) -> String,
) -> std::io::Result<()> {
    write_header(w, data.n_modes(), true)?;
    for ((idx, _), &v) in data.iter().zip(values) {
        for i in idx {
            write!(w, "{i}\t")?;
        }
        writeln!(w, "{}", fmt(v))?;
    }
    Ok(())
}

/// Writes cells with their values in shortest round-trip form.
pub fn write_tensor(path: impl AsRef<Path>, data: &ObservationSet) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_cells(&mut buf, data, data.values(), |v| format!("{v}")).expect("write to Vec");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes `cells` with replacement values (predictions) at 6 significant digits.
pub fn write_predictions(path: impl AsRef<Path>, cells: &ObservationSet, predictions: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_cells(&mut buf, cells, predictions, format_sig6).expect("write to Vec");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// `%.6g`-style formatting.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{}", if v == 0.0 { 0.0 } else { v });
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}
