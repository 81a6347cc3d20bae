//! Compressed sparse row storage and the kernels the link-matrix solve needs.
//!
//! Feature matrices have one row per entity and up to millions of columns,
//! so only CSR is kept; transposed products walk the rows and scatter.

use serde::{Deserialize, Serialize};

use crate::cg::LinearOperator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a CSR matrix from raw arrays, validating every structural invariant.
    pub fn new(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != nrows + 1 {
            return Err(Error::DimensionMismatch(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                nrows + 1
            )));
        }
        if row_offsets[0] != 0 {
            return Err(Error::InvalidArgument("row_offsets[0] must be 0".into()));
        }
        if col_indices.len() != values.len() || row_offsets[nrows] != values.len() {
            return Err(Error::DimensionMismatch(
                "row_offsets, col_indices and values disagree on nnz".into(),
            ));
        }
        for (r, w) in row_offsets.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(Error::InvalidArgument(format!(
                    "row_offsets decreases at row {r}"
                )));
            }
            let cols = &col_indices[w[0]..w[1]];
            if cols.windows(2).any(|c| c[1] <= c[0]) {
                return Err(Error::InvalidArgument(format!(
                    "column indices of row {r} not strictly increasing"
                )));
            }
            if let Some(&c) = cols.last() {
                if c >= ncols {
                    return Err(Error::IndexOutOfRange(format!(
                        "column {c} in row {r} (ncols = {ncols})"
                    )));
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite stored value".into()));
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from (row, col, value) triplets. Duplicate coordinates are rejected.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; nrows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        for (k, &(r, c, v)) in sorted.iter().enumerate() {
            if r >= nrows || c >= ncols {
                return Err(Error::IndexOutOfRange(format!(
                    "entry ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
            if k > 0 && sorted[k - 1].0 == r && sorted[k - 1].1 == c {
                return Err(Error::InvalidArgument(format!("duplicate entry ({r}, {c})")));
            }
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for r in 0..nrows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self::new(nrows, ncols, row_offsets, col_indices, values)
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            row_offsets: vec![0; nrows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[a..b], &self.values[a..b])
    }

    /// Stored entries as (row, col, value) triplets in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Dot product of row `i` with a dense vector.
    #[inline]
    pub fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        let (cols, vals) = self.row(i);
        cols.iter().zip(vals).map(|(&c, &x)| x * v[c]).sum()
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!(
            "{what}: vector of length {got}, expected {want}"
        )));
    }
    Ok(())
}

/// `A·v`.
pub fn spmv(a: &SparseMatrix, v: &[f64]) -> Result<Vec<f64>> {
    check_len("spmv", v.len(), a.ncols)?;
    let mut out = vec![0.0; a.nrows];
    spmv_into(a, v, &mut out);
    Ok(out)
}

pub(crate) fn spmv_into(a: &SparseMatrix, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = a.row_dot(i, v);
    }
}

/// `Aᵀ·v`, computed by scattering each row of `A` directly from CSR.
pub fn spmv_t(a: &SparseMatrix, v: &[f64]) -> Result<Vec<f64>> {
    check_len("spmv_t", v.len(), a.nrows)?;
    let mut out = vec![0.0; a.ncols];
    spmv_t_into(a, v, &mut out);
    Ok(out)
}

pub(crate) fn spmv_t_into(a: &SparseMatrix, v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        let (cols, vals) = a.row(i);
        for (&c, &x) in cols.iter().zip(vals) {
            out[c] += x * vi;
        }
    }
}

/// `(XᵀX + λI)·v` without forming `XᵀX`.
pub fn apply_k(x: &SparseMatrix, lambda_beta: f64, v: &[f64]) -> Result<Vec<f64>> {
    let op = RidgeGramOperator::new(x, lambda_beta)?;
    check_len("apply_k", v.len(), x.ncols)?;
    let mut out = vec![0.0; x.ncols];
    op.apply(v, &mut out);
    Ok(out)
}

/// The operator `K = XᵀX + λI` of the link-matrix normal equations.
#[derive(Debug, Clone, Copy)]
pub struct RidgeGramOperator<'a> {
    x: &'a SparseMatrix,
    lambda: f64,
}

impl<'a> RidgeGramOperator<'a> {
    pub fn new(x: &'a SparseMatrix, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda_beta must be positive, got {lambda}"
            )));
        }
        Ok(RidgeGramOperator { x, lambda })
    }
}

impl LinearOperator for RidgeGramOperator<'_> {
    fn dim(&self) -> usize {
        self.x.ncols
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        // out = Xᵀ(Xv) accumulated row by row; no intermediate length-N buffer.
        out.iter_mut().zip(v).for_each(|(o, &vi)| *o = self.lambda * vi);
        for i in 0..self.x.nrows {
            let xv = self.x.row_dot(i, v);
            if xv == 0.0 {
                continue;
            }
            let (cols, vals) = self.x.row(i);
            for (&c, &x) in cols.iter().zip(vals) {
                out[c] += x * xv;
            }
        }
    }
}
