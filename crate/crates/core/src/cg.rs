//! Conjugate gradient for symmetric positive definite operators, one system
//! per right-hand-side column.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// A symmetric linear map applied without materializing its matrix.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// Writes `A·v` into `out`. Both slices have length `dim()`.
    fn apply(&self, v: &[f64], out: &mut [f64]);
}

/// Stopping rule for [`cg_solve_multi`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgSettings {
    pub rel_tolerance: f64,
    pub abs_tolerance: f64,
    /// `None` means `min(dim, 1000)`.
    pub max_iterations: Option<usize>,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings {
            rel_tolerance: 1e-6,
            abs_tolerance: 1e-12,
            max_iterations: None,
        }
    }
}

impl CgSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0 && self.abs_tolerance > 0.0) {
            return Err(Error::InvalidArgument("CG tolerances must be positive".into()));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::InvalidArgument("CG max_iterations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_max_iterations(&self, dim: usize) -> usize {
        self.max_iterations.unwrap_or_else(|| dim.clamp(1, 1000))
    }
}

/// Outcome of one column solve.
#[derive(Debug, Clone)]
pub struct CgColumn {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain unpreconditioned CG from a zero initial guess.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    op: &A,
    b: &[f64],
    settings: &CgSettings,
) -> Result<CgColumn> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "rhs length {} for operator of dimension {n}",
            b.len()
        )));
    }
    let max_iter = settings.effective_max_iterations(n);
    let b_norm = dot(b, b).sqrt();
    if !b_norm.is_finite() {
        return Err(Error::Numerical("non-finite right-hand side".into()));
    }
    let target = (settings.rel_tolerance * b_norm).max(settings.abs_tolerance);

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = b_norm * b_norm;
    let mut iterations = 0;

    while rr.sqrt() > target && iterations < max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || !rr.is_finite() {
            return Err(Error::Numerical(format!("NaN in CG iterate {iterations}")));
        }
        if pap <= 0.0 {
            return Err(Error::Numerical(format!(
                "operator not positive definite (pᵀAp = {pap:e})"
            )));
        }
        let step = rr / pap;
        for ((xi, ri), (&pi, &api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += step * pi;
            *ri -= step * api;
        }
        let rr_next = dot(&r, &r);
        let ratio = rr_next / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + ratio * *pi;
        }
        rr = rr_next;
        iterations += 1;
    }
    if !rr.is_finite() {
        return Err(Error::Numerical("NaN in CG residual".into()));
    }
    let residual_norm = rr.sqrt();
    Ok(CgColumn {
        solution: x,
        iterations,
        residual_norm,
        converged: residual_norm <= target,
    })
}

/// Solves `op·X = rhs` column by column. Columns run in parallel on the
/// current rayon pool; each column is computed identically regardless of
/// scheduling.
pub fn cg_solve_multi<A: LinearOperator + Sync + ?Sized>(
    op: &A,
    rhs: &DenseMatrix,
    settings: &CgSettings,
) -> Result<DenseMatrix> {
    settings.validate()?;
    if rhs.nrows() != op.dim() {
        return Err(Error::DimensionMismatch(format!(
            "rhs has {} rows, operator dimension is {}",
            rhs.nrows(),
            op.dim()
        )));
    }
    let columns: Vec<CgColumn> = (0..rhs.ncols())
        .into_par_iter()
        .map(|j| cg_solve(op, &rhs.column(j), settings))
        .collect::<Result<_>>()?;

    if columns.iter().any(|c| !c.converged) {
        return Err(Error::NotConverged {
            iterations: settings.effective_max_iterations(op.dim()),
            residuals: columns.iter().map(|c| c.residual_norm).collect(),
        });
    }
    let mut out = DenseMatrix::zeros(rhs.nrows(), rhs.ncols());
    for (j, col) in columns.iter().enumerate() {
        out.set_column(j, &col.solution);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Diag(Vec<f64>);

    impl LinearOperator for Diag {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn apply(&self, v: &[f64], out: &mut [f64]) {
            for ((o, d), x) in out.iter_mut().zip(&self.0).zip(v) {
                *o = d * x;
            }
        }
    }

    #[test]
    fn identity_returns_rhs() {
        let rhs = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5], vec![0.0, 4.0]]).unwrap();
        let x = cg_solve_multi(&Diag(vec![1.0; 3]), &rhs, &CgSettings::default()).unwrap();
        for (a, b) in x.as_slice().iter().zip(rhs.as_slice()) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn diagonal_division() {
        let rhs = DenseMatrix::from_rows(&[vec![2.0], vec![8.0]]).unwrap();
        let x = cg_solve_multi(&Diag(vec![2.0, 4.0]), &rhs, &CgSettings::default()).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((x[(1, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rhs_is_zero_solution() {
        let rhs = DenseMatrix::zeros(4, 2);
        let x = cg_solve_multi(&Diag(vec![3.0; 4]), &rhs, &CgSettings::default()).unwrap();
        assert_eq!(x, rhs);
    }

    #[test]
    fn non_convergence_reports_residuals() {
        let d = Diag((1..=20).map(|i| i as f64 * i as f64).collect());
        let rhs = DenseMatrix::from_fn(20, 2, |i, j| (i + j) as f64 + 1.0);
        let settings = CgSettings {
            max_iterations: Some(2),
            ..CgSettings::default()
        };
        match cg_solve_multi(&d, &rhs, &settings) {
            Err(Error::NotConverged { iterations, residuals }) => {
                assert_eq!(iterations, 2);
                assert_eq!(residuals.len(), 2);
                assert!(residuals.iter().all(|r| *r > 0.0));
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn nan_rhs_is_numerical_failure() {
        let mut rhs = DenseMatrix::zeros(2, 1);
        rhs.as_mut_slice()[0] = f64::NAN;
        assert!(matches!(
            cg_solve_multi(&Diag(vec![1.0, 1.0]), &rhs, &CgSettings::default()),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn indefinite_operator_detected() {
        let rhs = DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert!(matches!(
            cg_solve_multi(&Diag(vec![-1.0, 2.0]), &rhs, &CgSettings::default()),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn settings_validation() {
        let bad = CgSettings { rel_tolerance: 0.0, ..CgSettings::default() };
        assert!(bad.validate().is_err());
        let bad = CgSettings { max_iterations: Some(0), ..CgSettings::default() };
        assert!(bad.validate().is_err());
        assert_eq!(CgSettings::default().effective_max_iterations(5000), 1000);
        assert_eq!(CgSettings::default().effective_max_iterations(7), 7);
    }
}
