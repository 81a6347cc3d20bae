//! Gaussian, Gamma and Wishart draws on small dense matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

pub(crate) fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

pub(crate) fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draw from `N(P⁻¹b, P⁻¹)` given the Cholesky factor of the precision `P`.
pub(crate) fn sample_gaussian_canonical<R: Rng + ?Sized>(
    chol: &Cholesky<f64, Dyn>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let mean = chol.solve(linear);
    let z = standard_normal_vec(rng, linear.len());
    // Lᵀ w = z gives Cov(w) = (LLᵀ)⁻¹.
    let w = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    mean + w
}

/// Gamma draw parameterised by shape and rate.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::InvalidArgument(format!("Gamma({shape}, {rate}): {e}")))?;
    let x = g.sample(rng);
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Numerical(format!("Gamma draw {x} out of range")));
    }
    Ok(x)
}

/// Bartlett-decomposition draw from `Wishart(scale, dof)` (mean `dof·scale`).
pub(crate) fn sample_wishart<R: Rng + ?Sized>(
    scale: &DMatrix<f64>,
    dof: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    if dof <= (d as f64) - 1.0 {
        return Err(Error::InvalidArgument(format!(
            "Wishart degrees of freedom {dof} must exceed dimension - 1 = {}",
            d as f64 - 1.0
        )));
    }
    let l = cholesky(scale.clone(), "Wishart scale matrix")?.l();
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(dof - i as f64)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let w = &la * la.transpose();
    Ok(symmetrize(w))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(cholesky(m.clone(), what)?.inverse()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wishart_mean_is_dof_times_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scale = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let n = 20_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            acc += sample_wishart(&scale, 5.0, &mut rng).unwrap();
        }
        acc /= n as f64;
        let expected = &scale * 5.0;
        for (a, e) in acc.iter().zip(expected.iter()) {
            assert!((a - e).abs() < 0.06, "{acc} vs {expected}");
        }
    }

    #[test]
    fn wishart_rejects_small_dof() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_wishart(&DMatrix::identity(3, 3), 1.5, &mut rng).is_err());
    }

    #[test]
    fn canonical_gaussian_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let chol = cholesky(p.clone(), "p").unwrap();
        let cov = p.clone().try_inverse().unwrap();
        let mean = &cov * &b;
        let n = 50_000;
        let draws: Vec<DVector<f64>> =
            (0..n).map(|_| sample_gaussian_canonical(&chol, &b, &mut rng)).collect();
        let emp_mean = draws.iter().fold(DVector::zeros(2), |a, x| a + x) / n as f64;
        let mut emp_cov = DMatrix::<f64>::zeros(2, 2);
        for x in &draws {
            let c = x - &emp_mean;
            emp_cov += &c * c.transpose();
        }
        emp_cov /= n as f64;
        assert!((emp_mean - mean).amax() < 0.02);
        assert!((emp_cov - cov).amax() < 0.02);
    }
}
