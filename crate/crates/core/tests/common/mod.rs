//! Brute-force references shared by the integration tests.
//!
//! Nothing here calls into the sparse kernels, the CG solver or the model
//! conditionals; everything is plain dense nalgebra so that agreement with the
//! fast paths means something.

#![allow(dead_code)]

use macau_core::{DenseMatrix, SparseMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// A multivariate Gaussian given by mean and covariance.
#[derive(Debug, Clone)]
pub struct DenseGaussianSpec {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl DenseGaussianSpec {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        assert_eq!(mean.len(), covariance.nrows());
        assert!(covariance.clone().cholesky().is_some(), "covariance is not SPD");
        DenseGaussianSpec { mean, covariance }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let l = self.covariance.clone().cholesky().unwrap().l();
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + l * z
    }
}

/// Random sparse matrix as triplets, with roughly `density` of the entries set.
pub fn random_triplets<R: Rng + ?Sized>(
    nrows: usize,
    ncols: usize,
    density: f64,
    rng: &mut R,
) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::new();
    for i in 0..nrows {
        for j in 0..ncols {
            if rng.random::<f64>() < density {
                t.push((i, j, rng.random_range(-2.0..2.0)));
            }
        }
    }
    t
}

pub fn dense_from_triplets(nrows: usize, ncols: usize, t: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(nrows, ncols);
    for &(i, j, v) in t {
        m[(i, j)] += v;
    }
    m
}

pub fn sparse_and_dense<R: Rng + ?Sized>(
    nrows: usize,
    ncols: usize,
    density: f64,
    rng: &mut R,
) -> (SparseMatrix, DMatrix<f64>) {
    let t = random_triplets(nrows, ncols, density, rng);
    (
        SparseMatrix::from_triplets(nrows, ncols, &t).unwrap(),
        dense_from_triplets(nrows, ncols, &t),
    )
}

pub fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.nrows(), m.ncols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Random SPD matrix `AAᵀ + shift·I`.
pub fn random_spd<R: Rng + ?Sized>(d: usize, shift: f64, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * shift
}

/// `vec(β)` (row-major over the `D × F` matrix) posterior of the link matrix:
/// mean `(K⁻¹XᵀU)ᵀ`, covariance `Λ⁻¹ ⊗ K⁻¹` with `K = XᵀX + λI`.
pub fn link_posterior(
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    lambda_beta: f64,
) -> DenseGaussianSpec {
    let f = x.ncols();
    let d = u.ncols();
    let k = x.transpose() * x + DMatrix::identity(f, f) * lambda_beta;
    let k_inv = k.clone().cholesky().expect("K not SPD").inverse();
    let mean_fd = &k_inv * x.transpose() * u;
    let sigma = lambda.clone().cholesky().expect("Λ not SPD").inverse();
    let mean = DVector::from_fn(d * f, |r, _| mean_fd[(r % f, r / f)]);
    let cov = DMatrix::from_fn(d * f, d * f, |r, c| {
        sigma[(r / f, c / f)] * k_inv[(r % f, c % f)]
    });
    DenseGaussianSpec::new(mean, cov)
}

/// Exact draw of the `D × F` link matrix from its matrix-normal posterior,
/// `β = M + A·Z·Bᵀ` with `Λ⁻¹ = AAᵀ`, `K⁻¹ = BBᵀ`.
pub fn direct_link_sample<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    lambda_beta: f64,
    rng: &mut R,
) -> DMatrix<f64> {
    let f = x.ncols();
    let d = u.ncols();
    let k = x.transpose() * x + DMatrix::identity(f, f) * lambda_beta;
    let k_inv = k.cholesky().expect("K not SPD").inverse();
    let b = k_inv.clone().cholesky().unwrap().l();
    let a = lambda.clone().cholesky().expect("Λ not SPD").inverse().cholesky().unwrap().l();
    let mean = (&k_inv * x.transpose() * u).transpose();
    let z = DMatrix::from_fn(d, f, |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + a * z * b.transpose()
}

/// Prior times likelihood for one latent vector:
/// `N(c | m, P⁻¹) · Π N(y | qᵀc, 1/α)`.
#[derive(Debug, Clone)]
pub struct LatentToy {
    pub prior_mean: Vec<f64>,
    pub prior_precision: DMatrix<f64>,
    pub alpha: f64,
    /// `(q, y)` pairs: the other modes' elementwise product and the value.
    pub observations: Vec<(Vec<f64>, f64)>,
}

impl LatentToy {
    pub fn log_unnormalized(&self, c: &[f64]) -> f64 {
        let d = c.len();
        let diff = DVector::from_fn(d, |i, _| c[i] - self.prior_mean[i]);
        let mut lp = -0.5 * (diff.transpose() * &self.prior_precision * &diff)[(0, 0)];
        for (q, y) in &self.observations {
            let pred: f64 = q.iter().zip(c).map(|(a, b)| a * b).sum();
            lp -= 0.5 * self.alpha * (y - pred).powi(2);
        }
        lp
    }
}

/// Regular grid over a box, one axis per latent coordinate.
#[derive(Debug, Clone)]
pub struct Grid {
    pub axes: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(bounds: &[(f64, f64)], points: usize) -> Self {
        let axes = bounds
            .iter()
            .map(|&(lo, hi)| {
                (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
            })
            .collect();
        Grid { axes }
    }

    pub fn step(&self, axis: usize) -> f64 {
        self.axes[axis][1] - self.axes[axis][0]
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.axes.len()).map(|a| self.step(a)).product()
    }

    /// Grid points in row-major order (last axis fastest).
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![]];
        for axis in &self.axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

/// Normalized density values of the toy posterior at every grid point.
pub struct GridDensity {
    pub grid: Grid,
    pub points: Vec<Vec<f64>>,
    pub density: Vec<f64>,
    pub log_norm: f64,
}

impl GridDensity {
    pub fn log_density(&self, toy: &LatentToy, c: &[f64]) -> f64 {
        toy.log_unnormalized(c) - self.log_norm
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.grid.axes.len();
        let vol = self.grid.cell_volume();
        let mut m = vec![0.0; d];
        for (p, w) in self.points.iter().zip(&self.density) {
            for k in 0..d {
                m[k] += p[k] * w * vol;
            }
        }
        m
    }

    /// Marginal CDF of coordinate `axis`, linearly interpolated between grid
    /// cell edges.
    pub fn marginal_cdf(&self, axis: usize) -> impl Fn(f64) -> f64 + '_ {
        let ax = &self.grid.axes[axis];
        let vol = self.grid.cell_volume();
        let mut mass = vec![0.0; ax.len()];
        for (p, w) in self.points.iter().zip(&self.density) {
            let k = ax.iter().position(|&v| v == p[axis]).unwrap();
            mass[k] += w * vol;
        }
        let mut cum = Vec::with_capacity(ax.len() + 1);
        cum.push(0.0);
        for m in &mass {
            cum.push(cum.last().unwrap() + m);
        }
        let h = self.grid.step(axis);
        let lo = ax[0] - h / 2.0;
        move |x: f64| {
            let t = (x - lo) / h;
            if t <= 0.0 {
                return 0.0;
            }
            let k = t.floor() as usize;
            if k >= mass.len() {
                return 1.0;
            }
            cum[k] + (t - k as f64) * mass[k]
        }
    }
}

/// Evaluates prior × likelihood on the grid and normalizes by the Riemann
/// sum.
pub fn grid_posterior_density(toy: &LatentToy, grid: &Grid) -> GridDensity {
    let points = grid.points();
    let logs: Vec<f64> = points.iter().map(|p| toy.log_unnormalized(p)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logs.iter().map(|l| (l - max).exp()).sum::<f64>() * grid.cell_volume();
    let log_norm = max + total.ln();
    let density = logs.iter().map(|l| (l - log_norm).exp()).collect();
    GridDensity { grid: grid.clone(), points, density, log_norm }
}

/// Two-sided Kolmogorov–Smirnov distance between a sample and a CDF.
pub fn ks_distance(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut worst: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        worst = worst.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    worst
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Empirical mean and covariance of row-major vectorized draws.
pub fn moments(draws: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = draws.len() as f64;
    let dim = draws[0].len();
    let mut mean = DVector::zeros(dim);
    for d in draws {
        mean += d;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for d in draws {
        let c = d - &mean;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    (mean, cov)
}

/// Largest entrywise violation of `|a − b| ≤ max(rel·|b|, abs)`, reported as
/// the ratio to the allowance (≤ 1 passes).
pub fn worst_ratio(a: &DMatrix<f64>, b: &DMatrix<f64>, rel: f64, abs: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / (rel * y.abs()).max(abs))
        .fold(0.0, f64::max)
}
