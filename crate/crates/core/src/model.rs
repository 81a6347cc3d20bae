//! CP tensor model with side-information-shifted Gaussian priors.
//!
//! A cell of the tensor is modelled as `Σ_d Π_m latent_m[index_m, d]` plus
//! Gaussian noise of precision `alpha`. Each mode has a Gaussian prior on its
//! latent vectors with mean `mu + beta·x_i` and **precision** `lambda`; modes
//! without features drop the `beta·x_i` term.
//!
//! Latent matrices are stored entity-major: row `i` of `ModeState::latent`
//! is the D-vector of entity `i`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::stats;

/// Observed cells of a sparse tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    mode_dims: Vec<usize>,
    /// Flat `len × n_modes` index array.
    indices: Vec<usize>,
    values: Vec<f64>,
    /// Per mode, CSR-style lists of the cells that touch each entity.
    by_entity: Vec<(Vec<usize>, Vec<usize>)>,
}

impl ObservationSet {
    pub fn new(mode_dims: Vec<usize>, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let n_modes = mode_dims.len();
        if n_modes < 2 {
            return Err(Error::InvalidArgument(format!(
                "a tensor needs at least 2 modes, got {n_modes}"
            )));
        }
        let mut indices = Vec::with_capacity(entries.len() * n_modes);
        let mut values = Vec::with_capacity(entries.len());
        let mut seen = HashSet::with_capacity(entries.len());
        for (k, (idx, value)) in entries.into_iter().enumerate() {
            if idx.len() != n_modes {
                return Err(Error::DimensionMismatch(format!(
                    "entry {k} has {} indices for a {n_modes}-mode tensor",
                    idx.len()
                )));
            }
            for (m, (&i, &dim)) in idx.iter().zip(&mode_dims).enumerate() {
                if i >= dim {
                    return Err(Error::IndexOutOfRange(format!(
                        "entry {k}: index {i} in mode {m} of size {dim}"
                    )));
                }
            }
            if !value.is_finite() {
                return Err(Error::InvalidArgument(format!("entry {k}: non-finite value")));
            }
            if !seen.insert(idx.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate cell {idx:?}")));
            }
            indices.extend_from_slice(&idx);
            values.push(value);
        }
        let by_entity = (0..n_modes)
            .map(|m| {
                let mut offsets = vec![0usize; mode_dims[m] + 1];
                for k in 0..values.len() {
                    offsets[indices[k * n_modes + m] + 1] += 1;
                }
                for i in 0..mode_dims[m] {
                    offsets[i + 1] += offsets[i];
                }
                let mut fill = offsets.clone();
                let mut cells = vec![0usize; values.len()];
                for k in 0..values.len() {
                    let e = indices[k * n_modes + m];
                    cells[fill[e]] = k;
                    fill[e] += 1;
                }
                (offsets, cells)
            })
            .collect();
        Ok(ObservationSet {
            mode_dims,
            indices,
            values,
            by_entity,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.mode_dims.len()
    }

    pub fn mode_dims(&self) -> &[usize] {
        &self.mode_dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell(&self, k: usize) -> &[usize] {
        let n = self.n_modes();
        &self.indices[k * n..(k + 1) * n]
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        (0..self.len()).map(move |k| (self.cell(k), self.values[k]))
    }

    /// Ids of the cells whose index in `mode` is `entity`.
    pub fn cells_of(&self, mode: usize, entity: usize) -> &[usize] {
        let (offsets, cells) = &self.by_entity[mode];
        &cells[offsets[entity]..offsets[entity + 1]]
    }

    pub fn contains(&self, idx: &[usize]) -> bool {
        idx.len() == self.n_modes()
            && idx[0] < self.mode_dims[0]
            && self.cells_of(0, idx[0]).iter().any(|&k| self.cell(k) == idx)
    }

    pub fn entries(&self) -> Vec<(Vec<usize>, f64)> {
        self.iter().map(|(c, v)| (c.to_vec(), v)).collect()
    }
}

/// Static description of one tensor mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeData {
    pub name: String,
    pub dim: usize,
    /// `dim × F` feature matrix, one row per entity.
    pub side_info: Option<SparseMatrix>,
}

impl ModeData {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        ModeData {
            name: name.into(),
            dim,
            side_info: None,
        }
    }

    pub fn with_side_info(name: impl Into<String>, side_info: SparseMatrix) -> Self {
        ModeData {
            name: name.into(),
            dim: side_info.nrows(),
            side_info: Some(side_info),
        }
    }

    pub fn n_features(&self) -> Option<usize> {
        self.side_info.as_ref().map(SparseMatrix::ncols)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(x) = &self.side_info {
            if x.nrows() != self.dim {
                return Err(Error::DimensionMismatch(format!(
                    "mode '{}': side info has {} rows for {} entities",
                    self.name,
                    x.nrows(),
                    self.dim
                )));
            }
        }
        Ok(())
    }
}

/// Sampled quantities of one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    /// `N × D`.
    pub latent: DenseMatrix,
    pub mu: Vec<f64>,
    /// `D × D` prior precision.
    pub lambda: DenseMatrix,
    /// `D × F` link matrix, present iff the mode has side info.
    pub beta: Option<DenseMatrix>,
    pub lambda_beta: f64,
}

impl ModeState {
    pub fn num_latent(&self) -> usize {
        self.mu.len()
    }

    pub fn dim(&self) -> usize {
        self.latent.nrows()
    }

    /// Prior mean `mu + beta·x_i` for every entity, as an `N × D` matrix.
    pub fn prior_means(&self, side_info: Option<&SparseMatrix>) -> Result<DenseMatrix> {
        let d = self.num_latent();
        let n = self.dim();
        let mut out = DenseMatrix::from_fn(n, d, |_, k| self.mu[k]);
        if let (Some(beta), Some(x)) = (&self.beta, side_info) {
            let shift = link_product(x, beta)?;
            for (o, s) in out.as_mut_slice().iter_mut().zip(shift.as_slice()) {
                *o += s;
            }
        }
        Ok(out)
    }
}

/// `X·βᵀ` (N × D) for features `X` (N × F) and link matrix `β` (D × F).
pub fn link_product(x: &SparseMatrix, beta: &DenseMatrix) -> Result<DenseMatrix> {
    if beta.ncols() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "link matrix has {} columns, features have {}",
            beta.ncols(),
            x.ncols()
        )));
    }
    let d = beta.nrows();
    let mut out = DenseMatrix::zeros(x.nrows(), d);
    for i in 0..x.nrows() {
        let (cols, vals) = x.row(i);
        let row = out.row_mut(i);
        for (k, r) in row.iter_mut().enumerate() {
            let b = beta.row(k);
            *r = cols.iter().zip(vals).map(|(&c, &v)| v * b[c]).sum();
        }
    }
    Ok(out)
}

/// Treatment of the link-matrix prior precision `lambda_beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LambdaBetaMode {
    Fixed { value: f64 },
    Sampled { shape: f64, rate: f64 },
}

impl Default for LambdaBetaMode {
    fn default() -> Self {
        LambdaBetaMode::Fixed { value: 5.0 }
    }
}

impl LambdaBetaMode {
    pub fn initial_value(&self) -> f64 {
        match *self {
            LambdaBetaMode::Fixed { value } => value,
            // prior mean
            LambdaBetaMode::Sampled { shape, rate } => shape / rate,
        }
    }
}

/// Normal–Wishart hyperprior on each mode's `(mu, lambda)`, plus the noise
/// and link-precision priors. `None` fields take D-dependent defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperPriorConfig {
    pub mu0: Option<Vec<f64>>,
    pub kappa0: f64,
    pub nu0: Option<f64>,
    pub w0: Option<DenseMatrix>,
    pub alpha_fixed: Option<f64>,
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    pub lambda_beta: LambdaBetaMode,
}

impl Default for HyperPriorConfig {
    fn default() -> Self {
        HyperPriorConfig {
            mu0: None,
            kappa0: 2.0,
            nu0: None,
            w0: None,
            alpha_fixed: None,
            alpha_shape: 1.0,
            alpha_rate: 1.0,
            lambda_beta: LambdaBetaMode::default(),
        }
    }
}

impl HyperPriorConfig {
    pub fn mu0(&self, d: usize) -> Vec<f64> {
        self.mu0.clone().unwrap_or_else(|| vec![0.0; d])
    }

    pub fn nu0(&self, d: usize) -> f64 {
        self.nu0.unwrap_or(d as f64)
    }

    pub fn w0(&self, d: usize) -> DenseMatrix {
        self.w0.clone().unwrap_or_else(|| DenseMatrix::identity(d))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("hyperprior: {what}")));
        if self.mu0(d).len() != d {
            return bad("mu0 length differs from D");
        }
        if !(self.kappa0 > 0.0) {
            return bad("kappa0 must be positive");
        }
        if self.nu0(d) < d as f64 {
            return bad("nu0 must be at least D");
        }
        let w0 = self.w0(d);
        if w0.shape() != (d, d) || stats::cholesky(w0.to_nalgebra(), "W0").is_err() {
            return bad("W0 must be a D×D SPD matrix");
        }
        if let Some(a) = self.alpha_fixed {
            if !(a > 0.0) {
                return bad("alpha_fixed must be positive");
            }
        }
        if !(self.alpha_shape > 0.0 && self.alpha_rate > 0.0) {
            return bad("alpha Gamma parameters must be positive");
        }
        match self.lambda_beta {
            LambdaBetaMode::Fixed { value } if !(value > 0.0) => bad("lambda_beta must be positive"),
            LambdaBetaMode::Sampled { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                bad("lambda_beta Gamma parameters must be positive")
            }
            _ => Ok(()),
        }
    }
}

/// Full sampler state: one `ModeState` per mode and the noise precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub modes: Vec<ModeState>,
    pub alpha: f64,
    pub iteration: usize,
}

impl SamplerState {
    pub fn num_latent(&self) -> usize {
        self.modes.first().map_or(0, ModeState::num_latent)
    }

    fn predict_unchecked(&self, indices: &[usize]) -> f64 {
        let d = self.num_latent();
        let mut prod = vec![1.0; d];
        for (mode, &i) in self.modes.iter().zip(indices) {
            for (p, &v) in prod.iter_mut().zip(mode.latent.row(i)) {
                *p *= v;
            }
        }
        prod.iter().sum()
    }
}

/// `Σ_d Π_m latent_m[index_m, d]`.
pub fn predict_entry(state: &SamplerState, indices: &[usize]) -> Result<f64> {
    if indices.len() != state.modes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} indices for a {}-mode model",
            indices.len(),
            state.modes.len()
        )));
    }
    for (m, (&i, mode)) in indices.iter().zip(&state.modes).enumerate() {
        if i >= mode.dim() {
            return Err(Error::IndexOutOfRange(format!(
                "index {i} in mode {m} of size {}",
                mode.dim()
            )));
        }
    }
    Ok(state.predict_unchecked(indices))
}

/// Predictions for every cell of `cells`, in order.
pub fn predict_all(state: &SamplerState, cells: &ObservationSet) -> Result<Vec<f64>> {
    cells.iter().map(|(idx, _)| predict_entry(state, idx)).collect()
}

/// Sum of squared residuals over the observed cells.
pub fn sum_squared_error(state: &SamplerState, data: &ObservationSet) -> f64 {
    data.iter()
        .map(|(idx, y)| {
            let e = y - state.predict_unchecked(idx);
            e * e
        })
        .sum()
}

/// Gaussian full conditional of one latent vector in canonical form:
/// density ∝ exp(-½ cᵀ·precision·c + linearᵀ·c).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    pub precision: DenseMatrix,
    pub linear: Vec<f64>,
}

impl GaussianConditional {
    pub fn mean(&self) -> Result<Vec<f64>> {
        let chol = stats::cholesky(self.precision.to_nalgebra(), "conditional precision")?;
        Ok(chol.solve(&DVector::from_column_slice(&self.linear)).as_slice().to_vec())
    }

    /// Unnormalized log-density up to the additive constant.
    pub fn log_density_unnormalized(&self, c: &[f64]) -> f64 {
        let d = c.len();
        let mut quad = 0.0;
        for a in 0..d {
            for b in 0..d {
                quad += c[a] * self.precision[(a, b)] * c[b];
            }
        }
        let lin: f64 = c.iter().zip(&self.linear).map(|(x, l)| x * l).sum();
        -0.5 * quad + lin
    }

    /// Normalized log-density of `N(P⁻¹b, P⁻¹)` at `c`.
    pub fn log_density(&self, c: &[f64]) -> Result<f64> {
        let p = self.precision.to_nalgebra();
        let chol = stats::cholesky(p.clone(), "conditional precision")?;
        let mean = chol.solve(&DVector::from_column_slice(&self.linear));
        let diff = DVector::from_column_slice(c) - mean;
        let quad = (diff.transpose() * &p * &diff)[(0, 0)];
        let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let d = c.len() as f64;
        Ok(-0.5 * (d * (2.0 * std::f64::consts::PI).ln() - log_det + quad))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let chol = stats::cholesky(self.precision.to_nalgebra(), "conditional precision")?;
        let draw =
            stats::sample_gaussian_canonical(&chol, &DVector::from_column_slice(&self.linear), rng);
        Ok(draw.as_slice().to_vec())
    }
}

/// Conditional of entity `entity` of `mode` given a prior mean for it.
pub(crate) fn conditional_given_prior_mean(
    state: &SamplerState,
    data: &ObservationSet,
    mode: usize,
    entity: usize,
    prior_mean: &[f64],
) -> GaussianConditional {
    let d = state.num_latent();
    let ms = &state.modes[mode];
    let mut precision = ms.lambda.clone();
    let mut linear = vec![0.0; d];
    for a in 0..d {
        linear[a] = (0..d).map(|b| ms.lambda[(a, b)] * prior_mean[b]).sum();
    }
    let alpha = state.alpha;
    let mut q = vec![0.0; d];
    for &k in data.cells_of(mode, entity) {
        let cell = data.cell(k);
        q.iter_mut().for_each(|v| *v = 1.0);
        for (m, (other, &i)) in state.modes.iter().zip(cell).enumerate() {
            if m == mode {
                continue;
            }
            for (qv, &l) in q.iter_mut().zip(other.latent.row(i)) {
                *qv *= l;
            }
        }
        let y = data.value(k);
        for a in 0..d {
            linear[a] += alpha * y * q[a];
            let aq = alpha * q[a];
            let row = precision.row_mut(a);
            for b in 0..d {
                row[b] += aq * q[b];
            }
        }
    }
    GaussianConditional { precision, linear }
}

/// Full conditional of the latent vector of `entity` in `mode`:
/// precision `Λ + α Σ q qᵀ`, linear term `Λ(μ + βx) + α Σ y q`, where `q` is
/// the elementwise product of the other modes' latent vectors at each
/// observed cell touching the entity.
pub fn latent_conditional(
    state: &SamplerState,
    modes: &[ModeData],
    data: &ObservationSet,
    mode: usize,
    entity: usize,
) -> Result<GaussianConditional> {
    let ms = state
        .modes
        .get(mode)
        .ok_or_else(|| Error::IndexOutOfRange(format!("mode {mode}")))?;
    if entity >= ms.dim() {
        return Err(Error::IndexOutOfRange(format!(
            "entity {entity} in mode {mode} of size {}",
            ms.dim()
        )));
    }
    if data.n_modes() != state.modes.len() {
        return Err(Error::DimensionMismatch("data and state mode counts differ".into()));
    }
    let mut prior_mean = ms.mu.clone();
    if let (Some(beta), Some(x)) = (&ms.beta, modes.get(mode).and_then(|m| m.side_info.as_ref())) {
        let (cols, vals) = x.row(entity);
        for (k, p) in prior_mean.iter_mut().enumerate() {
            let b = beta.row(k);
            *p += cols.iter().zip(vals).map(|(&c, &v)| v * b[c]).sum::<f64>();
        }
    }
    let cond = conditional_given_prior_mean(state, data, mode, entity, &prior_mean);
    stats::cholesky(cond.precision.to_nalgebra(), "latent conditional precision")?;
    Ok(cond)
}

/// Draws `(mu, lambda)` from the Normal–Wishart conditional of one mode.
///
/// Residuals `r_i = c_i - beta·x_i` play the role of the data. When the mode
/// has a link matrix, its prior `vec(beta) ~ N(0, (lambda ⊗ lambda_beta·I)⁻¹)`
/// also depends on `lambda`, which adds `lambda_beta·beta·betaᵀ` to the inverse
/// scale and `F` to the degrees of freedom.
pub fn sample_mode_hyperparams<R: Rng + ?Sized>(
    mode_state: &ModeState,
    mode_data: &ModeData,
    hyper: &HyperPriorConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, DenseMatrix)> {
    let d = mode_state.num_latent();
    let n = mode_state.dim();
    let residuals = match (&mode_state.beta, &mode_data.side_info) {
        (Some(beta), Some(x)) => {
            let shift = link_product(x, beta)?;
            let mut r = mode_state.latent.clone();
            for (v, s) in r.as_mut_slice().iter_mut().zip(shift.as_slice()) {
                *v -= s;
            }
            r
        }
        (None, _) => mode_state.latent.clone(),
        (Some(_), None) => {
            return Err(Error::InvalidArgument(format!(
                "mode '{}' has a link matrix but no side info",
                mode_data.name
            )))
        }
    };

    let mu0 = DVector::from_vec(hyper.mu0(d));
    let kappa0 = hyper.kappa0;
    let w0_inv = stats::spd_inverse(&hyper.w0(d).to_nalgebra(), "W0")?;

    let mut mean = DVector::<f64>::zeros(d);
    for r in residuals.rows() {
        mean += DVector::from_column_slice(r);
    }
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    if n > 0 {
        mean /= n as f64;
        for r in residuals.rows() {
            let c = DVector::from_column_slice(r) - &mean;
            scatter += &c * c.transpose();
        }
    }
    let nf = n as f64;
    let kappa_n = kappa0 + nf;
    let mut nu_n = hyper.nu0(d) + nf;
    let mu_n = (&mu0 * kappa0 + &mean * nf) / kappa_n;
    let dm = &mean - &mu0;
    let mut w_n_inv = w0_inv + scatter + (&dm * dm.transpose()) * (kappa0 * nf / kappa_n);
    if let Some(beta) = &mode_state.beta {
        let b = beta.to_nalgebra();
        w_n_inv += (&b * b.transpose()) * mode_state.lambda_beta;
        nu_n += beta.ncols() as f64;
    }
    let w_n = stats::spd_inverse(&stats::symmetrize(w_n_inv), "Normal-Wishart inverse scale")?;
    let lambda = stats::sample_wishart(&w_n, nu_n, rng)?;
    let mu_chol = stats::cholesky(&lambda * kappa_n, "sampled precision")?;
    let mu_lin = &lambda * kappa_n * &mu_n;
    let mu = stats::sample_gaussian_canonical(&mu_chol, &mu_lin, rng);
    Ok((mu.as_slice().to_vec(), DenseMatrix::from_nalgebra(&lambda)))
}

/// Noise precision draw from `Gamma(a0 + |I|/2, b0 + SSE/2)`, or the fixed
/// value when configured.
pub fn sample_alpha<R: Rng + ?Sized>(
    state: &SamplerState,
    data: &ObservationSet,
    hyper: &HyperPriorConfig,
    rng: &mut R,
) -> Result<f64> {
    if let Some(a) = hyper.alpha_fixed {
        return Ok(a);
    }
    let sse = sum_squared_error(state, data);
    if !sse.is_finite() {
        return Err(Error::Numerical("sum of squared errors overflowed".into()));
    }
    stats::sample_gamma(
        hyper.alpha_shape + data.len() as f64 / 2.0,
        hyper.alpha_rate + sse / 2.0,
        rng,
    )
}

/// Link precision draw from `Gamma(a + D·F/2, b + tr(Λ·β·βᵀ)/2)`.
pub fn sample_lambda_beta<R: Rng + ?Sized>(
    mode_state: &ModeState,
    hyper: &HyperPriorConfig,
    rng: &mut R,
) -> Result<f64> {
    let beta = mode_state.beta.as_ref().ok_or_else(|| {
        Error::InvalidArgument("lambda_beta sampled for a mode without side info".into())
    })?;
    let (shape, rate) = match hyper.lambda_beta {
        LambdaBetaMode::Sampled { shape, rate } => (shape, rate),
        LambdaBetaMode::Fixed { .. } => {
            return Err(Error::InvalidArgument(
                "lambda_beta is configured as fixed".into(),
            ))
        }
    };
    let d = beta.nrows();
    let f = beta.ncols();
    let b = beta.to_nalgebra();
    let trace = (mode_state.lambda.to_nalgebra() * (&b * b.transpose())).trace();
    stats::sample_gamma(
        shape + (d * f) as f64 / 2.0,
        rate + trace / 2.0,
        rng,
    )
}
