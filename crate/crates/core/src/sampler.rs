//! Block Gibbs sampler.
//!
//! One sweep visits the modes in order and, for each, draws the Normal–Wishart
//! hyperparameters, then the link matrix (modes with side info), then every
//! latent vector; the noise precision is drawn last.
//!
//! The link matrix is drawn with the noise-injection construction: solving
//! `K·B = Xᵀ(U + E₁) + √λ·E₂` with `K = XᵀX + λI`, where the rows of `E₁`
//! and `E₂` are i.i.d. `N(0, Λ⁻¹)`, yields `B ~ N(K⁻¹XᵀU, Λ⁻¹ ⊗ K⁻¹)`. Each of
//! the D columns is an independent CG solve that only needs products with `X`
//! and `Xᵀ`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cg::{cg_solve_multi, CgSettings};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::model::{
    self, conditional_given_prior_mean, HyperPriorConfig, LambdaBetaMode, ModeData, ModeState,
    ObservationSet, SamplerState,
};
use crate::rng::{Purpose, RngStreams};
use crate::sparse::{spmv_t_into, RidgeGramOperator, SparseMatrix};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Latent dimension D.
    pub num_latent: usize,
    pub burn_in: usize,
    pub n_samples: usize,
    pub cg: CgSettings,
    pub hyper: HyperPriorConfig,
    pub seed: u64,
    /// Worker threads; `None` lets rayon pick.
    pub threads: Option<usize>,
    /// Mode visiting order within a sweep; `None` is declaration order.
    pub mode_order: Option<Vec<usize>>,
    /// Keep every retained state (needed for offline difference analysis).
    pub keep_samples: bool,
    /// Mode whose per-sample latents are recorded; defaults to the last mode.
    pub measurement_mode: Option<usize>,
    /// Accumulate the masked interaction difference online for this mask.
    pub difference_mask: Option<Vec<bool>>,
    /// Measurement slices `(reference, other)` compared by the difference analysis.
    pub difference_slices: (usize, usize),
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_latent: 30,
            burn_in: 200,
            n_samples: 800,
            cg: CgSettings::default(),
            hyper: HyperPriorConfig::default(),
            seed: 0,
            threads: None,
            mode_order: None,
            keep_samples: false,
            measurement_mode: None,
            difference_mask: None,
            difference_slices: (0, 1),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, n_modes: usize) -> Result<()> {
        if self.num_latent == 0 {
            return Err(Error::InvalidArgument("num_latent must be >= 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("threads must be >= 1".into()));
        }
        self.cg.validate()?;
        self.hyper.validate(self.num_latent)?;
        if let Some(order) = &self.mode_order {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..n_modes).collect::<Vec<_>>() {
                return Err(Error::InvalidArgument(format!(
                    "mode_order {order:?} is not a permutation of 0..{n_modes}"
                )));
            }
        }
        if let Some(m) = self.measurement_mode {
            if m >= n_modes {
                return Err(Error::InvalidArgument(format!("measurement_mode {m} out of range")));
            }
        }
        if let Some(mask) = &self.difference_mask {
            if n_modes != 3 {
                return Err(Error::InvalidArgument(
                    "online difference analysis needs a 3-mode tensor".into(),
                ));
            }
            if mask.len() != self.num_latent {
                return Err(Error::InvalidArgument("difference_mask length differs from D".into()));
            }
        }
        Ok(())
    }

    fn measurement_mode(&self, n_modes: usize) -> usize {
        self.measurement_mode.unwrap_or(n_modes - 1)
    }
}

/// Running sums of the masked interaction difference over retained samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineDifference {
    pub mask: Vec<bool>,
    pub slices: (usize, usize),
    /// `N_c × N_p` running sum of `|mᵀ(c_i ∘ p_j ∘ (t_b − t_a))|`.
    pub sum: DenseMatrix,
    pub count: usize,
}

/// What a run keeps from its retained sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_samples: usize,
    /// Running posterior-mean predictions for the training cells.
    pub train_mean: Vec<f64>,
    /// Running posterior-mean predictions for the test cells, if any.
    pub test_mean: Option<Vec<f64>>,
    /// Per-sample RMSE of the sample's own predictions on the training cells.
    pub train_rmse_trace: Vec<f64>,
    pub test_rmse_trace: Vec<f64>,
    pub alpha_trace: Vec<f64>,
    pub measurement_mode: usize,
    /// Per sample, the `N_t × D` measurement-mode latent matrix.
    pub measurement_latents: Vec<DenseMatrix>,
    /// Per sample and latent dimension, the product of the Euclidean norms of
    /// that dimension's latent column over all non-measurement modes.
    pub norm_products: Vec<Vec<f64>>,
    pub samples: Option<Vec<SamplerState>>,
    pub difference: Option<OnlineDifference>,
    pub final_state: SamplerState,
}

impl PosteriorSummary {
    /// RMSE of the posterior-mean test predictions.
    pub fn test_rmse(&self, test: &ObservationSet) -> Option<f64> {
        self.test_mean
            .as_ref()
            .and_then(|m| crate::analysis::rmse(m, test.values()).ok())
    }

    pub fn train_rmse(&self, data: &ObservationSet) -> Option<f64> {
        crate::analysis::rmse(&self.train_mean, data.values()).ok()
    }
}

/// Rows drawn i.i.d. from `N(0, Λ⁻¹)` as `z·Lᵀ` with `Λ⁻¹ = L·Lᵀ`.
fn precision_noise<R: Rng + ?Sized>(
    chol_cov_l: &nalgebra::DMatrix<f64>,
    nrows: usize,
    rng: &mut R,
) -> DenseMatrix {
    let d = chol_cov_l.nrows();
    let mut out = DenseMatrix::zeros(nrows, d);
    for i in 0..nrows {
        let z = stats::standard_normal_vec(rng, d);
        let row = chol_cov_l * z;
        out.row_mut(i).copy_from_slice(row.as_slice());
    }
    out
}

/// Draws a link matrix (`D × F`) from `N(K⁻¹XᵀU, Λ⁻¹ ⊗ K⁻¹)` by noise injection.
///
/// `x` is `N × F`, `u` is `N × D` with rows `c_i − μ`.
pub fn sample_link_matrix<R: Rng + ?Sized>(
    x: &SparseMatrix,
    u: &DenseMatrix,
    lambda: &DenseMatrix,
    lambda_beta: f64,
    cg: &CgSettings,
    rng: &mut R,
) -> Result<DenseMatrix> {
    let (n, d) = u.shape();
    let f = x.ncols();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "features have {} rows, U has {n}",
            x.nrows()
        )));
    }
    if lambda.shape() != (d, d) {
        return Err(Error::DimensionMismatch("Λ must be D×D".into()));
    }
    let op = RidgeGramOperator::new(x, lambda_beta)?;
    let cov = stats::spd_inverse(&lambda.to_nalgebra(), "link precision Λ")?;
    let l = stats::cholesky(cov, "Λ⁻¹")?.l();

    let e1 = precision_noise(&l, n, rng);
    let e2 = precision_noise(&l, f, rng);

    let sqrt_lb = lambda_beta.sqrt();
    let mut rhs = DenseMatrix::zeros(f, d);
    let mut col = vec![0.0; n];
    let mut out = vec![0.0; f];
    for k in 0..d {
        for (i, c) in col.iter_mut().enumerate() {
            *c = u[(i, k)] + e1[(i, k)];
        }
        spmv_t_into(x, &col, &mut out);
        for (j, o) in out.iter().enumerate() {
            rhs[(j, k)] = o + sqrt_lb * e2[(j, k)];
        }
    }
    let solution = cg_solve_multi(&op, &rhs, cg)?;
    Ok(solution.transpose())
}

/// Initial state: latent entries i.i.d. `N(0, 1/D)`, `μ = 0`, `Λ = I`, `β = 0`.
pub fn initial_state(modes: &[ModeData], config: &SamplerConfig) -> SamplerState {
    let d = config.num_latent;
    let streams = RngStreams::new(config.seed);
    let scale = 1.0 / (d as f64).sqrt();
    let states = modes
        .iter()
        .enumerate()
        .map(|(m, md)| {
            let latent = DenseMatrix::from_fn(md.dim, d, {
                let mut rng = streams.stream(Purpose::Init, 0, m as u64, 0);
                move |_, _| scale * rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            ModeState {
                latent,
                mu: vec![0.0; d],
                lambda: DenseMatrix::identity(d),
                beta: md.n_features().map(|f| DenseMatrix::zeros(d, f)),
                lambda_beta: config.hyper.lambda_beta.initial_value(),
            }
        })
        .collect();
    SamplerState {
        modes: states,
        alpha: config
            .hyper
            .alpha_fixed
            .unwrap_or(config.hyper.alpha_shape / config.hyper.alpha_rate),
        iteration: 0,
    }
}

/// One Gibbs sweep. Random draws are addressed by `state.iteration`, so the
/// result depends only on the seed and the sweep number.
pub fn gibbs_sweep(
    state: &mut SamplerState,
    data: &ObservationSet,
    modes: &[ModeData],
    config: &SamplerConfig,
) -> Result<()> {
    let streams = RngStreams::new(config.seed);
    let sweep = state.iteration as u64 + 1;
    let order: Vec<usize> = config
        .mode_order
        .clone()
        .unwrap_or_else(|| (0..modes.len()).collect());
    let hyper = &config.hyper;

    for m in order {
        let md = &modes[m];
        let mid = m as u64;

        let mut rng = streams.stream(Purpose::ModeHyper, sweep, mid, 0);
        let (mu, lambda) = model::sample_mode_hyperparams(&state.modes[m], md, hyper, &mut rng)?;
        state.modes[m].mu = mu;
        state.modes[m].lambda = lambda;

        if let Some(x) = &md.side_info {
            let ms = &state.modes[m];
            let mut u = ms.latent.clone();
            for i in 0..u.nrows() {
                for (v, mu) in u.row_mut(i).iter_mut().zip(&ms.mu) {
                    *v -= mu;
                }
            }
            let mut rng = streams.stream(Purpose::LinkMatrix, sweep, mid, 0);
            let beta = sample_link_matrix(x, &u, &ms.lambda, ms.lambda_beta, &config.cg, &mut rng)?;
            state.modes[m].beta = Some(beta);
            if let LambdaBetaMode::Sampled { .. } = hyper.lambda_beta {
                let mut rng = streams.stream(Purpose::LambdaBeta, sweep, mid, 0);
                state.modes[m].lambda_beta =
                    model::sample_lambda_beta(&state.modes[m], hyper, &mut rng)?;
            }
        }

        let prior_means = state.modes[m].prior_means(md.side_info.as_ref())?;
        let snapshot: &SamplerState = state;
        let rows: Vec<Vec<f64>> = (0..md.dim)
            .into_par_iter()
            .map(|i| {
                let cond =
                    conditional_given_prior_mean(snapshot, data, m, i, prior_means.row(i));
                let mut rng = streams.stream(Purpose::Latent, sweep, mid, i as u64);
                cond.sample(&mut rng)
            })
            .collect::<Result<_>>()?;
        let latent = &mut state.modes[m].latent;
        for (i, row) in rows.iter().enumerate() {
            latent.row_mut(i).copy_from_slice(row);
        }
    }

    let mut rng = streams.stream(Purpose::Alpha, sweep, 0, 0);
    state.alpha = model::sample_alpha(state, data, hyper, &mut rng)?;
    state.iteration += 1;
    Ok(())
}

fn column_norms(m: &DenseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; m.ncols()];
    for row in m.rows() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v * v;
        }
    }
    out.iter_mut().for_each(|v| *v = v.sqrt());
    out
}

fn validate_inputs(
    data: &ObservationSet,
    modes: &[ModeData],
    test: Option<&ObservationSet>,
    config: &SamplerConfig,
) -> Result<()> {
    if modes.len() != data.n_modes() {
        return Err(Error::DimensionMismatch(format!(
            "{} mode descriptions for a {}-mode tensor",
            modes.len(),
            data.n_modes()
        )));
    }
    for (m, md) in modes.iter().enumerate() {
        if md.dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "mode {m} ('{}') has dimension 0",
                md.name
            )));
        }
        if md.dim != data.mode_dims()[m] {
            return Err(Error::DimensionMismatch(format!(
                "mode {m} has {} entities but the tensor has {}",
                md.dim,
                data.mode_dims()[m]
            )));
        }
        md.validate()?;
    }
    if let Some(t) = test {
        if t.mode_dims() != data.mode_dims() {
            return Err(Error::DimensionMismatch(
                "test cells and training data disagree on mode dimensions".into(),
            ));
        }
        if let Some((idx, _)) = t.iter().find(|(idx, _)| data.contains(idx)) {
            return Err(Error::InvalidArgument(format!(
                "test cell {idx:?} is also a training cell"
            )));
        }
    }
    config.validate(data.n_modes())
}

fn running_mean_update(mean: &mut [f64], sample: &[f64], n: usize) {
    let w = 1.0 / n as f64;
    for (m, s) in mean.iter_mut().zip(sample) {
        *m += (s - *m) * w;
    }
}

fn rmse_or_nan(pred: &[f64], actual: &[f64]) -> f64 {
    crate::analysis::rmse(pred, actual).unwrap_or(f64::NAN)
}

/// Runs `burn_in` discarded sweeps then `n_samples` retained sweeps.
pub fn run_sampler(
    data: &ObservationSet,
    modes: &[ModeData],
    test: Option<&ObservationSet>,
    config: &SamplerConfig,
) -> Result<PosteriorSummary> {
    validate_inputs(data, modes, test, config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run_chain(data, modes, test, config))
}

fn run_chain(
    data: &ObservationSet,
    modes: &[ModeData],
    test: Option<&ObservationSet>,
    config: &SamplerConfig,
) -> Result<PosteriorSummary> {
    let n_modes = modes.len();
    let meas = config.measurement_mode(n_modes);
    let mut state = initial_state(modes, config);
    for _ in 0..config.burn_in {
        gibbs_sweep(&mut state, data, modes, config)?;
    }

    let mut train_mean = vec![0.0; data.len()];
    let mut test_mean = test.map(|t| vec![0.0; t.len()]);
    let mut summary_samples = config.keep_samples.then(Vec::new);
    let mut difference = config.difference_mask.as_ref().map(|mask| OnlineDifference {
        mask: mask.clone(),
        slices: config.difference_slices,
        sum: DenseMatrix::zeros(modes[0].dim, modes[1].dim),
        count: 0,
    });
    let mut train_rmse_trace = Vec::with_capacity(config.n_samples);
    let mut test_rmse_trace = Vec::new();
    let mut alpha_trace = Vec::with_capacity(config.n_samples);
    let mut measurement_latents = Vec::with_capacity(config.n_samples);
    let mut norm_products = Vec::with_capacity(config.n_samples);

    for s in 1..=config.n_samples {
        gibbs_sweep(&mut state, data, modes, config)?;

        let train_pred = model::predict_all(&state, data)?;
        running_mean_update(&mut train_mean, &train_pred, s);
        train_rmse_trace.push(rmse_or_nan(&train_pred, data.values()));
        if let (Some(t), Some(mean)) = (test, test_mean.as_mut()) {
            let pred = model::predict_all(&state, t)?;
            running_mean_update(mean, &pred, s);
            test_rmse_trace.push(rmse_or_nan(&pred, t.values()));
        }
        alpha_trace.push(state.alpha);

        measurement_latents.push(state.modes[meas].latent.clone());
        let mut norms = vec![1.0; config.num_latent];
        for (m, ms) in state.modes.iter().enumerate() {
            if m == meas {
                continue;
            }
            for (n, c) in norms.iter_mut().zip(column_norms(&ms.latent)) {
                *n *= c;
            }
        }
        norm_products.push(norms);

        if let Some(diff) = difference.as_mut() {
            accumulate_difference(diff, &state)?;
        }
        if let Some(samples) = summary_samples.as_mut() {
            samples.push(state.clone());
        }
    }

    Ok(PosteriorSummary {
        n_samples: config.n_samples,
        train_mean,
        test_mean,
        train_rmse_trace,
        test_rmse_trace,
        alpha_trace,
        measurement_mode: meas,
        measurement_latents,
        norm_products,
        samples: summary_samples,
        difference,
        final_state: state,
    })
}

fn accumulate_difference(diff: &mut OnlineDifference, state: &SamplerState) -> Result<()> {
    let c = crate::analysis::interaction_difference_single(state, &diff.mask, diff.slices)?;
    for (s, v) in diff.sum.as_mut_slice().iter_mut().zip(c.as_slice()) {
        *s += v;
    }
    diff.count += 1;
    Ok(())
}
