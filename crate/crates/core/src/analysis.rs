//! Posterior analyses: hold-out RMSE, normalized measurement latents,
//! divergent-dimension selection, the masked interaction difference and its
//! per-protein ranking, and the pair-type discrimination test.
//!
//! The 3-mode layout is (compound, protein, measurement) throughout.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::model::SamplerState;
use crate::sampler::{OnlineDifference, PosteriorSummary};

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} values",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("rmse of an empty set".into()));
    }
    let sse: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

fn require_three_modes(state: &SamplerState) -> Result<()> {
    if state.modes.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected a (compound, protein, measurement) model, got {} modes",
            state.modes.len()
        )));
    }
    Ok(())
}

fn column_norm(m: &DenseMatrix, d: usize) -> f64 {
    m.rows().map(|r| r[d] * r[d]).sum::<f64>().sqrt()
}

/// `t_{k,d}·‖c^{(d)}‖·‖p^{(d)}‖` as an `N_t × D` matrix, where `c^{(d)}` and
/// `p^{(d)}` are the d-th latent dimension across all compounds and proteins.
pub fn normalized_measurement_latents(state: &SamplerState) -> Result<DenseMatrix> {
    require_three_modes(state)?;
    let d = state.num_latent();
    let norms: Vec<f64> = (0..d)
        .map(|k| column_norm(&state.modes[0].latent, k) * column_norm(&state.modes[1].latent, k))
        .collect();
    Ok(scale_columns(&state.modes[2].latent, &norms))
}

fn scale_columns(m: &DenseMatrix, scales: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), m.ncols(), |k, d| m[(k, d)] * scales[d])
}

/// Per-sample normalized measurement latents, plus an optional selection mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementLatentReport {
    pub samples: Vec<DenseMatrix>,
    pub selected_dims: Option<Vec<bool>>,
}

impl MeasurementLatentReport {
    pub fn from_summary(summary: &PosteriorSummary) -> Self {
        Self::from_parts(&summary.measurement_latents, &summary.norm_products)
    }

    /// Same as [`Self::from_summary`] for latents and norm products read back from disk.
    pub fn from_parts(latents: &[DenseMatrix], norm_products: &[Vec<f64>]) -> Self {
        let samples = latents
            .iter()
            .zip(norm_products)
            .map(|(t, norms)| scale_columns(t, norms))
            .collect();
        MeasurementLatentReport {
            samples,
            selected_dims: None,
        }
    }
}

/// Result of [`select_divergent_dims`].
#[derive(Debug, Clone, PartialEq)]
pub struct DivergentDims {
    pub mask: Vec<bool>,
    /// Posterior mean of `|δ_d|` per dimension.
    pub mean_abs_delta: Vec<f64>,
    pub threshold: f64,
}

pub const MIN_SAMPLES_FOR_SELECTION: usize = 30;

/// Marks dimension `d` when the posterior mean of `|ṽ_{b,d} − ṽ_{a,d}|`
/// exceeds `tau` times its median over dimensions.
pub fn select_divergent_dims(
    samples: &[DenseMatrix],
    slices: (usize, usize),
    tau: f64,
) -> Result<DivergentDims> {
    if samples.len() < MIN_SAMPLES_FOR_SELECTION {
        return Err(Error::InvalidArgument(format!(
            "divergent-dimension selection needs at least {MIN_SAMPLES_FOR_SELECTION} samples, got {}",
            samples.len()
        )));
    }
    let (a, b) = slices;
    let first = &samples[0];
    if a >= first.nrows() || b >= first.nrows() {
        return Err(Error::IndexOutOfRange(format!(
            "slices {slices:?} with {} measurement types",
            first.nrows()
        )));
    }
    let d = first.ncols();
    let mut mean_abs_delta = vec![0.0; d];
    for s in samples {
        for (k, m) in mean_abs_delta.iter_mut().enumerate() {
            *m += (s[(b, k)] - s[(a, k)]).abs();
        }
    }
    mean_abs_delta.iter_mut().for_each(|m| *m /= samples.len() as f64);
    let threshold = tau * median(&mean_abs_delta);
    let mask = mean_abs_delta.iter().map(|&m| m > threshold).collect();
    Ok(DivergentDims {
        mask,
        mean_abs_delta,
        threshold,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Nearest-rank quantile: the `ceil(q·n)`-th order statistic (1-based).
pub fn quantile_nearest_rank(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    // Guard against 0.95·100 rounding to 95.000000001.
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    v[rank - 1]
}

/// Posterior-averaged masked interaction difference `Ĉ` and its per-protein
/// 0.95 quantile.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDifferenceTable {
    /// `N_c × N_p`.
    pub chat: DenseMatrix,
    pub q95: Vec<f64>,
}

impl InteractionDifferenceTable {
    fn from_mean(chat: DenseMatrix) -> Self {
        let q95 = (0..chat.ncols())
            .map(|j| quantile_nearest_rank(&chat.column(j), 0.95))
            .collect();
        InteractionDifferenceTable { chat, q95 }
    }

    pub fn from_online(diff: &OnlineDifference) -> Result<Self> {
        if diff.count == 0 {
            return Err(Error::InvalidArgument("no samples accumulated".into()));
        }
        let mut chat = diff.sum.clone();
        chat.as_mut_slice().iter_mut().for_each(|v| *v /= diff.count as f64);
        Ok(Self::from_mean(chat))
    }
}

fn check_mask(mask: &[bool], d: usize) -> Result<()> {
    if mask.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "mask has length {}, model has D = {d}",
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument(
            "mask selects no latent dimension; no divergent dimensions were found".into(),
        ));
    }
    Ok(())
}

/// `C_ij = |mᵀ(c_i ∘ p_j ∘ (t_b − t_a))|` for one posterior sample.
pub fn interaction_difference_single(
    state: &SamplerState,
    mask: &[bool],
    slices: (usize, usize),
) -> Result<DenseMatrix> {
    require_three_modes(state)?;
    let d = state.num_latent();
    check_mask(mask, d)?;
    let t = &state.modes[2].latent;
    let (a, b) = slices;
    if a >= t.nrows() || b >= t.nrows() {
        return Err(Error::IndexOutOfRange(format!(
            "slices {slices:?} with {} measurement types",
            t.nrows()
        )));
    }
    let dims: Vec<usize> = (0..d).filter(|&k| mask[k]).collect();
    let delta: Vec<f64> = dims.iter().map(|&k| t[(b, k)] - t[(a, k)]).collect();
    let c = &state.modes[0].latent;
    let p = &state.modes[1].latent;
    let mut out = DenseMatrix::zeros(c.nrows(), p.nrows());
    let mut weighted = vec![0.0; dims.len()];
    for i in 0..c.nrows() {
        let ci = c.row(i);
        for ((w, &k), dt) in weighted.iter_mut().zip(&dims).zip(&delta) {
            *w = ci[k] * dt;
        }
        let row = out.row_mut(i);
        for (j, o) in row.iter_mut().enumerate() {
            let pj = p.row(j);
            *o = dims
                .iter()
                .zip(&weighted)
                .map(|(&k, w)| w * pj[k])
                .sum::<f64>()
                .abs();
        }
    }
    Ok(out)
}

/// Offline `Ĉ` from retained samples.
pub fn interaction_difference(
    samples: &[SamplerState],
    mask: &[bool],
    slices: (usize, usize),
) -> Result<InteractionDifferenceTable> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no posterior samples".into()))?;
    require_three_modes(first)?;
    check_mask(mask, first.num_latent())?;
    let mut sum = DenseMatrix::zeros(first.modes[0].dim(), first.modes[1].dim());
    for s in samples {
        let c = interaction_difference_single(s, mask, slices)?;
        for (acc, v) in sum.as_mut_slice().iter_mut().zip(c.as_slice()) {
            *acc += v;
        }
    }
    let n = samples.len() as f64;
    sum.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    Ok(InteractionDifferenceTable::from_mean(sum))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProteinRanking {
    /// `(protein index, q95)`, highest first.
    pub top: Vec<(usize, f64)>,
    /// The last `top_n` of the same descending order.
    pub bottom: Vec<(usize, f64)>,
    /// Every protein in descending order.
    pub all: Vec<(usize, f64)>,
}

/// Sorts proteins by q95 descending, ties by index ascending.
pub fn rank_proteins(table: &InteractionDifferenceTable, top_n: usize) -> Result<ProteinRanking> {
    rank_scores(&table.q95, top_n)
}

pub fn rank_scores(scores: &[f64], top_n: usize) -> Result<ProteinRanking> {
    if top_n > scores.len() {
        return Err(Error::InvalidArgument(format!(
            "top_n = {top_n} exceeds the {} proteins",
            scores.len()
        )));
    }
    let mut all: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    all.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(ProteinRanking {
        top: all[..top_n].to_vec(),
        bottom: all[all.len() - top_n..].to_vec(),
        all,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminationResult {
    pub mean_competitive: f64,
    pub mean_noncompetitive: f64,
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    /// Both groups have zero variance.
    pub degenerate: bool,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch t-test on `|Δ|` between competitive and non-competitive
/// pairs, where `Δ` is a predicted difference between measurement types.
pub fn pair_type_discrimination(
    competitive: &[f64],
    noncompetitive: &[f64],
) -> Result<DiscriminationResult> {
    if competitive.len() < 2 || noncompetitive.len() < 2 {
        return Err(Error::InvalidArgument(
            "each pair group needs at least 2 pairs".into(),
        ));
    }
    let a: Vec<f64> = competitive.iter().map(|v| v.abs()).collect();
    let b: Vec<f64> = noncompetitive.iter().map(|v| v.abs()).collect();
    let (ma, va) = mean_var(&a);
    let (mb, vb) = mean_var(&b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;

    if se2 == 0.0 {
        let (t, p) = if ma == mb {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(ma - mb), 0.0)
        };
        return Ok(DiscriminationResult {
            mean_competitive: ma,
            mean_noncompetitive: mb,
            t_statistic: t,
            degrees_of_freedom: na + nb - 2.0,
            p_value: p,
            degenerate: true,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Numerical(format!("Student t with {df} dof: {e}")))?;
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(DiscriminationResult {
        mean_competitive: ma,
        mean_noncompetitive: mb,
        t_statistic: t,
        degrees_of_freedom: df,
        p_value,
        degenerate: false,
    })
}
