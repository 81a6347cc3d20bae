//! Output directory of a training run and the analysis reports.
//!
//! ```text
//! predictions.tsv          posterior-mean predictions (test cells, else training cells)
//! test-cells.tsv           held-out cells with observed values
//! test-metrics.tsv         metric<TAB>value
//! measurement-latents.tsv  per-sample measurement latents and norm products
//! posterior.json           final state, retained samples, online Ĉ sums
//! run-config               effective configuration (TOML)
//! divergent-dims.tsv       written by `analyze`
//! chat.tsv                 written by `analyze`: proteins ranked by Ĉ 0.95 quantile
//! protein-ranking.tsv      written by `analyze`: top and bottom lists
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{DivergentDims, ProteinRanking};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::io::manifest::{RunInputs, RunManifest};
use crate::io::tensor::{format_sig6, write_predictions, write_tensor};
use crate::model::SamplerState;
use crate::sampler::{OnlineDifference, PosteriorSummary};

pub const PREDICTIONS: &str = "predictions.tsv";
pub const TEST_CELLS: &str = "test-cells.tsv";
pub const TEST_METRICS: &str = "test-metrics.tsv";
pub const MEASUREMENT_LATENTS: &str = "measurement-latents.tsv";
pub const POSTERIOR: &str = "posterior.json";
pub const RUN_CONFIG: &str = "run-config";
pub const DIVERGENT_DIMS: &str = "divergent-dims.tsv";
pub const CHAT: &str = "chat.tsv";
pub const PROTEIN_RANKING: &str = "protein-ranking.tsv";

/// What `predict` and `analyze` need from a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSnapshot {
    pub mode_dims: Vec<usize>,
    pub measurement_mode: usize,
    pub final_state: SamplerState,
    pub samples: Option<Vec<SamplerState>>,
    pub difference: Option<OnlineDifference>,
}

impl PosteriorSnapshot {
    /// Posterior-mean prediction of a cell: averaged over retained samples
    /// when available, otherwise from the final state.
    pub fn predict(&self, idx: &[usize]) -> Result<f64> {
        match &self.samples {
            Some(samples) if !samples.is_empty() => {
                let mut mean = 0.0;
                for (n, s) in samples.iter().enumerate() {
                    let v = crate::model::predict_entry(s, idx)?;
                    mean += (v - mean) / (n + 1) as f64;
                }
                Ok(mean)
            }
            _ => crate::model::predict_entry(&self.final_state, idx),
        }
    }
}

/// Everything that determined a run, with defaults filled in.
#[derive(Debug, Clone, Serialize)]
struct EffectiveConfig<'a> {
    mode_dims: Vec<usize>,
    n_train: usize,
    n_test: usize,
    /// Per mode with side info: `(mode, CG iteration cap)`.
    cg_max_iterations: Vec<(usize, usize)>,
    manifest: &'a RunManifest,
}

fn effective_manifest(manifest: &RunManifest, mode_dims: &[usize]) -> RunManifest {
    let mut m = manifest.clone();
    let d = m.sampler.num_latent;
    let h = &mut m.sampler.hyper;
    h.mu0 = Some(h.mu0(d));
    h.nu0 = Some(h.nu0(d));
    h.w0 = Some(h.w0(d));
    m.mode_dims = Some(mode_dims.to_vec());
    m
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the run directory for a finished sampler run.
pub fn write_run_outputs(
    dir: impl AsRef<Path>,
    manifest: &RunManifest,
    inputs: &RunInputs,
    summary: &PosteriorSummary,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dims = inputs.train.mode_dims().to_vec();

    match (&inputs.test, &summary.test_mean) {
        (Some(test), Some(mean)) => {
            write_predictions(dir.join(PREDICTIONS), test, mean)?;
            write_tensor(dir.join(TEST_CELLS), test)?;
        }
        _ => write_predictions(dir.join(PREDICTIONS), &inputs.train, &summary.train_mean)?,
    }

    let mut metrics: Vec<(&str, f64)> = vec![
        ("n_samples", summary.n_samples as f64),
        ("n_train", inputs.train.len() as f64),
    ];
    if let Some(r) = summary.train_rmse(&inputs.train) {
        metrics.push(("train_rmse", r));
    }
    if let Some(test) = &inputs.test {
        metrics.push(("n_test", test.len() as f64));
        if let Some(r) = summary.test_rmse(test) {
            metrics.push(("test_rmse", r));
        }
    }
    let mean_alpha = summary.alpha_trace.iter().sum::<f64>() / summary.alpha_trace.len().max(1) as f64;
    metrics.push(("mean_alpha", mean_alpha));
    write_metrics(dir.join(TEST_METRICS), &metrics)?;

    write_measurement_latents(dir.join(MEASUREMENT_LATENTS), summary)?;

    let snapshot = PosteriorSnapshot {
        mode_dims: dims.clone(),
        measurement_mode: summary.measurement_mode,
        final_state: summary.final_state.clone(),
        samples: summary.samples.clone(),
        difference: summary.difference.clone(),
    };
    let json = serde_json::to_string(&snapshot).map_err(|e| Error::Format(e.to_string()))?;
    write_text(&dir.join(POSTERIOR), &json)?;

    let effective = effective_manifest(manifest, &dims);
    let cfg = EffectiveConfig {
        mode_dims: dims,
        n_train: inputs.train.len(),
        n_test: inputs.test.as_ref().map_or(0, |t| t.len()),
        cg_max_iterations: inputs
            .modes
            .iter()
            .enumerate()
            .filter_map(|(m, md)| {
                md.n_features()
                    .map(|f| (m, manifest.sampler.cg.effective_max_iterations(f)))
            })
            .collect(),
        manifest: &effective,
    };
    let text = toml::to_string(&cfg).map_err(|e| Error::Format(e.to_string()))?;
    write_text(&dir.join(RUN_CONFIG), &text)
}

pub fn write_metrics(path: impl AsRef<Path>, metrics: &[(&str, f64)]) -> Result<()> {
    let mut s = String::from("metric\tvalue\n");
    for (k, v) in metrics {
        writeln!(s, "{k}\t{v}").expect("write to String");
    }
    write_text(path.as_ref(), &s)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "metric\tvalue")) => {}
        _ => return Err(Error::Parse { line: 1, msg: "expected header metric<TAB>value".into() }),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let (k, v) = l.split_once('\t').ok_or(Error::Parse {
                line: n + 1,
                msg: "expected metric<TAB>value".into(),
            })?;
            let v = v.parse().map_err(|_| Error::Parse { line: n + 1, msg: format!("bad value '{v}'") })?;
            Ok((k.to_string(), v))
        })
        .collect()
}

const LATENT_HEADER: &str = "sample\ttype\tdim\tlatent\tnorm_product\tnormalized";

/// One row per (sample, measurement type, dimension).
pub fn write_measurement_latents(path: impl AsRef<Path>, summary: &PosteriorSummary) -> Result<()> {
    let mut s = String::from(LATENT_HEADER);
    s.push('\n');
    for (n, (t, norms)) in summary
        .measurement_latents
        .iter()
        .zip(&summary.norm_products)
        .enumerate()
    {
        for k in 0..t.nrows() {
            for (d, &norm) in norms.iter().enumerate() {
                let v = t[(k, d)];
                writeln!(s, "{n}\t{k}\t{d}\t{v}\t{norm}\t{}", v * norm).expect("write to String");
            }
        }
    }
    write_text(path.as_ref(), &s)
}

/// Per-sample measurement latents and norm products, as written by
/// [`write_measurement_latents`].
pub fn read_measurement_latents(path: impl AsRef<Path>) -> Result<(Vec<DenseMatrix>, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(LATENT_HEADER) {
        return Err(Error::Parse { line: 1, msg: format!("expected header '{LATENT_HEADER}'") });
    }
    let mut rows: Vec<(usize, usize, usize, f64, f64)> = Vec::new();
    for (n, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split('\t').collect();
        let err = || Error::Parse { line: n + 1, msg: format!("malformed row '{l}'") };
        if f.len() != 6 {
            return Err(err());
        }
        rows.push((
            f[0].parse().map_err(|_| err())?,
            f[1].parse().map_err(|_| err())?,
            f[2].parse().map_err(|_| err())?,
            f[3].parse().map_err(|_| err())?,
            f[4].parse().map_err(|_| err())?,
        ));
    }
    let n_samples = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let n_types = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let d = rows.iter().map(|r| r.2 + 1).max().unwrap_or(0);
    if rows.len() != n_samples * n_types * d {
        return Err(Error::Format(format!(
            "{}: expected {} rows for {n_samples} samples × {n_types} types × {d} dims, got {}",
            path.display(),
            n_samples * n_types * d,
            rows.len()
        )));
    }
    let mut latents = vec![DenseMatrix::zeros(n_types, d); n_samples];
    let mut norms = vec![vec![0.0; d]; n_samples];
    for (s, k, dim, v, norm) in rows {
        latents[s][(k, dim)] = v;
        norms[s][dim] = norm;
    }
    Ok((latents, norms))
}

pub fn load_snapshot(dir: impl AsRef<Path>) -> Result<PosteriorSnapshot> {
    let path = dir.as_ref().join(POSTERIOR);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_divergent_dims(path: impl AsRef<Path>, dims: &DivergentDims) -> Result<()> {
    let mut s = String::from("dim\tmean_abs_delta\tselected\n");
    for (d, (m, sel)) in dims.mean_abs_delta.iter().zip(&dims.mask).enumerate() {
        writeln!(s, "{d}\t{}\t{}", format_sig6(*m), u8::from(*sel)).expect("write to String");
    }
    write_text(path.as_ref(), &s)
}

pub fn read_divergent_mask(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| match l.rsplit('\t').next() {
            Some("1") => Ok(true),
            Some("0") => Ok(false),
            _ => Err(Error::Parse { line: n + 1, msg: format!("malformed row '{l}'") }),
        })
        .collect()
}

/// Full ranking, one protein per line, highest 0.95-quantile first.
pub fn write_chat_ranking(path: impl AsRef<Path>, ranking: &ProteinRanking) -> Result<()> {
    let mut s = String::from("rank\tprotein\tq95\n");
    for (r, (p, q)) in ranking.all.iter().enumerate() {
        writeln!(s, "{}\t{p}\t{}", r + 1, format_sig6(*q)).expect("write to String");
    }
    write_text(path.as_ref(), &s)
}

pub fn read_chat_ranking(path: impl AsRef<Path>) -> Result<Vec<(usize, f64)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            let err = || Error::Parse { line: n + 1, msg: format!("malformed row '{l}'") };
            if f.len() != 3 {
                return Err(err());
            }
            Ok((f[1].parse().map_err(|_| err())?, f[2].parse().map_err(|_| err())?))
        })
        .collect()
}

pub fn write_protein_lists(path: impl AsRef<Path>, ranking: &ProteinRanking) -> Result<()> {
    let mut s = String::from("list\trank\tprotein\tq95\n");
    for (r, (p, q)) in ranking.top.iter().enumerate() {
        writeln!(s, "top\t{}\t{p}\t{}", r + 1, format_sig6(*q)).expect("write to String");
    }
    let offset = ranking.all.len() - ranking.bottom.len();
    for (r, (p, q)) in ranking.bottom.iter().enumerate() {
        writeln!(s, "bottom\t{}\t{p}\t{}", offset + r + 1, format_sig6(*q)).expect("write to String");
    }
    write_text(path.as_ref(), &s)
}

/// Output directory named by a manifest, or `fallback`.
pub fn output_dir(manifest: &RunManifest, fallback: Option<PathBuf>) -> Result<PathBuf> {
    fallback
        .or_else(|| manifest.out.clone())
        .ok_or_else(|| Error::InvalidArgument("no output directory (use --out or set `out`)".into()))
}
