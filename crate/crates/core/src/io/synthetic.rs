//! Synthetic tensors drawn forward from the model, with known ground truth.
//!
//! Mode 0 ("compound") optionally carries binary features built from a set of
//! prototype fingerprints; its latent vectors are `β·x_i` plus Gaussian noise.
//! Other modes draw latent vectors directly. For 3-mode tensors the last mode
//! holds measurement types: slice 1 equals slice 0 except on `offset_dims`
//! planted latent dimensions, and only "competitive" proteins (mode 1) are
//! active on those dimensions, so the slice difference is confined to them.

use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::io::manifest::{RunManifest, SideInfoEntry};
use crate::io::matrix_market::write_matrix_market;
use crate::io::tensor::write_tensor;
use crate::model::{ModeData, ObservationSet};
use crate::rng::{Purpose, RngStreams};
use crate::sampler::SamplerConfig;
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    pub n_features: usize,
    pub n_prototypes: usize,
    /// Fraction of features set in each prototype.
    pub prototype_density: f64,
    /// Probability that a prototype bit survives in a compound.
    pub keep_prob: f64,
    /// Density of extra random bits per compound.
    pub extra_density: f64,
    /// Standard deviation of the part of each latent not explained by features.
    pub latent_noise_sd: f64,
    /// Target standard deviation of `β·x` per latent dimension.
    pub signal_sd: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            n_features: 200,
            n_prototypes: 8,
            prototype_density: 0.05,
            keep_prob: 0.97,
            extra_density: 0.002,
            latent_noise_sd: 0.1,
            signal_sd: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub mode_dims: Vec<usize>,
    /// True latent dimension.
    pub num_latent: usize,
    pub noise_sd: f64,
    /// Features for mode 0.
    pub features: Option<FeatureSpec>,
    /// Latent standard deviation for modes without features (mode 1, and
    /// mode 0 when it has no features).
    pub latent_sd: f64,
    /// Mean and standard deviation of measurement-mode latents.
    pub measurement_mean: f64,
    pub measurement_sd: f64,
    /// Observation probability per measurement slice (last mode). A single
    /// value applies to all slices.
    pub observe_fraction: Vec<f64>,
    /// Fraction of observed slice-`holdout_slice` cells of warm entities moved
    /// to the test set.
    pub holdout_fraction: f64,
    pub holdout_slice: usize,
    /// Fraction of mode-0 entities whose cells are all withheld (their
    /// `holdout_slice` cells go to the test set, the rest are dropped).
    pub cold_start_fraction: f64,
    /// Number of latent dimensions carrying a planted slice offset.
    pub offset_dims: usize,
    pub offset_scale: f64,
    /// Fraction of mode-1 entities active on the planted dimensions.
    pub competitive_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            mode_dims: vec![60, 12, 2],
            num_latent: 3,
            noise_sd: 0.3,
            features: Some(FeatureSpec::default()),
            latent_sd: 0.8,
            measurement_mean: 1.0,
            measurement_sd: 0.3,
            observe_fraction: vec![0.5, 0.3],
            holdout_fraction: 0.2,
            holdout_slice: 0,
            cold_start_fraction: 0.1,
            offset_dims: 1,
            offset_scale: 1.5,
            competitive_fraction: 0.5,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic spec: {m}")));
        if self.mode_dims.len() < 2 || self.mode_dims.contains(&0) {
            return bad("need at least 2 non-empty modes");
        }
        if self.num_latent == 0 {
            return bad("num_latent must be >= 1");
        }
        if self.offset_dims > self.num_latent {
            return bad("offset_dims exceeds num_latent");
        }
        if self.offset_dims > 0 && (self.mode_dims.len() != 3 || self.mode_dims[2] < 2) {
            return bad("planted offsets need a 3-mode tensor with at least 2 measurement types");
        }
        if self.observe_fraction.is_empty()
            || self.observe_fraction.iter().any(|f| !(0.0..=1.0).contains(f))
        {
            return bad("observe_fraction entries must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.holdout_fraction)
            || !(0.0..=1.0).contains(&self.cold_start_fraction)
            || !(0.0..=1.0).contains(&self.competitive_fraction)
        {
            return bad("fractions must lie in [0, 1]");
        }
        if self.noise_sd < 0.0 {
            return bad("noise_sd must be non-negative");
        }
        if let Some(f) = &self.features {
            if f.n_features == 0 || f.n_prototypes == 0 {
                return bad("features need n_features and n_prototypes >= 1");
            }
        }
        Ok(())
    }

    fn observe_prob(&self, slice: usize) -> f64 {
        *self
            .observe_fraction
            .get(slice)
            .unwrap_or_else(|| self.observe_fraction.last().expect("validated non-empty"))
    }

    fn last_mode(&self) -> usize {
        self.mode_dims.len() - 1
    }
}

/// Generating parameters, kept for oracle checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Per mode, `N × D_true`.
    pub latents: Vec<DenseMatrix>,
    /// `D_true × F` link matrix of mode 0.
    pub beta: Option<DenseMatrix>,
    pub offset_dims: Vec<usize>,
    /// Per mode-1 entity: active on the planted dimensions.
    pub competitive: Vec<bool>,
    /// Mode-0 entities with no training cells.
    pub cold_start: Vec<usize>,
    pub noise_sd: f64,
}

impl GroundTruth {
    /// Noise-free value of a cell.
    pub fn value(&self, idx: &[usize]) -> f64 {
        let d = self.latents[0].ncols();
        (0..d)
            .map(|k| idx.iter().zip(&self.latents).map(|(&i, l)| l[(i, k)]).product::<f64>())
            .sum()
    }

    /// Planted slice-1 minus slice-0 difference of pair `(i, j)`.
    pub fn planted_difference(&self, i: usize, j: usize) -> f64 {
        let t = &self.latents[2];
        self.offset_dims
            .iter()
            .map(|&k| self.latents[0][(i, k)] * self.latents[1][(j, k)] * (t[(1, k)] - t[(0, k)]))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: ObservationSet,
    pub test: ObservationSet,
    pub modes: Vec<ModeData>,
    pub truth: GroundTruth,
}

fn prototype_features(f: &FeatureSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<SparseMatrix> {
    let n_on = ((f.prototype_density * f.n_features as f64).round() as usize).clamp(1, f.n_features);
    let all: Vec<usize> = (0..f.n_features).collect();
    let prototypes: Vec<Vec<usize>> = (0..f.n_prototypes)
        .map(|_| {
            let mut bits: Vec<usize> = all.choose_multiple(rng, n_on).copied().collect();
            bits.sort_unstable();
            bits
        })
        .collect();
    let mut triplets = Vec::new();
    for i in 0..n {
        let proto = &prototypes[rng.random_range(0..f.n_prototypes)];
        let mut bits: Vec<usize> = proto.iter().copied().filter(|_| rng.random::<f64>() < f.keep_prob).collect();
        for c in 0..f.n_features {
            if rng.random::<f64>() < f.extra_density {
                bits.push(c);
            }
        }
        bits.sort_unstable();
        bits.dedup();
        triplets.extend(bits.into_iter().map(|c| (i, c, 1.0)));
    }
    SparseMatrix::from_triplets(n, f.n_features, &triplets)
}

fn normal_matrix(n: usize, d: usize, mean: f64, sd: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let dist = Normal::new(mean, sd.max(0.0)).expect("finite normal parameters");
    DenseMatrix::from_fn(n, d, |_, _| dist.sample(rng))
}

/// Draws a synthetic dataset; identical specs give identical datasets.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let streams = RngStreams::new(spec.seed);
    let mut rng = streams.stream(Purpose::Synthetic, 0, 0, 0);
    let d = spec.num_latent;
    let dims = &spec.mode_dims;
    let n_modes = dims.len();

    let mut latents = Vec::with_capacity(n_modes);
    let mut modes = Vec::with_capacity(n_modes);
    let mut beta_true = None;

    // mode 0
    match &spec.features {
        Some(f) => {
            let x = prototype_features(f, dims[0], &mut rng)?;
            let mean_nnz = (x.nnz() as f64 / dims[0] as f64).max(1.0);
            let beta = normal_matrix(d, f.n_features, 0.0, f.signal_sd / mean_nnz.sqrt(), &mut rng);
            let mut c = crate::model::link_product(&x, &beta)?;
            for v in c.as_mut_slice() {
                *v += f.latent_noise_sd * rng.sample::<f64, _>(StandardNormal);
            }
            latents.push(c);
            modes.push(ModeData::with_side_info("mode0", x));
            beta_true = Some(beta);
        }
        None => {
            latents.push(normal_matrix(dims[0], d, 0.0, spec.latent_sd, &mut rng));
            modes.push(ModeData::new("mode0", dims[0]));
        }
    }
    for m in 1..n_modes {
        let latent = if n_modes == 3 && m == 2 {
            normal_matrix(dims[m], d, spec.measurement_mean, spec.measurement_sd, &mut rng)
        } else {
            normal_matrix(dims[m], d, 0.0, spec.latent_sd, &mut rng)
        };
        latents.push(latent);
        modes.push(ModeData::new(format!("mode{m}"), dims[m]));
    }

    let mut offset_dims = Vec::new();
    let mut competitive = vec![false; dims[1]];
    if n_modes == 3 && dims[2] >= 2 {
        let mut perm: Vec<usize> = (0..d).collect();
        perm.shuffle(&mut rng);
        offset_dims = perm[..spec.offset_dims].to_vec();
        offset_dims.sort_unstable();
        let t = &mut latents[2];
        for k in 0..d {
            t[(1, k)] = t[(0, k)];
        }
        for &k in &offset_dims {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            t[(1, k)] = t[(0, k)] + sign * spec.offset_scale;
        }
        if !offset_dims.is_empty() {
            let n_comp = (spec.competitive_fraction * dims[1] as f64).round() as usize;
            let mut proteins: Vec<usize> = (0..dims[1]).collect();
            proteins.shuffle(&mut rng);
            for &j in &proteins[..n_comp] {
                competitive[j] = true;
            }
            let p = &mut latents[1];
            for j in (0..dims[1]).filter(|&j| !competitive[j]) {
                for &k in &offset_dims {
                    p[(j, k)] = 0.0;
                }
            }
        }
    }

    let mut entities: Vec<usize> = (0..dims[0]).collect();
    entities.shuffle(&mut rng);
    let n_cold = (spec.cold_start_fraction * dims[0] as f64).round() as usize;
    let mut cold_start = entities[..n_cold].to_vec();
    cold_start.sort_unstable();
    let mut is_cold = vec![false; dims[0]];
    cold_start.iter().for_each(|&i| is_cold[i] = true);

    let truth = GroundTruth {
        latents,
        beta: beta_true,
        offset_dims,
        competitive,
        cold_start,
        noise_sd: spec.noise_sd,
    };

    let noise = Normal::new(0.0, spec.noise_sd).expect("non-negative noise sd");
    let last = spec.last_mode();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let total: usize = dims.iter().product();
    let mut idx = vec![0usize; n_modes];
    for _ in 0..total {
        let slice = idx[last];
        if rng.random::<f64>() < spec.observe_prob(slice) {
            let y = truth.value(&idx) + noise.sample(&mut rng);
            let in_holdout_slice = slice == spec.holdout_slice;
            if is_cold[idx[0]] {
                if in_holdout_slice {
                    test.push((idx.clone(), y));
                }
            } else if in_holdout_slice && rng.random::<f64>() < spec.holdout_fraction {
                test.push((idx.clone(), y));
            } else {
                train.push((idx.clone(), y));
            }
        }
        // odometer over the index tuple, last mode fastest
        for m in (0..n_modes).rev() {
            idx[m] += 1;
            if idx[m] < dims[m] {
                break;
            }
            idx[m] = 0;
        }
    }

    Ok(SyntheticDataset {
        train: ObservationSet::new(dims.clone(), train)?,
        test: ObservationSet::new(dims.clone(), test)?,
        modes,
        truth,
    })
}

/// File names written by [`write_synthetic`].
pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const FEATURES_FILE: &str = "mode0-features.mtx";
pub const TRUTH_FILE: &str = "truth.json";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Writes the dataset plus a run manifest that trains on it with `sampler`.
pub fn write_synthetic(
    dir: impl AsRef<Path>,
    data: &SyntheticDataset,
    sampler: &SamplerConfig,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tensor(dir.join(TRAIN_FILE), &data.train)?;
    write_tensor(dir.join(TEST_FILE), &data.test)?;
    let mut side_info = Vec::new();
    if let Some(x) = &data.modes[0].side_info {
        write_matrix_market(dir.join(FEATURES_FILE), x)?;
        side_info.push(SideInfoEntry {
            mode: 0,
            path: PathBuf::from(FEATURES_FILE),
        });
    }
    let truth_path = dir.join(TRUTH_FILE);
    let json = serde_json::to_string(&data.truth).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&truth_path, json).map_err(|e| Error::io(&truth_path, e))?;

    let manifest = RunManifest {
        tensor: PathBuf::from(TRAIN_FILE),
        test: (!data.test.is_empty()).then(|| PathBuf::from(TEST_FILE)),
        side_info,
        mode_dims: Some(data.train.mode_dims().to_vec()),
        holdout: None,
        out: Some(PathBuf::from("run")),
        sampler: sampler.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    manifest.save(&path)?;
    Ok(path)
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
