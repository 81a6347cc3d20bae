//! TOML run manifests.
//!
//! ```toml
//! tensor = "train.tsv"
//! test = "test.tsv"              # optional
//! mode_dims = [400, 50, 2]       # optional; defaults to observed extents
//! out = "run"                    # optional
//!
//! [[side_info]]
//! mode = 0
//! path = "mode0-features.mtx"
//!
//! [holdout]                      # optional random hold-out within one slice
//! mode = 2
//! index = 0
//! fraction = 0.2
//!
//! [sampler]
//! num_latent = 10
//! burn_in = 200
//! n_samples = 800
//! seed = 7
//! ```
//! Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::matrix_market::load_side_info;
use crate::io::tensor::read_tensor_cells;
use crate::model::{ModeData, ObservationSet};
use crate::rng::{Purpose, RngStreams};
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideInfoEntry {
    pub mode: usize,
    pub path: PathBuf,
}

/// Moves a random `fraction` of the cells with `index` in `mode` to the test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSpec {
    pub mode: usize,
    pub index: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tensor: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub side_info: Vec<SideInfoEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<HoldoutSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

impl RunManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Makes every path absolute relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.tensor);
        if let Some(t) = self.test.as_mut() {
            fix(t);
        }
        for s in &mut self.side_info {
            fix(&mut s.path);
        }
        if let Some(o) = self.out.as_mut() {
            fix(o);
        }
    }

    /// Checks that every referenced input file exists.
    pub fn validate_files(&self) -> Result<()> {
        let inputs = std::iter::once(&self.tensor)
            .chain(self.test.iter())
            .chain(self.side_info.iter().map(|s| &s.path));
        for p in inputs {
            if !p.is_file() {
                return Err(Error::InvalidArgument(format!(
                    "manifest references missing file {}",
                    p.display()
                )));
            }
        }
        if let Some(h) = &self.holdout {
            if !(0.0..=1.0).contains(&h.fraction) {
                return Err(Error::InvalidArgument("holdout fraction must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Reads a manifest and resolves its paths against its own directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<RunManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m = RunManifest::from_toml(&text)?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    m.resolve_paths(base);
    m.validate_files()?;
    Ok(m)
}

/// Everything `run_sampler` needs, loaded from a manifest.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub train: ObservationSet,
    pub test: Option<ObservationSet>,
    pub modes: Vec<ModeData>,
}

/// Loads the tensor, test cells and side info named by the manifest.
///
/// Mode dimensions are the manifest override when given; otherwise the
/// largest of the observed extents and the side-info row counts, so entities
/// with features but no cells are kept.
pub fn prepare_run(manifest: &RunManifest) -> Result<RunInputs> {
    let train_cells = read_tensor_cells(&manifest.tensor, true)?;
    if train_cells.is_empty() {
        return Err(Error::Format(format!(
            "{}: no observations",
            manifest.tensor.display()
        )));
    }
    let n_modes = train_cells.n_modes;
    let test_cells = manifest
        .test
        .as_ref()
        .map(|p| read_tensor_cells(p, true))
        .transpose()?;
    if let Some(t) = &test_cells {
        if t.n_modes != n_modes {
            return Err(Error::DimensionMismatch(format!(
                "test cells have {} modes, tensor has {n_modes}",
                t.n_modes
            )));
        }
    }
    let mut side = vec![None; n_modes];
    for entry in &manifest.side_info {
        if entry.mode >= n_modes {
            return Err(Error::InvalidArgument(format!(
                "side info for mode {} of a {n_modes}-mode tensor",
                entry.mode
            )));
        }
        if side[entry.mode].is_some() {
            return Err(Error::InvalidArgument(format!("mode {} has two side-info files", entry.mode)));
        }
        side[entry.mode] = Some(load_side_info(&entry.path)?);
    }

    let mut observed = train_cells.observed_dims();
    if let Some(t) = &test_cells {
        for (o, d) in observed.iter_mut().zip(t.observed_dims()) {
            *o = (*o).max(d);
        }
    }
    let dims = match &manifest.mode_dims {
        Some(dims) => {
            if dims.len() != n_modes {
                return Err(Error::DimensionMismatch(format!(
                    "mode_dims has {} entries for a {n_modes}-mode tensor",
                    dims.len()
                )));
            }
            if let Some(m) = (0..n_modes).find(|&m| dims[m] < observed[m]) {
                return Err(Error::IndexOutOfRange(format!(
                    "mode {m}: cells reach index {} but mode_dims is {}",
                    observed[m] - 1,
                    dims[m]
                )));
            }
            dims.clone()
        }
        None => observed
            .iter()
            .zip(&side)
            .map(|(&o, s)| s.as_ref().map_or(o, |x| o.max(x.nrows())))
            .collect(),
    };

    let modes: Vec<ModeData> = side
        .into_iter()
        .enumerate()
        .map(|(m, s)| ModeData {
            name: format!("mode{m}"),
            dim: dims[m],
            side_info: s,
        })
        .collect();
    for md in &modes {
        md.validate()?;
    }

    let mut train = train_cells.into_observations(dims.clone())?;
    let mut test = test_cells.map(|t| t.into_observations(dims.clone())).transpose()?;

    if let Some(h) = manifest.holdout {
        if h.mode >= n_modes || h.index >= dims[h.mode] {
            return Err(Error::InvalidArgument(format!(
                "holdout slice {}:{} out of range",
                h.mode, h.index
            )));
        }
        let mut rng = RngStreams::new(manifest.sampler.seed).stream(Purpose::Holdout, 0, 0, 0);
        let mut keep = Vec::new();
        let mut held = test.as_ref().map(ObservationSet::entries).unwrap_or_default();
        for (idx, v) in train.iter() {
            if idx[h.mode] == h.index && rng.random::<f64>() < h.fraction {
                held.push((idx.to_vec(), v));
            } else {
                keep.push((idx.to_vec(), v));
            }
        }
        train = ObservationSet::new(dims.clone(), keep)?;
        test = Some(ObservationSet::new(dims.clone(), held)?);
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training observations left".into()));
    }
    Ok(RunInputs { train, test, modes })
}
