//! File formats, run manifests, run outputs and the synthetic generator.

pub mod manifest;
pub mod matrix_market;
pub mod output;
pub mod synthetic;
pub mod tensor;

pub use manifest::{load_manifest, prepare_run, HoldoutSpec, RunInputs, RunManifest, SideInfoEntry};
pub use matrix_market::{load_side_info, parse_matrix_market, write_matrix_market};
pub use synthetic::{gen_synthetic, GroundTruth, SyntheticDataset, SyntheticSpec};
pub use tensor::{
    format_sig6, load_tensor, parse_tensor, read_tensor_cells, write_predictions, write_tensor,
    TensorCells,
};
