//! Tensor container, the `TBT1` binary file format and text model manifests.

mod file;
mod manifest;
mod tensor;

pub use file::{encoded_len, read_tensor, write_tensor, MAGIC};
pub use manifest::{load_manifest, save_manifest, Metadata, ModelManifest, MANIFEST_FILE};
pub use tensor::{DType, Tensor, TensorData};
