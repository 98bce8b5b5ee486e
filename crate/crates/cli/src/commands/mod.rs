pub mod analyze;
pub mod augment;
pub mod bench;
pub mod eval;
pub mod generate;
pub mod synth;
pub mod train;

use std::path::Path;

use repgan_core::pattern::{Dataset, DatasetManifest};
use repgan_core::Result;

/// Reads a manifest (directory or file) and every image it references.
pub fn load_dataset(path: &Path) -> Result<(DatasetManifest, Dataset)> {
    let manifest = DatasetManifest::load(path)?;
    let data = manifest.load_images()?;
    Ok((manifest, data))
}
