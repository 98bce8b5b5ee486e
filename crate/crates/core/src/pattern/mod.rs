//! Binary pattern images, unit-cell rasterization and synthetic datasets.

pub mod dataset;
pub mod descriptors;
pub mod grid;
pub mod pgm;
pub mod raster;

pub use dataset::{
    flip_pixels, synth_dataset, write_dataset, Dataset, DatasetManifest, ImbalanceProfile, LabelRule,
    ManifestEntry, Sample, SynthConfig, TEST_MANIFEST, TRAIN_MANIFEST,
};
pub use descriptors::{compute_descriptors, DescriptorRecord};
pub use grid::{BinaryPattern, ContinuousPattern, Grid};
pub use raster::{render_unit_cell, tile, tile_to, Shape, UnitCellSpec};
