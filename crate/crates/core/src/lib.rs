//! Structure-aware conditional generation of periodic binary patterns.
//!
//! The crate bundles everything the `repgan` pipeline needs: a small
//! reverse-mode differentiation engine, synthetic tiled datasets, FFT-based
//! repetition estimation, scale-adaptive blur and unit-cell consensus, the
//! conditional WGAN-GP trainer, surrogate-based evaluation and confidence
//! filtered augmentation.

pub mod alloc;
pub mod augment;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod gan;
pub mod guidance;

pub mod io;
pub mod pattern;
pub mod pipeline;
pub mod structure;

pub use error::{Error, Result};
