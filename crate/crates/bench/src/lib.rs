//! Benchmark fixtures; the benches live in `benches/`.

use repgan_core::pattern::{render_unit_cell, tile, BinaryPattern, UnitCellSpec};

/// A clean tiling of `p × p` random cells of side `side / p`.
pub fn tiling(side: usize, p: usize, seed: u64) -> BinaryPattern {
    let cell = render_unit_cell(&UnitCellSpec::random(side / p, seed)).expect("valid cell");
    tile(&cell, p).expect("valid tiling")
}
