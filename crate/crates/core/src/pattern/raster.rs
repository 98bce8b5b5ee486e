use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::BinaryPattern;
use crate::error::{Error, Result};

/// Primitive shape in cell coordinates (pixel `(i, j)` has its center at
/// `(x, y) = (j + 0.5, i + 0.5)`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Circle { cx: f64, cy: f64, radius: f64 },
    /// Covers `[cx - w/2, cx + w/2) × [cy - h/2, cy + h/2)`.
    Rectangle { cx: f64, cy: f64, width: f64, height: f64 },
    /// Isosceles, apex up, base along the bottom edge of its box.
    Triangle { cx: f64, cy: f64, base: f64, height: f64 },
}

impl Shape {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Circle { cx, cy, radius } => (cx - radius, cx + radius, cy - radius, cy + radius),
            Shape::Rectangle { cx, cy, width, height } | Shape::Triangle { cx, cy, base: width, height } => {
                (cx - width / 2.0, cx + width / 2.0, cy - height / 2.0, cy + height / 2.0)
            }
        }
    }

    fn size_ok(&self) -> bool {
        match *self {
            Shape::Circle { radius, .. } => radius > 0.0,
            Shape::Rectangle { width, height, .. } => width > 0.0 && height > 0.0,
            Shape::Triangle { base, height, .. } => base > 0.0 && height > 0.0,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Circle { cx, cy, radius } => (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius,
            Shape::Rectangle { cx, cy, width, height } => {
                let (x0, y0) = (cx - width / 2.0, cy - height / 2.0);
                x >= x0 && x < x0 + width && y >= y0 && y < y0 + height
            }
            Shape::Triangle { cx, cy, base, height } => {
                let top = cy - height / 2.0;
                let bottom = cy + height / 2.0;
                if y < top || y > bottom {
                    return false;
                }
                let half = base / 2.0 * (y - top) / height;
                (x - cx).abs() <= half
            }
        }
    }
}

/// A square unit cell made of primitive shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitCellSpec {
    pub cell: usize,
    pub shapes: Vec<Shape>,
    pub seed: u64,
}

impl UnitCellSpec {
    /// Draws 1 to 3 shapes with half-pixel quantized geometry that fit in the cell.
    pub fn random(cell: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cell as f64;
        let n = rng.gen_range(1..=3);
        let mut shapes = Vec::with_capacity(n);
        // Center on the half-pixel lattice so that the box stays inside [0, c].
        let center = |rng: &mut ChaCha8Rng, extent: f64| -> f64 {
            let lo = (extent / 2.0 * 2.0).ceil() / 2.0;
            let hi = ((c - extent / 2.0) * 2.0).floor() / 2.0;
            let steps = ((hi - lo) * 2.0).round() as i64;
            lo + rng.gen_range(0..=steps.max(0)) as f64 / 2.0
        };
        for _ in 0..n {
            let shape = match rng.gen_range(0..3) {
                0 => {
                    let max_r2 = (cell as i64).max(2);
                    let radius = rng.gen_range(2..=max_r2) as f64 / 2.0;
                    let cx = center(&mut rng, 2.0 * radius);
                    let cy = center(&mut rng, 2.0 * radius);
                    Shape::Circle { cx, cy, radius }
                }
                1 => {
                    let width = rng.gen_range(1..=cell) as f64;
                    let height = rng.gen_range(1..=cell) as f64;
                    let cx = center(&mut rng, width);
                    let cy = center(&mut rng, height);
                    Shape::Rectangle { cx, cy, width, height }
                }
                _ => {
                    let base = rng.gen_range(2..=cell.max(2)) as f64;
                    let height = rng.gen_range(2..=cell.max(2)) as f64;
                    let cx = center(&mut rng, base);
                    let cy = center(&mut rng, height);
                    Shape::Triangle { cx, cy, base, height }
                }
            };
            shapes.push(shape);
        }
        UnitCellSpec { cell, shapes, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell < 4 {
            return Err(Error::Spec(format!("cell side {} is below 4", self.cell)));
        }
        let c = self.cell as f64;
        for (i, s) in self.shapes.iter().enumerate() {
            if !s.size_ok() {
                return Err(Error::Spec(format!("shape {i} has non-positive size")));
            }
            let (x0, x1, y0, y1) = s.bounds();
            if x0 < 0.0 || y0 < 0.0 || x1 > c || y1 > c {
                return Err(Error::Spec(format!("shape {i} extends outside the {c}x{c} cell")));
            }
        }
        Ok(())
    }
}

/// Rasterizes the union of the cell's shapes by pixel-center sampling.
pub fn render_unit_cell(spec: &UnitCellSpec) -> Result<BinaryPattern> {
    spec.validate()?;
    let c = spec.cell;
    let mut img = BinaryPattern::zeros(c, c);
    for i in 0..c {
        for j in 0..c {
            let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
            if spec.shapes.iter().any(|s| s.contains(x, y)) {
                img.set(i, j, 1);
            }
        }
    }
    Ok(img)
}

/// Repeats a cell `p` times along each axis.
pub fn tile(cell: &BinaryPattern, p: usize) -> Result<BinaryPattern> {
    if p == 0 {
        return Err(Error::Contract("tile count must be >= 1".into()));
    }
    let h = cell.height().checked_mul(p);
    let w = cell.width().checked_mul(p);
    match (h, w) {
        (Some(h), Some(w)) if h.checked_mul(w).is_some() => Ok(tile_to(cell, h, w)),
        _ => Err(Error::Contract("tiled image size overflows".into())),
    }
}

/// Periodic extension of `cell` to an `height × width` image.
pub fn tile_to<T: Copy>(cell: &super::Grid<T>, height: usize, width: usize) -> super::Grid<T> {
    let (ch, cw) = (cell.height(), cell.width());
    let mut out = super::Grid::filled(height, width, cell.get(0, 0));
    for i in 0..height {
        for j in 0..width {
            out.set(i, j, cell.get(i % ch, j % cw));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cell_is_blank() {
        let spec = UnitCellSpec { cell: 8, shapes: vec![], seed: 0 };
        assert_eq!(render_unit_cell(&spec).unwrap().foreground(), 0);
    }

    #[test]
    fn centered_rectangle_has_exact_area() {
        for (a, b) in [(4.0, 2.0), (3.0, 5.0), (8.0, 8.0), (1.0, 7.0)] {
            let spec = UnitCellSpec {
                cell: 8,
                shapes: vec![Shape::Rectangle { cx: 4.0, cy: 4.0, width: a, height: b }],
                seed: 0,
            };
            let img = render_unit_cell(&spec).unwrap();
            assert_eq!(img.foreground() as f64 / 64.0, a * b / 64.0);
        }
    }

    #[test]
    fn shape_outside_cell_is_rejected() {
        let spec = UnitCellSpec {
            cell: 8,
            shapes: vec![Shape::Circle { cx: 1.0, cy: 4.0, radius: 2.0 }],
            seed: 0,
        };
        assert!(matches!(render_unit_cell(&spec), Err(Error::Spec(_))));
        let small = UnitCellSpec { cell: 3, shapes: vec![], seed: 0 };
        assert!(render_unit_cell(&small).is_err());
    }

    #[test]
    fn random_specs_are_valid_and_deterministic() {
        for seed in 0..200 {
            for cell in [4, 8, 13, 32] {
                let a = UnitCellSpec::random(cell, seed);
                assert!(a.validate().is_ok(), "{a:?}");
                let b = UnitCellSpec::random(cell, seed);
                assert_eq!(render_unit_cell(&a).unwrap(), render_unit_cell(&b).unwrap());
            }
        }
    }

    #[test]
    fn tile_identity_and_lattice() {
        let spec = UnitCellSpec::random(8, 5);
        let cell = render_unit_cell(&spec).unwrap();
        assert_eq!(tile(&cell, 1).unwrap(), cell);

        let mut one_hot = BinaryPattern::zeros(4, 4);
        one_hot.set(1, 2, 1);
        let t = tile(&one_hot, 3).unwrap();
        assert_eq!(t.foreground(), 9);
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(t.get(1 + 4 * a, 2 + 4 * b), 1);
            }
        }
        assert!(tile(&cell, 0).is_err());
    }
}
