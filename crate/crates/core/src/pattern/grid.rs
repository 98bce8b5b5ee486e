use crate::error::{Error, Result};

/// Row-major `height × width` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Hard 0/1 image, 1 = foreground feature.
pub type BinaryPattern = Grid<u8>;

/// Real-valued image (generator range is `[-1, 1]`).
pub type ContinuousPattern = Grid<f64>;

impl<T: Copy> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.data[row * self.width + col] = v;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Circular shift: output `(i, j)` takes input `(i - dy, j - dx)`.
    pub fn roll(&self, dy: usize, dx: usize) -> Self {
        let (h, w) = (self.height, self.width);
        let mut out = self.clone();
        for i in 0..h {
            for j in 0..w {
                out.data[((i + dy) % h) * w + (j + dx) % w] = self.data[i * w + j];
            }
        }
        out
    }

    /// Top-left `rows × cols` window.
    pub fn crop(&self, rows: usize, cols: usize) -> Self {
        assert!(rows <= self.height && cols <= self.width);
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            data.extend_from_slice(&self.data[i * self.width..i * self.width + cols]);
        }
        Grid {
            height: rows,
            width: cols,
            data,
        }
    }
}

impl ContinuousPattern {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Contract(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Grid { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Grid::filled(height, width, 0.0)
    }

    /// `1` where the value is strictly positive.
    pub fn binarize(&self) -> BinaryPattern {
        self.map(|v| u8::from(v > 0.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

impl BinaryPattern {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Contract(format!(
                "image {height}x{width} needs {} pixels, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Contract("binary pixels must be 0 or 1".into()));
        }
        Ok(Grid { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Grid::filled(height, width, 0)
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_continuous(&self) -> ContinuousPattern {
        self.map(f64::from)
    }

    /// `{0, 1} → {-1, +1}`, the generator's value range.
    pub fn to_signed(&self) -> ContinuousPattern {
        self.map(|v| if v == 1 { 1.0 } else { -1.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary_pixels() {
        assert!(BinaryPattern::new(1, 2, vec![0, 2]).is_err());
        assert!(BinaryPattern::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn roll_wraps() {
        let g = BinaryPattern::new(2, 3, vec![1, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(g.roll(1, 2).get(1, 2), 1);
        assert_eq!(g.roll(2, 3), g);
    }

    #[test]
    fn binarize_at_zero() {
        let c = ContinuousPattern::new(1, 3, vec![-0.5, 0.0, 0.1]).unwrap();
        assert_eq!(c.binarize().data(), &[0, 0, 1]);
    }
}
