//! Scale-adaptive Gaussian blur and unit-cell consensus reconstruction.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor2;
use crate::error::{Error, Result};
use crate::pattern::{tile_to, BinaryPattern, ContinuousPattern, Grid};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Half-sample symmetric: `d c b a | a b c d | d c b a`.
    #[default]
    Reflect,
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurConfig {
    pub kernel_size: usize,
    pub sigma: f64,
    pub boundary: Boundary,
}

impl BlurConfig {
    /// Kernel of size `k` with `sigma = max(k / 6, 0.8)`.
    pub fn for_kernel(kernel_size: usize, boundary: Boundary) -> Result<Self> {
        let cfg = BlurConfig {
            kernel_size,
            sigma: (kernel_size as f64 / 6.0).max(0.8),
            boundary,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Contract(format!("kernel size {} must be odd and >= 1", self.kernel_size)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Contract(format!("sigma {} must be positive", self.sigma)));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D kernel is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.kernel_size / 2) as f64;
        let raw: Vec<f64> = (0..self.kernel_size)
            .map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

/// `⌈min(H/p_h, W/p_w) / 10⌉`, bumped to the next odd integer.
pub fn blur_kernel_size(height: usize, width: usize, p_h: usize, p_w: usize) -> Result<usize> {
    if height == 0 || width == 0 || p_h == 0 || p_w == 0 {
        return Err(Error::Contract(format!(
            "blur_kernel_size needs positive arguments, got ({height}, {width}, {p_h}, {p_w})"
        )));
    }
    // min(H/p_h, W/p_w) as an exact fraction num/den.
    let (num, den) = if (height as u128) * (p_w as u128) <= (width as u128) * (p_h as u128) {
        (height as u128, p_h as u128)
    } else {
        (width as u128, p_w as u128)
    };
    let k = ((num + 10 * den - 1) / (10 * den)).max(1) as usize;
    Ok(if k % 2 == 0 { k + 1 } else { k })
}

/// Largest odd value not above `min(H, W)`, warning when `k` exceeds it.
pub fn clamp_kernel(k: usize, height: usize, width: usize) -> usize {
    let side = height.min(width).max(1);
    let cap = if side % 2 == 0 { side - 1 } else { side };
    if k > cap {
        log::warn!("blur kernel {k} exceeds image side {side}; clamped to {cap}");
        cap
    } else {
        k
    }
}

fn source_index(i: isize, n: usize, boundary: Boundary) -> usize {
    let n = n as isize;
    match boundary {
        Boundary::Periodic => i.rem_euclid(n) as usize,
        Boundary::Reflect => {
            let j = i.rem_euclid(2 * n);
            (if j < n { j } else { 2 * n - 1 - j }) as usize
        }
    }
}

/// `n × n` matrix `M` with `(M x)[i] = Σ_t taps[t] · x[src(i + t − r)]`.
pub fn blur_matrix(n: usize, cfg: &BlurConfig) -> Tensor2 {
    let taps = cfg.taps();
    let r = (taps.len() / 2) as isize;
    let mut m = Tensor2::zeros(n, n);
    for i in 0..n {
        for (t, &g) in taps.iter().enumerate() {
            let src = source_index(i as isize + t as isize - r, n, cfg.boundary);
            m.set(i, src, m.get(i, src) + g);
        }
    }
    m
}

/// Separable Gaussian blur; `k` is clamped to the image first.
pub fn gaussian_blur(img: &ContinuousPattern, cfg: &BlurConfig) -> Result<ContinuousPattern> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    let k = clamp_kernel(cfg.kernel_size, h, w);
    if k == 1 {
        return Ok(img.clone());
    }
    let cfg = BlurConfig { kernel_size: k, ..*cfg };
    let taps = cfg.taps();
    let r = (k / 2) as isize;

    let mut rows = ContinuousPattern::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for (t, &g) in taps.iter().enumerate() {
                s += g * img.get(i, source_index(j as isize + t as isize - r, w, cfg.boundary));
            }
            rows.set(i, j, s);
        }
    }
    let mut out = ContinuousPattern::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for (t, &g) in taps.iter().enumerate() {
                s += g * rows.get(source_index(i as isize + t as isize - r, h, cfg.boundary), j);
            }
            out.set(i, j, s);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusMode {
    /// Binary grids only; ties go to foreground.
    #[default]
    Majority,
    /// Lower median for an even tile count.
    Median,
}

/// Consensus cell plus the top-left region it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct Consensus<T> {
    pub cell: Grid<T>,
    pub used_rows: usize,
    pub used_cols: usize,
}

impl<T> Consensus<T> {
    pub fn cropped(&self, height: usize, width: usize) -> bool {
        self.used_rows != height || self.used_cols != width
    }
}

fn tile_geometry<T: Copy>(img: &Grid<T>, p_h: usize, p_w: usize) -> Result<(usize, usize)> {
    if p_h == 0 || p_w == 0 {
        return Err(Error::Contract(format!("unit counts must be positive, got ({p_h}, {p_w})")));
    }
    if p_h > img.height() || p_w > img.width() {
        return Err(Error::Contract(format!(
            "unit counts ({p_h}, {p_w}) exceed image {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok((img.height() / p_h, img.width() / p_w))
}

/// Pixel-wise majority across the `p_h × p_w` tiles.
pub fn consensus_binary(img: &BinaryPattern, p_h: usize, p_w: usize) -> Result<Consensus<u8>> {
    let (ch, cw) = tile_geometry(img, p_h, p_w)?;
    let n = p_h * p_w;
    let mut cell = BinaryPattern::zeros(ch, cw);
    for i in 0..ch {
        for j in 0..cw {
            let mut count = 0;
            for a in 0..p_h {
                for b in 0..p_w {
                    count += img.get(a * ch + i, b * cw + j) as usize;
                }
            }
            cell.set(i, j, u8::from(2 * count >= n));
        }
    }
    Ok(Consensus {
        cell,
        used_rows: ch * p_h,
        used_cols: cw * p_w,
    })
}

/// Pixel-wise consensus on a real-valued image.
///
/// `Majority` requires every pixel to be exactly 0 or 1.
pub fn consensus_continuous(
    img: &ContinuousPattern,
    p_h: usize,
    p_w: usize,
    mode: ConsensusMode,
) -> Result<Consensus<f64>> {
    let (ch, cw) = tile_geometry(img, p_h, p_w)?;
    if mode == ConsensusMode::Majority {
        if img.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract("majority consensus needs a 0/1 image".into()));
        }
        let c = consensus_binary(&img.map(|v| v as u8), p_h, p_w)?;
        return Ok(Consensus {
            cell: c.cell.to_continuous(),
            used_rows: c.used_rows,
            used_cols: c.used_cols,
        });
    }
    let n = p_h * p_w;
    let mut cell = ContinuousPattern::zeros(ch, cw);
    let mut values = Vec::with_capacity(n);
    for i in 0..ch {
        for j in 0..cw {
            values.clear();
            for a in 0..p_h {
                for b in 0..p_w {
                    values.push(img.get(a * ch + i, b * cw + j));
                }
            }
            values.sort_by(f64::total_cmp);
            cell.set(i, j, values[(n - 1) / 2]);
        }
    }
    Ok(Consensus {
        cell,
        used_rows: ch * p_h,
        used_cols: cw * p_w,
    })
}

/// Periodic extension of `cell` over the full `height × width` canvas.
pub fn retile_reconstruction<T: Copy>(cell: &Grid<T>, height: usize, width: usize) -> Grid<T> {
    tile_to(cell, height, width)
}

/// `retile(consensus(img))` on a binary image.
pub fn reconstruct_binary(img: &BinaryPattern, p_h: usize, p_w: usize) -> Result<BinaryPattern> {
    let c = consensus_binary(img, p_h, p_w)?;
    Ok(retile_reconstruction(&c.cell, img.height(), img.width()))
}
