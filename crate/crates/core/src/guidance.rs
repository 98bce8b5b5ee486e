//! Repetition-scale estimation from the centered 2-D magnitude spectrum.
//!
//! The spectrum is projected onto both frequency axes, peaks are picked
//! against a dynamic threshold `τ = min + α·(max − min)`, irregularly spaced
//! peaks are dropped, and the modal spacing between consecutive peaks is the
//! number of unit cells along that axis.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::ContinuousPattern;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Indexed by column frequency; yields `p_w`.
    Horizontal,
    /// Indexed by row frequency; yields `p_h`.
    Vertical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyProfile {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl FrequencyProfile {
    /// Index of the zero-frequency bin after centering.
    pub fn center(&self) -> usize {
        self.values.len() / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeakDetectConfig {
    pub alpha_fft: f64,
    pub radius: usize,
    pub regularity_tolerance: f64,
}

impl Default for PeakDetectConfig {
    fn default() -> Self {
        PeakDetectConfig {
            alpha_fft: 0.5,
            radius: 1,
            regularity_tolerance: 0.25,
        }
    }
}

impl PeakDetectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_fft > 0.0 && self.alpha_fft < 1.0) {
            return Err(Error::config("peaks.alpha_fft", "must lie in (0, 1)"));
        }
        if self.radius < 1 {
            return Err(Error::config("peaks.radius", "must be >= 1"));
        }
        if !(self.regularity_tolerance >= 0.0) {
            return Err(Error::config("peaks.regularity_tolerance", "must be >= 0"));
        }
        Ok(())
    }
}

/// Centered `|DFT|` of the zero-mean, unit-max-abs normalized image.
pub fn magnitude_spectrum(img: &ContinuousPattern) -> Result<ContinuousPattern> {
    let (h, w) = (img.height(), img.width());
    if h < 2 || w < 2 {
        return Err(Error::Contract(format!("spectrum needs at least 2x2 pixels, got {h}x{w}")));
    }
    let mean = img.mean();
    let max_abs = img.data().iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let scale = img.data().iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if max_abs <= 1e-12 * scale {
        return Ok(ContinuousPattern::zeros(h, w));
    }
    let mut buf: Vec<Complex<f64>> = img
        .data()
        .iter()
        .map(|&v| Complex::new((v - mean) / max_abs, 0.0))
        .collect();

    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = buf[i * w + j];
        }
        col_fft.process(&mut col);
        for i in 0..h {
            buf[i * w + j] = col[i];
        }
    }

    let mut out = ContinuousPattern::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            out.set((i + h / 2) % h, (j + w / 2) % w, buf[i * w + j].norm());
        }
    }
    Ok(out)
}

/// Column sums (horizontal profile) and row sums (vertical profile).
pub fn project(spectrum: &ContinuousPattern) -> (FrequencyProfile, FrequencyProfile) {
    let (h, w) = (spectrum.height(), spectrum.width());
    let mut horizontal = vec![0.0; w];
    let mut vertical = vec![0.0; h];
    for i in 0..h {
        for j in 0..w {
            let v = spectrum.get(i, j);
            horizontal[j] += v;
            vertical[i] += v;
        }
    }
    (
        FrequencyProfile {
            axis: Axis::Horizontal,
            values: horizontal,
        },
        FrequencyProfile {
            axis: Axis::Vertical,
            values: vertical,
        },
    )
}

/// `min + alpha · (max − min)` over `values`.
pub fn threshold(values: &[f64], alpha: f64) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    lo + alpha * (hi - lo)
}

/// Most frequent value; ties go to the smaller one.
pub fn mode_smallest(values: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut counts = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0usize) += 1;
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|&(_, c)| c == best).map(|(v, _)| v)
}

fn gaps(positions: &[usize]) -> Vec<usize> {
    positions.windows(2).map(|w| w[1] - w[0]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakDetection {
    pub threshold: f64,
    /// Surviving peak bins, ascending; never contains the center bin.
    pub peaks: Vec<usize>,
}

/// Thresholded local maxima with the spacing-regularity filter applied.
///
/// The center bin is excluded both from the threshold statistics and from
/// the candidates, but serves as the lattice anchor when measuring gaps.
pub fn detect_peaks(profile: &FrequencyProfile, cfg: &PeakDetectConfig) -> Result<PeakDetection> {
    let v = &profile.values;
    if v.len() < 3 {
        return Err(Error::Contract(format!("profile of length {} is too short", v.len())));
    }
    let center = profile.center();
    let off_center: Vec<f64> = v
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != center)
        .map(|(_, &x)| x)
        .collect();
    let tau = threshold(&off_center, cfg.alpha_fft);
    let lo = off_center.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = off_center.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let peak = v.iter().cloned().fold(0.0, f64::max);
    if !(hi - lo > 1e-9 * peak) {
        return Ok(PeakDetection {
            threshold: tau,
            peaks: vec![],
        });
    }

    let r = cfg.radius;
    let candidates: Vec<usize> = (0..v.len())
        .filter(|&b| b != center && v[b] > tau)
        .filter(|&b| {
            let from = b.saturating_sub(r);
            let to = (b + r).min(v.len() - 1);
            (from..=to).all(|n| v[b] >= v[n])
        })
        .collect();

    let mut anchored = candidates.clone();
    anchored.push(center);
    anchored.sort_unstable();
    let g = gaps(&anchored);
    let Some(modal) = mode_smallest(g.iter().copied()) else {
        return Ok(PeakDetection {
            threshold: tau,
            peaks: candidates,
        });
    };
    let tol = cfg.regularity_tolerance * modal as f64;
    let irregular = |gap: usize| (gap as f64 - modal as f64).abs() > tol;
    let peaks = anchored
        .iter()
        .enumerate()
        .filter(|&(_, &b)| b != center)
        .filter(|&(k, _)| {
            let left = (k > 0).then(|| g[k - 1]);
            let right = (k < g.len()).then(|| g[k]);
            let neighbours: Vec<usize> = left.into_iter().chain(right).collect();
            !neighbours.iter().all(|&gap| irregular(gap))
        })
        .map(|(_, &b)| b)
        .collect();
    Ok(PeakDetection { threshold: tau, peaks })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisEstimate {
    pub threshold: f64,
    pub peaks: Vec<usize>,
    pub spacing: Option<usize>,
}

impl AxisEstimate {
    pub fn valid(&self) -> bool {
        self.spacing.is_some()
    }
}

/// Estimated unit-cell counts; `(1, 1)` whenever either axis failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitCellEstimate {
    pub p_h: usize,
    pub p_w: usize,
    pub valid: bool,
    pub vertical: AxisEstimate,
    pub horizontal: AxisEstimate,
}

fn axis_estimate(profile: &FrequencyProfile, cfg: &PeakDetectConfig) -> Result<AxisEstimate> {
    let det = detect_peaks(profile, cfg)?;
    let spacing = if det.peaks.len() >= 2 {
        let mut anchored = det.peaks.clone();
        anchored.push(profile.center());
        anchored.sort_unstable();
        mode_smallest(gaps(&anchored)).map(|s| s.clamp(1, profile.values.len()))
    } else {
        None
    };
    Ok(AxisEstimate {
        threshold: det.threshold,
        peaks: det.peaks,
        spacing,
    })
}

/// Full estimate together with the profiles it was derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralAnalysis {
    pub horizontal_profile: FrequencyProfile,
    pub vertical_profile: FrequencyProfile,
    pub estimate: UnitCellEstimate,
}

pub fn analyze(img: &ContinuousPattern, cfg: &PeakDetectConfig) -> Result<(SpectralAnalysis, ContinuousPattern)> {
    let spectrum = magnitude_spectrum(img)?;
    let (hp, vp) = project(&spectrum);
    let horizontal = axis_estimate(&hp, cfg)?;
    let vertical = axis_estimate(&vp, cfg)?;
    let valid = horizontal.valid() && vertical.valid();
    let (p_h, p_w) = if valid {
        (vertical.spacing.unwrap(), horizontal.spacing.unwrap())
    } else {
        (1, 1)
    };
    let estimate = UnitCellEstimate {
        p_h: p_h.min(img.height()),
        p_w: p_w.min(img.width()),
        valid,
        vertical,
        horizontal,
    };
    Ok((
        SpectralAnalysis {
            horizontal_profile: hp,
            vertical_profile: vp,
            estimate,
        },
        spectrum,
    ))
}

/// Number of repeating unit cells along each axis.
pub fn estimate_unit_count(img: &ContinuousPattern, cfg: &PeakDetectConfig) -> Result<UnitCellEstimate> {
    Ok(analyze(img, cfg)?.0.estimate)
}

/// Batch aggregate: the modal `(p_h, p_w, valid)` triple, ties toward smaller `p`.
pub fn batch_mode(estimates: &[UnitCellEstimate]) -> Option<(usize, usize, bool)> {
    let mut counts: BTreeMap<(usize, usize, bool), usize> = BTreeMap::new();
    for e in estimates {
        *counts.entry((e.p_h, e.p_w, e.valid)).or_insert(0) += 1;
    }
    let best = counts.values().copied().max()?;
    // BTreeMap iterates keys ascending, so the first hit is the smallest p.
    counts.into_iter().find(|&(_, c)| c == best).map(|(k, _)| k)
}

/// Log-magnitude rendering for inspection.
pub fn log_spectrum(spectrum: &ContinuousPattern) -> ContinuousPattern {
    spectrum.map(|v| (1.0 + v).ln())
}

/// Independent period estimate from circular autocorrelation, per axis.
///
/// The period is the smallest non-zero lag that is a local maximum of the
/// correlation and comes within `5%` of the lag-0 energy of the best
/// non-zero lag; the unit count is
/// `side / period` rounded to the nearest integer.
pub fn autocorrelation_period_oracle(img: &ContinuousPattern) -> (usize, usize) {
    let (h, w) = (img.height(), img.width());
    let mean = img.mean();
    let x: Vec<f64> = img.data().iter().map(|v| v - mean).collect();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy <= 1e-12 * (h * w) as f64 {
        return (1, 1);
    }
    let along = |lag_h: usize, lag_w: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..h {
            for j in 0..w {
                s += x[i * w + j] * x[((i + lag_h) % h) * w + (j + lag_w) % w];
            }
        }
        s
    };
    let pick = |side: usize, corr: &dyn Fn(usize) -> f64| -> usize {
        if side < 2 {
            return 1;
        }
        let r: Vec<f64> = (1..side).map(corr).collect();
        let best = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if best <= 1e-9 * energy {
            return 1;
        }
        let cut = best - 0.05 * energy;
        let at = |l: usize| if l % side == 0 { energy } else { r[l % side - 1] };
        let period = (1..side)
            .find(|&l| at(l) >= cut && at(l) >= at(l - 1) && at(l) >= at(l + 1))
            .unwrap_or(side);
        ((side as f64 / period as f64).round() as usize).clamp(1, side)
    };
    let p_h = pick(h, &|l| along(l, 0));
    let p_w = pick(w, &|l| along(0, l));
    (p_h, p_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{render_unit_cell, tile, UnitCellSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(N⁴) DFT, centered, of the same normalized input.
    fn direct_dft(img: &ContinuousPattern) -> ContinuousPattern {
        let (h, w) = (img.height(), img.width());
        let mean = img.mean();
        let m = img.data().iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        let mut out = ContinuousPattern::zeros(h, w);
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..h {
                    for j in 0..w {
                        let x = (img.get(i, j) - mean) / m;
                        let ang = -2.0 * std::f64::consts::PI
                            * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                        re += x * ang.cos();
                        im += x * ang.sin();
                    }
                }
                out.set((u + h / 2) % h, (v + w / 2) % w, (re * re + im * im).sqrt());
            }
        }
        out
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ContinuousPattern {
        ContinuousPattern::new(h, w, (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn tiled(cell: usize, p: usize, seed: u64) -> ContinuousPattern {
        let c = render_unit_cell(&UnitCellSpec::random(cell, seed)).unwrap();
        tile(&c, p).unwrap().to_continuous()
    }

    #[test]
    fn constant_image_has_zero_spectrum() {
        let img = ContinuousPattern::new(8, 8, vec![0.1; 64]).unwrap();
        let s = magnitude_spectrum(&img).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
        let e = estimate_unit_count(&img, &PeakDetectConfig::default()).unwrap();
        assert_eq!((e.p_h, e.p_w, e.valid), (1, 1, false));
    }

    #[test]
    fn cosine_has_peaks_at_plus_minus_eight() {
        let (h, w) = (16, 64);
        let data = (0..h * w)
            .map(|k| (2.0 * std::f64::consts::PI * 8.0 * (k % w) as f64 / w as f64).cos())
            .collect();
        let s = magnitude_spectrum(&ContinuousPattern::new(h, w, data).unwrap()).unwrap();
        let (ci, cj) = (h / 2, w / 2);
        let peak = s.get(ci, cj + 8);
        assert!((peak - s.get(ci, cj - 8)).abs() < 1e-9);
        for i in 0..h {
            for j in 0..w {
                if (i, j) != (ci, cj + 8) && (i, j) != (ci, cj - 8) {
                    assert!(s.get(i, j) < 1e-9 * peak, "({i},{j}) = {}", s.get(i, j));
                }
            }
        }
    }

    #[test]
    fn fft_matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (h, w) in [(8, 8), (6, 10), (12, 7)] {
            let img = random_image(&mut rng, h, w);
            let fast = magnitude_spectrum(&img).unwrap();
            let slow = direct_dft(&img);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn projection_sums() {
        let s = ContinuousPattern::zeros(5, 6);
        let (hp, vp) = project(&s);
        assert!(hp.values.iter().chain(&vp.values).all(|&v| v == 0.0));

        let mut s = ContinuousPattern::zeros(5, 6);
        s.set(1, 4, 2.5);
        let (hp, vp) = project(&s);
        assert_eq!(hp.values, vec![0.0, 0.0, 0.0, 0.0, 2.5, 0.0]);
        assert_eq!(vp.values, vec![0.0, 2.5, 0.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_image(&mut rng, 7, 9).map(f64::abs);
        let (hp, vp) = project(&s);
        for j in 0..9 {
            let col: f64 = (0..7).map(|i| s.get(i, j)).sum();
            assert!((hp.values[j] - col).abs() < 1e-12);
        }
        for i in 0..7 {
            let row: f64 = (0..9).rev().map(|j| s.get(i, j)).sum();
            assert!((vp.values[i] - row).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_substitution() {
        assert_eq!(threshold(&[2.0, 7.0, 12.0, 4.0], 0.3), 5.0);
    }

    #[test]
    fn short_or_flat_profiles() {
        let cfg = PeakDetectConfig::default();
        let p = FrequencyProfile { axis: Axis::Horizontal, values: vec![1.0, 2.0] };
        assert!(detect_peaks(&p, &cfg).is_err());
        let p = FrequencyProfile { axis: Axis::Horizontal, values: vec![3.0; 9] };
        assert!(detect_peaks(&p, &cfg).unwrap().peaks.is_empty());
    }

    fn regular_profile(len: usize, spacing: usize) -> Vec<f64> {
        let c = len / 2;
        (0..len)
            .map(|i| {
                let d = i.abs_diff(c);
                if d != 0 && d % spacing == 0 {
                    10.0 - d as f64 / spacing as f64
                } else {
                    0.5
                }
            })
            .collect()
    }

    #[test]
    fn constructed_period_eight_profile() {
        let p = FrequencyProfile { axis: Axis::Horizontal, values: regular_profile(64, 8) };
        let det = detect_peaks(&p, &PeakDetectConfig::default()).unwrap();
        assert_eq!(det.peaks, vec![0, 8, 16, 24, 40, 48, 56]);
    }

    /// Longest contiguous arithmetic progression through the center, over
    /// every spacing, among bins above `τ`.
    fn progression_oracle(values: &[f64], tau: f64) -> Vec<usize> {
        let c = values.len() / 2;
        let above = |b: isize| b >= 0 && (b as usize) < values.len() && b as usize != c && values[b as usize] > tau;
        let mut best: Vec<usize> = vec![];
        for s in 1..values.len() as isize {
            let mut members = vec![];
            for dir in [-1isize, 1] {
                let mut k = 1;
                while above(c as isize + dir * k * s) {
                    members.push((c as isize + dir * k * s) as usize);
                    k += 1;
                }
            }
            if members.len() > best.len() {
                members.sort_unstable();
                best = members;
            }
        }
        best
    }

    #[test]
    fn isolated_spike_is_dropped() {
        let mut values = regular_profile(64, 8);
        values[44] = 9.5;
        let p = FrequencyProfile { axis: Axis::Horizontal, values: values.clone() };
        let cfg = PeakDetectConfig::default();
        let det = detect_peaks(&p, &cfg).unwrap();
        assert!(!det.peaks.contains(&44));
        assert_eq!(det.peaks, progression_oracle(&values, det.threshold));
    }

    #[test]
    fn clean_tiling_is_recovered() {
        let img = tiled(8, 8, 21);
        let e = estimate_unit_count(&img, &PeakDetectConfig::default()).unwrap();
        assert_eq!((e.p_h, e.p_w, e.valid), (8, 8, true));
        assert_eq!(autocorrelation_period_oracle(&img), (8, 8));
    }

    #[test]
    fn blank_image_is_invalid() {
        let e = estimate_unit_count(&ContinuousPattern::zeros(16, 16), &PeakDetectConfig::default()).unwrap();
        assert_eq!((e.p_h, e.p_w, e.valid), (1, 1, false));
        assert_eq!(autocorrelation_period_oracle(&ContinuousPattern::zeros(16, 16)), (1, 1));
    }

    #[test]
    fn batch_mode_prefers_smaller_on_ties() {
        let mk = |p: usize| UnitCellEstimate {
            p_h: p,
            p_w: p,
            valid: true,
            vertical: AxisEstimate { threshold: 0.0, peaks: vec![], spacing: Some(p) },
            horizontal: AxisEstimate { threshold: 0.0, peaks: vec![], spacing: Some(p) },
        };
        assert_eq!(batch_mode(&[mk(8), mk(4), mk(8), mk(4)]), Some((4, 4, true)));
        assert_eq!(batch_mode(&[mk(8), mk(4), mk(8)]), Some((8, 8, true)));
        assert_eq!(batch_mode(&[]), None);
    }

    #[test]
    fn mode_ties() {
        assert_eq!(mode_smallest([3, 5, 5, 3]), Some(3));
        assert_eq!(mode_smallest([]), None);
    }
}
