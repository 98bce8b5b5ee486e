use std::path::PathBuf;

use repgan_core::guidance::{analyze, log_spectrum, PeakDetectConfig, SpectralAnalysis};
use repgan_core::pattern::pgm;
use repgan_core::structure::{blur_kernel_size, clamp_kernel, consensus_binary, retile_reconstruction};
use repgan_core::io;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::run::{emit, load_config, Run};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    pub peaks: PeakDetectConfig,
    /// Write the log-magnitude spectrum as a PGM.
    pub write_spectrum: bool,
    /// Write the consensus cell and its retiling when the estimate is valid.
    pub write_reconstruction: bool,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            peaks: PeakDetectConfig::default(),
            write_spectrum: true,
            write_reconstruction: true,
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    height: usize,
    width: usize,
    #[serde(flatten)]
    analysis: &'a SpectralAnalysis,
    p_h: usize,
    p_w: usize,
    valid: bool,
    kernel_size: usize,
    consensus_region: Option<(usize, usize)>,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Binary PGM image.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub alpha_fft: Option<f64>,
}

pub fn run(args: &Args, run: &mut Run) -> anyhow::Result<()> {
    let mut cfg: AnalyzeConfig = load_config(args.config.as_deref())?;
    if let Some(a) = args.alpha_fft {
        cfg.peaks.alpha_fft = a;
    }
    cfg.peaks.validate()?;
    run.write_resolved(&cfg)?;

    let img = pgm::read_binary(&args.input)?;
    let (h, w) = (img.height(), img.width());
    let (analysis, spectrum) = analyze(&img.to_continuous(), &cfg.peaks)?;
    let e = &analysis.estimate;
    let kernel_size = clamp_kernel(blur_kernel_size(h, w, e.p_h, e.p_w)?, h, w);
    if cfg.write_spectrum {
        pgm::write_gray(&run.path("spectrum.pgm"), &log_spectrum(&spectrum))?;
    }
    let mut consensus_region = None;
    if e.valid && cfg.write_reconstruction {
        let c = consensus_binary(&img, e.p_h, e.p_w)?;
        pgm::write_binary(&run.path("cell.pgm"), &c.cell)?;
        pgm::write_binary(&run.path("reconstruction.pgm"), &retile_reconstruction(&c.cell, h, w))?;
        consensus_region = Some((c.used_rows, c.used_cols));
    }
    let report = Report {
        height: h,
        width: w,
        analysis: &analysis,
        p_h: e.p_h,
        p_w: e.p_w,
        valid: e.valid,
        kernel_size,
        consensus_region,
    };
    io::write_json_pretty(&run.path("report.json"), &report)?;
    run.note(&format!("unit count ({}, {}), valid {}, kernel {kernel_size}", e.p_h, e.p_w, e.valid));
    emit(&json!({
        "command": "analyze",
        "out": run.out,
        "p_h": e.p_h,
        "p_w": e.p_w,
        "valid": e.valid,
        "kernel_size": kernel_size,
    }))?;
    Ok(())
}
