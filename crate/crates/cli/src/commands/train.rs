use std::path::PathBuf;

use repgan_core::gan::{generate, image_grid, metrics_csv, train, TrainConfig, TrainingSet};
use repgan_core::pattern::pgm;
use repgan_core::io;
use serde_json::json;

use super::load_dataset;
use crate::run::{emit, load_config, Run};

pub const CHECKPOINT: &str = "checkpoint.json";
pub const METRICS: &str = "metrics.csv";
/// Images per class in each epoch's sample grid.
pub const GRID_PER_CLASS: usize = 4;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest file or dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Generator iterations per epoch.
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Use the configured true unit count instead of the FFT estimate.
    #[arg(long)]
    pub disable_fft: bool,
    #[arg(long)]
    pub disable_blur: bool,
    #[arg(long)]
    pub disable_recon: bool,
}

pub fn run(args: &Args, run: &mut Run) -> anyhow::Result<()> {
    let mut cfg: TrainConfig = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = args.steps_per_epoch {
        cfg.steps_per_epoch = Some(s);
    }
    cfg.ablation.disable_fft |= args.disable_fft;
    cfg.ablation.disable_blur |= args.disable_blur;
    cfg.ablation.disable_recon |= args.disable_recon;
    cfg.validate()?;
    run.write_resolved(&cfg)?;

    let (_, data) = load_dataset(&args.data)?;
    let set = TrainingSet::from_samples(&data.train, cfg.classes)?;
    run.note(&format!("training on {} images for {} epochs", set.len(), cfg.epochs));
    let samples = run.path("samples");
    let outcome = train(cfg.clone(), &set, |trainer, m| {
        let mut images = Vec::new();
        for c in 0..cfg.classes {
            images.extend(generate(trainer.model(), c, GRID_PER_CLASS, cfg.seed)?);
        }
        if let Some(grid) = image_grid(&images, GRID_PER_CLASS) {
            pgm::write_binary(&samples.join(format!("epoch_{:04}.pgm", m.epoch)), &grid)?;
        }
        run.note(&format!(
            "epoch {} iter {}: L_D {:.5} L_W {:.5} L_cls {:.5} L_blur {:.5} L_recon {:.5} p=({}, {}) k={}",
            m.epoch, m.iter, m.l_d, m.l_w, m.l_cls, m.l_blur, m.l_recon, m.p_h, m.p_w, m.k
        ));
        Ok(())
    })?;
    outcome.checkpoint.save(&run.path(CHECKPOINT))?;
    io::write_atomic(&run.path(METRICS), metrics_csv(&outcome.metrics).as_bytes())?;
    emit(&json!({
        "command": "train",
        "out": run.out,
        "epochs_completed": outcome.metrics.len(),
        "iterations": outcome.checkpoint.iteration,
        "diverged": outcome.divergence.is_some(),
    }))?;
    match outcome.divergence {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}
