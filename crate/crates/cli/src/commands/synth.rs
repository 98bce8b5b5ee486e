use std::path::PathBuf;

use repgan_core::pattern::{synth_dataset, write_dataset, Dataset, SynthConfig};
use serde_json::json;

use crate::run::{emit, load_config, Run};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// JSON configuration; unset keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for images and manifests.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Named imbalance profile: paeruginosa, saureus or macrophage.
    #[arg(long)]
    pub profile: Option<String>,
    /// Divisor applied to the profile's counts.
    #[arg(long)]
    pub profile_scale: Option<usize>,
    #[arg(long)]
    pub image_side: Option<usize>,
    #[arg(long)]
    pub cell_side: Option<usize>,
    /// Per-pixel flip probability.
    #[arg(long)]
    pub pixel_noise: Option<f64>,
}

pub fn run(args: &Args, run: &mut Run) -> anyhow::Result<()> {
    let mut cfg: SynthConfig = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(p) = &args.profile {
        cfg.profile = Some(p.clone());
    }
    if let Some(s) = args.profile_scale {
        cfg.profile_scale = s;
    }
    if let Some(s) = args.image_side {
        cfg.image_side = s;
    }
    if let Some(s) = args.cell_side {
        cfg.cell_side = s;
    }
    if let Some(p) = args.pixel_noise {
        cfg.pixel_noise = p;
    }
    cfg.validate()?;
    run.write_resolved(&cfg)?;
    let data = synth_dataset(&cfg)?;
    write_dataset(&run.out, &data)?;
    let train_counts = Dataset::class_counts(&data.train, data.classes);
    let test_counts = Dataset::class_counts(&data.test, data.classes);
    run.note(&format!("wrote train {train_counts:?} and test {test_counts:?} to {}", run.out.display()));
    emit(&json!({
        "command": "synth",
        "out": run.out,
        "train_counts": train_counts,
        "test_counts": test_counts,
        "unit_count": cfg.unit_count(),
    }))?;
    Ok(())
}
