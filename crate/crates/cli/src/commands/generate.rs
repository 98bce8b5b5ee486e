use std::path::PathBuf;

use repgan_core::gan::{generate, image_grid, Checkpoint};
use repgan_core::pattern::{compute_descriptors, pgm, write_dataset, Dataset, Sample};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::run::{emit, load_config, Run};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub per_class: usize,
    /// Classes to sample; empty means all.
    pub labels: Vec<usize>,
    pub seed: u64,
    pub grid_cols: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            per_class: 16,
            labels: Vec::new(),
            seed: 0,
            grid_cols: 8,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Sample only this class (repeatable).
    #[arg(long = "label")]
    pub labels: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub grid_cols: Option<usize>,
}

pub fn run(args: &Args, run: &mut Run) -> anyhow::Result<()> {
    let mut cfg: GenerateConfig = load_config(args.config.as_deref())?;
    if let Some(n) = args.per_class {
        cfg.per_class = n;
    }
    if !args.labels.is_empty() {
        cfg.labels = args.labels.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(c) = args.grid_cols {
        cfg.grid_cols = c;
    }
    if cfg.grid_cols == 0 {
        return Err(repgan_core::Error::Config {
            key: "grid_cols".into(),
            reason: "must be >= 1".into(),
        }
        .into());
    }
    let model = Checkpoint::load(&args.checkpoint)?.model()?;
    if cfg.labels.is_empty() {
        cfg.labels = (0..model.classes()).collect();
    }
    if let Some(&bad) = cfg.labels.iter().find(|&&l| l >= model.classes()) {
        return Err(repgan_core::Error::Label {
            label: bad,
            classes: model.classes(),
        }
        .into());
    }
    run.write_resolved(&cfg)?;

    let mut samples = Vec::new();
    for &c in &cfg.labels {
        let seed = cfg.seed.wrapping_add(c as u64);
        for image in generate(&model, c, cfg.per_class, seed)? {
            let descriptors = compute_descriptors(&image);
            samples.push(Sample {
                image,
                label: c,
                descriptors,
                seed,
            });
        }
    }
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    if let Some(grid) = image_grid(&images, cfg.grid_cols) {
        pgm::write_binary(&run.path("grid.pgm"), &grid)?;
    }
    let data = Dataset {
        classes: model.classes(),
        train: samples,
        test: Vec::new(),
    };
    write_dataset(&run.out, &data)?;
    run.note(&format!("wrote {} samples to {}", data.train.len(), run.out.display()));
    emit(&json!({
        "command": "generate",
        "out": run.out,
        "samples": data.train.len(),
        "labels": cfg.labels,
    }))?;
    Ok(())
}
