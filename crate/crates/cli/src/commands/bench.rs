use std::path::PathBuf;

use repgan_core::eval::{topofid_csv, SurrogateModel};
use repgan_core::gan::{metrics_csv, Checkpoint};
use repgan_core::io;
use repgan_core::pipeline::{run_bench, BenchConfig, BenchObserver, VariantOutcome};
use repgan_core::Result;
use serde_json::json;

use super::train::{CHECKPOINT, METRICS};
use crate::run::{emit, load_config, Run};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seeds 0..N.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Comma-separated subset of full,no-fft,no-blur,no-recon.
    #[arg(long, value_delimiter = ',')]
    pub variant: Vec<String>,
    /// Keep each variant's checkpoint and each seed's surrogate under runs/.
    #[arg(long)]
    pub save_checkpoints: bool,
}

struct Artifacts<'a> {
    run: &'a mut Run,
    save_checkpoints: bool,
}

impl BenchObserver for Artifacts<'_> {
    fn message(&mut self, line: &str) {
        self.run.note(line);
    }

    fn variant_done(&mut self, outcome: &VariantOutcome, checkpoint: &Checkpoint) -> Result<()> {
        let dir = self.run.path("runs").join(format!("{}_s{}", outcome.variant, outcome.seed));
        io::write_atomic(&dir.join(METRICS), metrics_csv(&outcome.metrics).as_bytes())?;
        if self.save_checkpoints {
            checkpoint.save(&dir.join(CHECKPOINT))?;
        }
        Ok(())
    }

    fn surrogate_trained(&mut self, seed: u64, model: &SurrogateModel) -> Result<()> {
        if self.save_checkpoints {
            model.save(&self.run.path("runs").join(format!("surrogate_s{seed}.json")))?;
        }
        Ok(())
    }
}

pub fn run(args: &Args, run: &mut Run) -> anyhow::Result<()> {
    let mut cfg: BenchConfig = load_config(args.config.as_deref())?;
    if let Some(n) = args.seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = args.steps_per_epoch {
        cfg.train.steps_per_epoch = Some(s);
    }
    if !args.variant.is_empty() {
        cfg.variants = args.variant.clone();
    }
    cfg.validate()?;
    run.write_resolved(&cfg)?;

    let report = run_bench(
        &cfg,
        &mut Artifacts {
            run,
            save_checkpoints: args.save_checkpoints,
        },
    )?;
    io::write_atomic(&run.path("ablation.csv"), topofid_csv(&report.topofid_rows()).as_bytes())?;
    io::write_atomic(&run.path("structure.csv"), report.structure_csv().as_bytes())?;
    io::write_atomic(&run.path("augmentation.csv"), report.augmentation_csv().as_bytes())?;
    let tables: String = report
        .augmentation
        .iter()
        .map(|a| format!("seed {}\n{}\n", a.seed, a.comparison.table()))
        .collect();
    io::write_atomic(&run.path("augmentation-table.txt"), tables.as_bytes())?;
    io::write_json_pretty(&run.path("bench-report.json"), &report)?;

    let medians: serde_json::Map<String, serde_json::Value> = cfg
        .variants
        .iter()
        .map(|v| {
            (
                v.clone(),
                json!({
                    "topofid": report.median_topofid(v),
                    "unit_rate": report.median_unit_rate(v),
                }),
            )
        })
        .collect();
    emit(&json!({
        "command": "bench",
        "out": run.out,
        "median": medians,
        "macro_f1": report.median_macro_f1(),
        "augmentation_failures": report.augmentation_failures,
    }))?;
    Ok(())
}
