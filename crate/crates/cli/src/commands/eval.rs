use std::fs;
use std::path::{Path, PathBuf};

use repgan_core::eval::{
    image_rows, topofid_csv, topofid_report, train_surrogate, LabeledImages, SurrogateConfig, SurrogateModel,
    TopoFidRow, DEFAULT_IS_SPLITS,
};
use repgan_core::pattern::{pgm, BinaryPattern, DatasetManifest, TRAIN_MANIFEST};
use repgan_core::{io, Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::load_dataset;
use crate::run::{emit, load_config, Run};

pub const SURROGATE: &str = "surrogate.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Used only when no `--surrogate` is given.
    pub surrogate: SurrogateConfig,
    pub splits: usize,
    pub variant: String,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            surrogate: SurrogateConfig::default(),
            splits: DEFAULT_IS_SPLITS,
            variant: "full".into(),
            seed: 0,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained surrogate; when absent one is trained on `--real` and saved next to `--out`.
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
    /// Manifest of the real images (train split is the reference set).
    #[arg(long)]
    pub real: PathBuf,
    /// Directory of generated images (a manifest or plain PGM files).
    #[arg(long)]
    pub generated: PathBuf,
    /// CSV file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub splits: Option<usize>,
}

fn collect_pgm(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        if path.is_dir() {
            collect_pgm(&path, found)?;
        } else if path.extension().is_some_and(|x| x == "pgm") {
            found.push(path);
        }
    }
    Ok(())
}

/// Images listed by the directory's manifest, or every PGM below it in path order.
pub fn load_generated(dir: &Path) -> Result<Vec<BinaryPattern>> {
    if dir.join(TRAIN_MANIFEST).exists() {
        let data = DatasetManifest::load(dir)?.load_images()?;
        return Ok(data.train.into_iter().chain(data.test).map(|s| s.image).collect());
    }
    let mut paths = Vec::new();
    collect_pgm(dir, &mut paths)?;
    paths.sort();
    paths.iter().map(|p| pgm::read_binary(p)).collect()
}

pub fn run(args: &Args, run: &mut Run) -> anyhow::Result<()> {
    let mut cfg: EvalConfig = load_config(args.config.as_deref())?;
    if let Some(v) = &args.variant {
        cfg.variant = v.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.splits {
        cfg.splits = s;
    }
    cfg.surrogate.validate()?;
    if cfg.splits == 0 {
        return Err(Error::Config {
            key: "splits".into(),
            reason: "must be >= 1".into(),
        }
        .into());
    }
    run.write_resolved(&cfg)?;

    let (_, real) = load_dataset(&args.real)?;
    let real_train = LabeledImages::from_samples(&real.train)?;
    let surrogate = match &args.surrogate {
        Some(p) => SurrogateModel::load(p)?,
        None => {
            let test = LabeledImages::from_samples(&real.test)?;
            let scfg = SurrogateConfig {
                seed: cfg.seed,
                ..cfg.surrogate.clone()
            };
            let fit = train_surrogate(&real_train, &test, real.classes, &scfg)?;
            run.note(&format!(
                "trained surrogate: accuracy {:.4}, macro-F1 {:.4}",
                fit.metrics.accuracy, fit.metrics.macro_f1
            ));
            fit.model.save(&run.path(SURROGATE))?;
            fit.model
        }
    };
    let generated = image_rows(&load_generated(&args.generated)?)?;
    let report = topofid_report(&surrogate, &real_train.x, &generated, cfg.splits)?;
    let row = TopoFidRow {
        variant: cfg.variant.clone(),
        report,
        seed: cfg.seed,
    };
    io::write_atomic(&args.out, topofid_csv(&[row]).as_bytes())?;
    run.note(&format!(
        "TopoFID {:.6}, IS {:.4} ± {:.4} over {} generated images",
        report.topofid, report.is_mean, report.is_std, report.n_gen
    ));
    emit(&json!({
        "command": "eval",
        "out": args.out,
        "variant": cfg.variant,
        "topofid": report.topofid,
        "is_mean": report.is_mean,
        "is_std": report.is_std,
        "n_real": report.n_real,
        "n_gen": report.n_gen,
    }))?;
    Ok(())
}
