use std::fs;
use std::path::{Path, PathBuf};

use repgan_core::augment::{evaluate_augmentation, run_augmentation, AugmentConfig, ThresholdMode};
use repgan_core::eval::{train_surrogate, LabeledImages, SurrogateConfig, SurrogateModel};
use repgan_core::gan::Checkpoint;
use repgan_core::pattern::{DatasetManifest, ManifestEntry};
use repgan_core::{io, Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::eval::SURROGATE;
use super::load_dataset;
use crate::run::{emit, load_config, Run};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentRunConfig {
    pub augment: AugmentConfig,
    /// Used for the augmented retraining and, without `--surrogate`, the baseline.
    pub surrogate: SurrogateConfig,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Baseline surrogate; trained on `--data` when absent.
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
    /// Generator checkpoint written by `train`.
    #[arg(long)]
    pub generator: PathBuf,
    /// Manifest file or dataset directory with train and test splits.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub alpha_conf: Option<f64>,
    /// quantile or absolute.
    #[arg(long)]
    pub threshold_mode: Option<ThresholdMode>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Entries rewritten to absolute paths so the new manifest can live elsewhere.
fn absolute(root: &Path, entries: &[ManifestEntry]) -> Result<Vec<ManifestEntry>> {
    let base = if root.as_os_str().is_empty() { Path::new(".") } else { root };
    let base = fs::canonicalize(base).map_err(|e| Error::Io {
        path: base.to_path_buf(),
        source: e,
    })?;
    Ok(entries
        .iter()
        .map(|e| ManifestEntry {
            path: base.join(&e.path).to_string_lossy().into_owned(),
            ..e.clone()
        })
        .collect())
}

pub fn run(args: &Args, run: &mut Run) -> anyhow::Result<()> {
    let mut cfg: AugmentRunConfig = load_config(args.config.as_deref())?;
    if let Some(a) = args.alpha_conf {
        cfg.augment.alpha_conf = a;
    }
    if let Some(m) = args.threshold_mode {
        cfg.augment.threshold_mode = m;
    }
    if let Some(s) = args.seed {
        cfg.augment.seed = s;
        cfg.surrogate.seed = s;
    }
    cfg.augment.validate()?;
    cfg.surrogate.validate()?;
    run.write_resolved(&cfg)?;

    let (manifest, data) = load_dataset(&args.data)?;
    let generator = Checkpoint::load(&args.generator)?.model()?;
    let baseline = match &args.surrogate {
        Some(p) => SurrogateModel::load(p)?,
        None => {
            let fit = train_surrogate(
                &LabeledImages::from_samples(&data.train)?,
                &LabeledImages::from_samples(&data.test)?,
                data.classes,
                &cfg.surrogate,
            )?;
            fit.model.save(&run.path(SURROGATE))?;
            fit.model
        }
    };
    let result = run_augmentation(
        &data.train,
        &data.test,
        data.classes,
        &generator,
        &baseline,
        &cfg.surrogate,
        &cfg.augment,
    )?;
    let profile = args
        .data
        .file_stem()
        .map_or_else(|| "data".to_string(), |n| n.to_string_lossy().into_owned());
    let comparison = evaluate_augmentation(
        &profile,
        &result.baseline,
        &result.augmented,
    )?;

    let synthetic = &result.train[data.train.len()..];
    let mut train = absolute(&manifest.root, &manifest.train)?;
    train.extend(repgan_core::pattern::dataset::write_samples(&run.out, "aug", synthetic)?);
    let out_manifest = DatasetManifest {
        root: run.out.clone(),
        train,
        test: absolute(&manifest.root, &manifest.test)?,
    };
    out_manifest.save()?;
    io::write_json_pretty(&run.path("acceptance-report.json"), &result.report)?;
    io::write_json_pretty(&run.path("comparison.json"), &comparison)?;
    io::write_atomic(&run.path("comparison.txt"), comparison.table().as_bytes())?;
    result.augmented_surrogate.save(&run.path("surrogate-augmented.json"))?;
    for c in &result.report.per_class {
        run.note(&format!(
            "class {}: generated {}, accepted {}, added {}",
            c.class, c.generated, c.accepted, c.added
        ));
    }
    run.note(&format!(
        "macro-F1 {:.4} -> {:.4}, accuracy {:.4} -> {:.4}",
        comparison.baseline.macro_f1,
        comparison.augmented.macro_f1,
        comparison.baseline.accuracy,
        comparison.augmented.accuracy
    ));
    emit(&json!({
        "command": "augment",
        "out": run.out,
        "per_class": result.report.per_class,
        "delta_accuracy": comparison.delta_accuracy,
        "delta_macro_f1": comparison.delta_macro_f1,
    }))?;
    Ok(())
}
