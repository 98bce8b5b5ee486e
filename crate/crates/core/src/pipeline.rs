//! The desk-scale benchmark: ablation matrix plus augmentation comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::augment::{
    evaluate_augmentation, run_augmentation, AcceptanceReport, AugmentConfig, AugmentationComparison, ThresholdMode,
};
use crate::autodiff::Tensor2;
use crate::error::{Error, Result};
use crate::eval::{image_rows, topofid_report, train_surrogate, LabeledImages, SurrogateConfig, SurrogateModel, TopoFidReport, TopoFidRow};
use crate::gan::{generate, train, Ablation, Checkpoint, EpochMetrics, GanModel, TrainConfig, TrainingSet};
use crate::guidance::{estimate_unit_count, PeakDetectConfig};
use crate::pattern::{synth_dataset, Dataset, SynthConfig};

pub const VARIANTS: [&str; 4] = ["full", "no-fft", "no-blur", "no-recon"];

pub fn variant_ablation(name: &str) -> Result<Ablation> {
    let mut a = Ablation::default();
    match name {
        "full" => {}
        "no-fft" => a.disable_fft = true,
        "no-blur" => a.disable_blur = true,
        "no-recon" => a.disable_recon = true,
        _ => {
            return Err(Error::config(
                "variants",
                format!("unknown variant `{name}` (full|no-fft|no-blur|no-recon)"),
            ))
        }
    }
    Ok(a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub data: SynthConfig,
    pub train: TrainConfig,
    pub surrogate: SurrogateConfig,
    pub augment: AugmentConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<String>,
    pub is_splits: usize,
    /// Samples per class checked for the ground-truth unit count.
    pub structure_samples_per_class: usize,
}

/// The imbalanced benchmark: Macrophage train ratio at half scale, 64×64 with p = 8.
pub fn benchmark_data() -> SynthConfig {
    SynthConfig {
        profile: Some("macrophage".into()),
        profile_scale: 2,
        ..Default::default()
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            data: benchmark_data(),
            train: TrainConfig {
                epochs: 100,
                steps_per_epoch: Some(20),
                ..Default::default()
            },
            surrogate: SurrogateConfig::default(),
            augment: AugmentConfig {
                threshold_mode: ThresholdMode::Absolute,
                ..Default::default()
            },
            seeds: vec![0, 1, 2],
            variants: VARIANTS.iter().map(|s| s.to_string()).collect(),
            is_splits: crate::eval::DEFAULT_IS_SPLITS,
            structure_samples_per_class: 30,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.surrogate.validate()?;
        self.augment.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "at least one variant is required"));
        }
        for v in &self.variants {
            variant_ablation(v)?;
        }
        if self.is_splits == 0 {
            return Err(Error::config("is_splits", "must be >= 1"));
        }
        if self.data.image_side != self.train.image_side || self.data.label_rule.classes() != self.train.classes {
            return Err(Error::config(
                "train",
                "image_side and classes must match the data section",
            ));
        }
        Ok(())
    }
}

/// Fraction of generated samples whose estimated unit count is `(p, p)`.
pub fn unit_count_hits(
    model: &GanModel,
    per_class: usize,
    p: usize,
    peaks: &PeakDetectConfig,
    seed: u64,
) -> Result<(usize, usize)> {
    let mut hits = 0;
    let mut total = 0;
    for c in 0..model.classes() {
        for img in generate(model, c, per_class, seed)? {
            let e = estimate_unit_count(&img.to_continuous(), peaks)?;
            hits += usize::from(e.valid && (e.p_h, e.p_w) == (p, p));
            total += 1;
        }
    }
    Ok((hits, total))
}

/// Generated images with the same class counts as `reference_labels`.
pub fn generate_like(model: &GanModel, reference_labels: &[usize], seed: u64) -> Result<Tensor2> {
    let mut counts = vec![0usize; model.classes()];
    for &l in reference_labels {
        if l >= counts.len() {
            return Err(Error::Label {
                label: l,
                classes: counts.len(),
            });
        }
        counts[l] += 1;
    }
    let mut images = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        images.extend(generate(model, c, n, seed.wrapping_add(c as u64))?);
    }
    image_rows(&images)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub variant: String,
    pub seed: u64,
    pub report: TopoFidReport,
    pub unit_hits: usize,
    pub unit_total: usize,
    /// Reason training stopped early, if it did.
    pub divergence: Option<String>,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentOutcome {
    pub seed: u64,
    pub comparison: AugmentationComparison,
    pub acceptance: AcceptanceReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub variants: Vec<VariantOutcome>,
    pub augmentation: Vec<AugmentOutcome>,
    /// Seeds whose augmentation step failed, with the error.
    pub augmentation_failures: Vec<(u64, String)>,
}

/// Callbacks for progress lines and per-variant artifacts.
pub trait BenchObserver {
    fn message(&mut self, _line: &str) {}
    fn variant_done(&mut self, _outcome: &VariantOutcome, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
    fn surrogate_trained(&mut self, _seed: u64, _model: &SurrogateModel) -> Result<()> {
        Ok(())
    }
}

impl BenchObserver for () {}

/// Runs every variant for every seed, then the augmentation comparison with
/// the full model when it is among the variants.
pub fn run_bench(cfg: &BenchConfig, observer: &mut dyn BenchObserver) -> Result<BenchReport> {
    cfg.validate()?;
    let data: Dataset = synth_dataset(&cfg.data)?;
    let classes = data.classes;
    let real_train = LabeledImages::from_samples(&data.train)?;
    let real_test = LabeledImages::from_samples(&data.test)?;
    let set = TrainingSet::from_samples(&data.train, classes)?;
    let p = cfg.data.unit_count();
    observer.message(&format!(
        "benchmark: train counts {:?}, {} test samples",
        Dataset::class_counts(&data.train, classes),
        data.test.len()
    ));

    let mut report = BenchReport::default();
    for &seed in &cfg.seeds {
        let scfg = SurrogateConfig {
            seed,
            ..cfg.surrogate.clone()
        };
        let surrogate = train_surrogate(&real_train, &real_test, classes, &scfg)?;
        observer.message(&format!(
            "seed {seed}: surrogate accuracy {:.3}, macro-F1 {:.3}",
            surrogate.metrics.accuracy, surrogate.metrics.macro_f1
        ));
        observer.surrogate_trained(seed, &surrogate.model)?;
        let mut full_model = None;
        for name in &cfg.variants {
            let mut tcfg = cfg.train.clone();
            tcfg.seed = seed;
            tcfg.ablation = variant_ablation(name)?;
            tcfg.true_unit_count = p;
            let outcome = train(tcfg, &set, |_, m| {
                observer.message(&format!(
                    "seed {seed} {name}: epoch {} L_D {:.4} L_W {:.4} p=({}, {}) k={}",
                    m.epoch, m.l_d, m.l_w, m.p_h, m.p_w, m.k
                ));
                Ok(())
            })?;
            let model = outcome.checkpoint.model()?;
            let generated = generate_like(&model, &real_train.labels, seed.wrapping_mul(7919).wrapping_add(1))?;
            let fid = topofid_report(&surrogate.model, &real_train.x, &generated, cfg.is_splits)?;
            let (unit_hits, unit_total) =
                unit_count_hits(&model, cfg.structure_samples_per_class, p, &cfg.train.peaks, seed.wrapping_add(7))?;
            let v = VariantOutcome {
                variant: name.clone(),
                seed,
                report: fid,
                unit_hits,
                unit_total,
                divergence: outcome.divergence.as_ref().map(ToString::to_string),
                metrics: outcome.metrics,
            };
            observer.message(&format!(
                "seed {seed} {name}: TopoFID {:.4}, IS {:.3}, unit count hits {unit_hits}/{unit_total}",
                v.report.topofid, v.report.is_mean
            ));
            observer.variant_done(&v, &outcome.checkpoint)?;
            report.variants.push(v);
            if name == "full" {
                full_model = Some(model);
            }
        }
        if let Some(model) = full_model {
            let acfg = AugmentConfig {
                seed,
                ..cfg.augment.clone()
            };
            let run = match run_augmentation(&data.train, &data.test, classes, &model, &surrogate.model, &scfg, &acfg) {
                Ok(run) => run,
                Err(e @ Error::Shortfall(_)) => {
                    observer.message(&format!("seed {seed}: augmentation failed: {e}"));
                    report.augmentation_failures.push((seed, e.to_string()));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let profile = cfg.data.profile.clone().unwrap_or_else(|| "custom".into());
            let comparison = evaluate_augmentation(&profile, &run.baseline, &run.augmented)?;
            observer.message(&format!(
                "seed {seed}: macro-F1 {:.3} -> {:.3}",
                comparison.baseline.macro_f1, comparison.augmented.macro_f1
            ));
            report.augmentation.push(AugmentOutcome {
                seed,
                comparison,
                acceptance: run.report,
            });
        }
    }
    Ok(report)
}

impl BenchReport {
    pub fn topofid_rows(&self) -> Vec<TopoFidRow> {
        self.variants
            .iter()
            .map(|v| TopoFidRow {
                variant: v.variant.clone(),
                report: v.report,
                seed: v.seed,
            })
            .collect()
    }

    pub fn structure_csv(&self) -> String {
        let mut s = String::from("variant,seed,unit_hits,unit_total,diverged\n");
        for v in &self.variants {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                v.variant,
                v.seed,
                v.unit_hits,
                v.unit_total,
                v.divergence.is_some()
            );
        }
        s
    }

    pub fn augmentation_csv(&self) -> String {
        let mut s = String::from("profile,augmentation,accuracy_pct,macro_f1,test_samples,seed\n");
        for a in &self.augmentation {
            let c = &a.comparison;
            for (label, m) in [("baseline", &c.baseline), ("augmented", &c.augmented)] {
                let _ = writeln!(
                    s,
                    "{},{label},{},{},{},{}",
                    c.profile,
                    100.0 * m.accuracy,
                    m.macro_f1,
                    c.test_samples,
                    a.seed
                );
            }
        }
        s
    }

    /// Median TopoFID of `variant` across seeds.
    pub fn median_topofid(&self, variant: &str) -> Option<f64> {
        median(self.variants.iter().filter(|v| v.variant == variant).map(|v| v.report.topofid).collect())
    }

    /// Median unit-count hit fraction of `variant` across seeds.
    pub fn median_unit_rate(&self, variant: &str) -> Option<f64> {
        median(
            self.variants
                .iter()
                .filter(|v| v.variant == variant)
                .map(|v| v.unit_hits as f64 / v.unit_total.max(1) as f64)
                .collect(),
        )
    }

    /// Median baseline and augmented macro-F1 across seeds.
    pub fn median_macro_f1(&self) -> Option<(f64, f64)> {
        let base = median(self.augmentation.iter().map(|a| a.comparison.baseline.macro_f1).collect())?;
        let aug = median(self.augmentation.iter().map(|a| a.comparison.augmented.macro_f1).collect())?;
        Some((base, aug))
    }
}

/// Middle value; the mean of the two middle values for even counts.
pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_flip_one_switch_each() {
        assert_eq!(variant_ablation("full").unwrap(), Ablation::default());
        for name in &VARIANTS[1..] {
            let a = variant_ablation(name).unwrap();
            let on = [a.disable_fft, a.disable_blur, a.disable_recon];
            assert_eq!(on.iter().filter(|&&b| b).count(), 1, "{name}");
        }
        assert!(variant_ablation("no-mlp").is_err());
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(vec![]), None);
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn default_config_validates_and_mismatch_is_named() {
        BenchConfig::default().validate().unwrap();
        let mut cfg = BenchConfig::default();
        cfg.train.image_side = 32;
        assert!(matches!(cfg.validate(), Err(Error::Config { key, .. }) if key == "train"));
    }

    #[test]
    fn tiny_bench_produces_every_row() {
        let mut cfg = BenchConfig {
            data: SynthConfig {
                train_counts: vec![12, 8, 6],
                test_per_class: 3,
                image_side: 16,
                cell_side: 4,
                ..Default::default()
            },
            seeds: vec![0],
            variants: vec!["full".into(), "no-recon".into()],
            structure_samples_per_class: 2,
            ..Default::default()
        };
        cfg.train.image_side = 16;
        cfg.train.d_z = 4;
        cfg.train.epochs = 2;
        cfg.train.steps_per_epoch = Some(1);
        cfg.train.batch_size = 4;
        cfg.train.network.generator_hidden = vec![8];
        cfg.train.network.critic_hidden = vec![8];
        cfg.surrogate.hidden = vec![8, 4];
        cfg.surrogate.epochs = 1;
        cfg.augment.min_pool = 8;
        cfg.augment.threshold_mode = crate::augment::ThresholdMode::Absolute;
        cfg.augment.alpha_conf = 1e-6;
        let report = run_bench(&cfg, &mut ()).unwrap();
        assert_eq!(report.variants.len(), 2);
        assert!(report.topofid_rows().iter().all(|r| r.report.topofid.is_finite() && r.report.is_mean.is_finite()));
        assert_eq!(report.augmentation.len(), 1);
        assert_eq!(report.augmentation_csv().lines().count(), 3);
        assert_eq!(report.structure_csv().lines().count(), 3);
    }
}
