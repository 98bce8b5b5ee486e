//! Confidence-filtered synthetic augmentation of an imbalanced training set.

use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::eval::{train_surrogate, ClassificationMetrics, LabeledImages, SurrogateConfig, SurrogateModel};
use crate::gan::{generate, GanModel};
use crate::pattern::{compute_descriptors, Sample};

pub const SIGMA_FLOOR: f64 = 1e-4;
/// EM iteration budget; one component converges on the second pass.
pub const MAX_EM_ITERATIONS: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Accept at or above the `alpha_conf` quantile of the fitted class Gaussian.
    #[default]
    Quantile,
    /// Accept raw confidence at or above `alpha_conf`.
    Absolute,
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(ThresholdMode::Quantile),
            "absolute" => Ok(ThresholdMode::Absolute),
            _ => Err(Error::config("threshold_mode", format!("unknown mode {s:?} (quantile|absolute)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGaussian {
    pub mean: f64,
    pub std: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    pub classes: Vec<ClassGaussian>,
    pub alpha_conf: f64,
    pub mode: ThresholdMode,
}

fn check_alpha(alpha_conf: f64) -> Result<()> {
    if !(alpha_conf > 0.0 && alpha_conf < 1.0) {
        return Err(Error::config("alpha_conf", "must lie in (0, 1)"));
    }
    Ok(())
}

/// One-component EM with population variance. Every responsibility is 1, so
/// each M-step is the sample mean and variance; iteration stops once the
/// parameters stop moving.
fn em_single_gaussian(x: &[f64]) -> ClassGaussian {
    let n = x.len() as f64;
    let (mut mean, mut var) = (x[0], 1.0);
    let mut iterations = 0;
    while iterations < MAX_EM_ITERATIONS {
        iterations += 1;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let settled = (m - mean).abs() <= 1e-15 * mean.abs().max(1.0) && (v - var).abs() <= 1e-15 * var.max(1.0);
        mean = m;
        var = v;
        if settled {
            break;
        }
    }
    ClassGaussian {
        mean,
        std: var.sqrt().max(SIGMA_FLOOR),
        iterations,
    }
}

/// Fits one Gaussian per class to that class's confidence scores.
pub fn fit_confidence_model(scores: &[Vec<f64>], alpha_conf: f64, mode: ThresholdMode) -> Result<ConfidenceModel> {
    check_alpha(alpha_conf)?;
    let classes = scores
        .iter()
        .enumerate()
        .map(|(c, s)| {
            if s.len() < 2 {
                return Err(Error::config(
                    "confidence_scores",
                    format!("class {c} has {} scores, at least 2 are needed", s.len()),
                ));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("confidence_scores", format!("class {c} has non-finite scores")));
            }
            Ok(em_single_gaussian(s))
        })
        .collect::<Result<_>>()?;
    Ok(ConfidenceModel {
        classes,
        alpha_conf,
        mode,
    })
}

impl ConfidenceModel {
    /// Smallest accepted confidence for class `c`.
    pub fn cut(&self, c: usize) -> Result<f64> {
        let g = self.classes.get(c).ok_or(Error::Label {
            label: c,
            classes: self.classes.len(),
        })?;
        check_alpha(self.alpha_conf)?;
        Ok(match self.mode {
            ThresholdMode::Absolute => self.alpha_conf,
            ThresholdMode::Quantile => {
                let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(self.alpha_conf);
                g.mean + z * g.std
            }
        })
    }
}

/// A generated sample's id and its surrogate confidence for the intended class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub confidence: f64,
}

fn by_confidence(a: &Candidate, b: &Candidate) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(Ordering::Equal)
        .then(a.id.cmp(&b.id))
}

/// Accepted candidates of class `c`, ordered by confidence descending then id.
pub fn filter_samples(candidates: &[Candidate], model: &ConfidenceModel, c: usize) -> Result<Vec<Candidate>> {
    let cut = model.cut(c)?;
    let mut kept: Vec<Candidate> = candidates.iter().filter(|k| k.confidence >= cut).copied().collect();
    kept.sort_by(by_confidence);
    Ok(kept)
}

/// Ids picked per class to raise every class to the majority count.
pub fn top_up_plan(real_counts: &[usize], accepted: &[Vec<Candidate>]) -> Result<Vec<Vec<usize>>> {
    if accepted.len() != real_counts.len() {
        return Err(Error::Contract(format!(
            "{} classes counted but {} accepted pools",
            real_counts.len(),
            accepted.len()
        )));
    }
    let target = real_counts.iter().copied().max().unwrap_or(0);
    let mut deficits = Vec::new();
    let mut plan = Vec::with_capacity(real_counts.len());
    for (c, (&have, pool)) in real_counts.iter().zip(accepted).enumerate() {
        let need = target - have;
        if pool.len() < need {
            deficits.push(format!("class {c} needs {need}, {} accepted", pool.len()));
            continue;
        }
        let mut sorted = pool.clone();
        sorted.sort_by(by_confidence);
        plan.push(sorted[..need].iter().map(|k| k.id).collect());
    }
    if !deficits.is_empty() {
        return Err(Error::Shortfall(deficits.join("; ")));
    }
    Ok(plan)
}

/// Real items in order, followed by the planned synthetic items of each class.
#[derive(Clone, Debug, PartialEq)]
pub struct Balanced<T> {
    pub items: Vec<T>,
    pub labels: Vec<usize>,
    pub added: Vec<usize>,
}

/// `pool[id]` holds the generated item for candidate `id`.
pub fn balance_dataset<T: Clone>(
    real: &[T],
    real_labels: &[usize],
    pool: &[T],
    accepted: &[Vec<Candidate>],
) -> Result<Balanced<T>> {
    if real.len() != real_labels.len() {
        return Err(Error::Contract("real items and labels differ in length".into()));
    }
    let classes = accepted.len();
    let mut counts = vec![0usize; classes];
    for &l in real_labels {
        if l >= classes {
            return Err(Error::Label { label: l, classes });
        }
        counts[l] += 1;
    }
    let plan = top_up_plan(&counts, accepted)?;
    let mut items = real.to_vec();
    let mut labels = real_labels.to_vec();
    let mut added = Vec::with_capacity(classes);
    for (c, ids) in plan.iter().enumerate() {
        for &id in ids {
            let item = pool
                .get(id)
                .ok_or_else(|| Error::Contract(format!("candidate id {id} outside the pool")))?;
            items.push(item.clone());
            labels.push(c);
        }
        added.push(ids.len());
    }
    Ok(Balanced { items, labels, added })
}

/// Surrogate test metrics tagged with the split they were measured on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub metrics: ClassificationMetrics,
    pub test_fingerprint: u64,
    pub test_samples: usize,
}

/// Hash of the test images and labels.
pub fn split_fingerprint(test: &LabeledImages) -> u64 {
    let mut h = DefaultHasher::new();
    test.labels.hash(&mut h);
    test.x.shape().hash(&mut h);
    for v in &test.x.data {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationComparison {
    pub profile: String,
    pub baseline: ClassificationMetrics,
    pub augmented: ClassificationMetrics,
    pub delta_accuracy: f64,
    pub delta_macro_f1: f64,
    pub test_samples: usize,
}

pub fn evaluate_augmentation(profile: &str, baseline: &SplitMetrics, augmented: &SplitMetrics) -> Result<AugmentationComparison> {
    if baseline.test_fingerprint != augmented.test_fingerprint || baseline.test_samples != augmented.test_samples {
        return Err(Error::Contract("baseline and augmented metrics come from different test splits".into()));
    }
    Ok(AugmentationComparison {
        profile: profile.to_string(),
        delta_accuracy: augmented.metrics.accuracy - baseline.metrics.accuracy,
        delta_macro_f1: augmented.metrics.macro_f1 - baseline.metrics.macro_f1,
        baseline: baseline.metrics.clone(),
        augmented: augmented.metrics.clone(),
        test_samples: baseline.test_samples,
    })
}

/// `label & accuracy% & macro-F1 & test samples`, accuracy to one decimal and F1 to two.
pub fn table_row(label: &str, metrics: &ClassificationMetrics, test_samples: usize) -> String {
    format!(
        "{label} & {:.1} & {:.2} & {test_samples}",
        100.0 * metrics.accuracy,
        metrics.macro_f1
    )
}

impl AugmentationComparison {
    pub fn table(&self) -> String {
        format!(
            "{}\n{}\n{}\n",
            self.profile,
            table_row("Baseline", &self.baseline, self.test_samples),
            table_row("+ Augmentation", &self.augmented, self.test_samples)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub alpha_conf: f64,
    pub threshold_mode: ThresholdMode,
    /// Generated pool per class relative to `deficit / (1 − alpha_conf)`.
    pub pool_factor: f64,
    /// Pool size floor, so every class has enough scores to fit.
    pub min_pool: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            alpha_conf: 0.9,
            threshold_mode: ThresholdMode::Quantile,
            pool_factor: 2.0,
            min_pool: 64,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha_conf)?;
        if !(self.pool_factor >= 1.0 && self.pool_factor.is_finite()) {
            return Err(Error::config("pool_factor", "must be a finite value >= 1"));
        }
        if self.min_pool < 2 {
            return Err(Error::config("min_pool", "must be >= 2"));
        }
        Ok(())
    }

    /// Generated pool size for a class short by `deficit` samples.
    pub fn pool_size(&self, deficit: usize) -> usize {
        let raw = deficit as f64 / (1.0 - self.alpha_conf) * self.pool_factor;
        (raw.ceil() as usize).max(self.min_pool)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassAcceptance {
    pub class: usize,
    pub generated: usize,
    pub accepted: usize,
    pub added: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub alpha_conf: f64,
    pub threshold_mode: ThresholdMode,
    pub confidence_model: ConfidenceModel,
    pub per_class: Vec<ClassAcceptance>,
}

/// Everything produced by one augmentation round.
#[derive(Clone, Debug)]
pub struct AugmentationRun {
    /// Real training samples followed by the added synthetic ones.
    pub train: Vec<Sample>,
    pub report: AcceptanceReport,
    pub baseline: SplitMetrics,
    pub augmented: SplitMetrics,
    pub augmented_surrogate: SurrogateModel,
}

/// Tops up every class of `real_train` with generator samples that pass the
/// `baseline` surrogate's confidence filter, retrains a surrogate on the
/// balanced set and scores both surrogates on `real_test`.
pub fn run_augmentation(
    real_train: &[Sample],
    real_test: &[Sample],
    classes: usize,
    generator: &GanModel,
    baseline: &SurrogateModel,
    surrogate_cfg: &SurrogateConfig,
    cfg: &AugmentConfig,
) -> Result<AugmentationRun> {
    cfg.validate()?;
    if generator.classes() != classes {
        return Err(Error::config(
            "generator",
            format!("checkpoint has {} classes, data has {classes}", generator.classes()),
        ));
    }
    let train = LabeledImages::from_samples(real_train)?;
    let test = LabeledImages::from_samples(real_test)?;
    let fingerprint = split_fingerprint(&test);
    if baseline.classes() != classes || baseline.pixels() != train.x.cols {
        return Err(Error::config(
            "surrogate",
            format!(
                "surrogate expects {} pixels and {} classes, data has {} and {classes}",
                baseline.pixels(),
                baseline.classes(),
                train.x.cols
            ),
        ));
    }
    let base_metrics = baseline.evaluate(&test)?;
    info!("baseline surrogate: accuracy {:.3}, macro-F1 {:.3}", base_metrics.accuracy, base_metrics.macro_f1);

    let mut counts = vec![0usize; classes];
    for s in real_train {
        counts[s.label] += 1;
    }
    let target = counts.iter().copied().max().unwrap_or(0);

    let mut pool: Vec<Sample> = Vec::new();
    let mut candidates: Vec<Vec<Candidate>> = vec![Vec::new(); classes];
    for c in 0..classes {
        let n = cfg.pool_size(target - counts[c]);
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(c as u64);
        let images = generate(generator, c, n, seed)?;
        let x = crate::eval::image_rows(&images)?;
        let p = baseline.probabilities(&x)?;
        for (r, image) in images.into_iter().enumerate() {
            candidates[c].push(Candidate {
                id: pool.len(),
                confidence: p.get(r, c),
            });
            let descriptors = compute_descriptors(&image);
            pool.push(Sample {
                image,
                label: c,
                descriptors,
                seed,
            });
        }
    }
    let scores: Vec<Vec<f64>> = candidates
        .iter()
        .map(|k| k.iter().map(|k| k.confidence).collect())
        .collect();
    let model = fit_confidence_model(&scores, cfg.alpha_conf, cfg.threshold_mode)?;
    for c in (0..classes).filter(|&c| counts[c] < target) {
        let cut = model.cut(c)?;
        let best = scores[c].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if cut > best {
            warn!("class {c}: confidence cut {cut:.3} is above every generated confidence (max {best:.3})");
        }
    }
    let accepted = (0..classes)
        .map(|c| filter_samples(&candidates[c], &model, c))
        .collect::<Result<Vec<_>>>()?;
    let balanced = balance_dataset(real_train, &train.labels, &pool, &accepted)?;
    let per_class = (0..classes)
        .map(|c| ClassAcceptance {
            class: c,
            generated: candidates[c].len(),
            accepted: accepted[c].len(),
            added: balanced.added[c],
        })
        .collect();

    let aug_train = LabeledImages::from_samples(&balanced.items)?;
    let aug = train_surrogate(&aug_train, &test, classes, surrogate_cfg)?;
    info!("augmented surrogate: accuracy {:.3}, macro-F1 {:.3}", aug.metrics.accuracy, aug.metrics.macro_f1);
    Ok(AugmentationRun {
        train: balanced.items,
        report: AcceptanceReport {
            alpha_conf: cfg.alpha_conf,
            threshold_mode: cfg.threshold_mode,
            confidence_model: model,
            per_class,
        },
        baseline: SplitMetrics {
            metrics: base_metrics,
            test_fingerprint: fingerprint,
            test_samples: test.len(),
        },
        augmented: SplitMetrics {
            metrics: aug.metrics,
            test_fingerprint: fingerprint,
            test_samples: test.len(),
        },
        augmented_surrogate: aug.model,
    })
}
