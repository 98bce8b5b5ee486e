//! Labeled synthetic datasets of tiled unit cells.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::descriptors::{compute_descriptors, DescriptorRecord};
use super::grid::BinaryPattern;
use super::pgm;
use super::raster::{render_unit_cell, tile, UnitCellSpec};
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Maps feature coverage to a class through ascending band edges.
///
/// With edges `[0.15, 0.35]`: class 0 is `[0, 0.15)`, 1 is `[0.15, 0.35)`,
/// 2 is `[0.35, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRule {
    pub coverage_edges: Vec<f64>,
}

impl Default for LabelRule {
    fn default() -> Self {
        LabelRule {
            coverage_edges: vec![0.15, 0.35],
        }
    }
}

impl LabelRule {
    pub fn classes(&self) -> usize {
        self.coverage_edges.len() + 1
    }

    pub fn label(&self, d: &DescriptorRecord) -> usize {
        self.coverage_edges
            .iter()
            .filter(|&&e| d.feature_coverage >= e)
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.coverage_edges;
        if e.iter().any(|&v| !(v > 0.0 && v < 1.0)) || e.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "label_rule.coverage_edges",
                "edges must be strictly ascending inside (0, 1)",
            ));
        }
        Ok(())
    }
}

/// Per-class sample counts modeled on published imbalance profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceProfile {
    pub train: Vec<usize>,
    pub test_per_class: usize,
}

impl ImbalanceProfile {
    pub fn named(name: &str) -> Option<Self> {
        let (train, test_per_class) = match name {
            "paeruginosa" => (vec![700, 387, 224], 180),
            "saureus" => (vec![469, 927, 236], 150),
            "macrophage" => (vec![1448, 190, 42], 40),
            _ => return None,
        };
        Some(ImbalanceProfile { train, test_per_class })
    }

    pub fn balanced(per_class: usize, classes: usize, test_per_class: usize) -> Self {
        ImbalanceProfile {
            train: vec![per_class; classes],
            test_per_class,
        }
    }

    /// Divides every count by `divisor`, keeping at least `floor` per class.
    pub fn scaled(&self, divisor: usize, floor: usize) -> Self {
        let s = |n: usize| ((n + divisor / 2) / divisor).max(floor);
        ImbalanceProfile {
            train: self.train.iter().map(|&n| s(n)).collect(),
            test_per_class: s(self.test_per_class),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Named profile (`paeruginosa`, `saureus`, `macrophage`); overrides the
    /// explicit counts when set.
    pub profile: Option<String>,
    /// Divisor applied to the named profile's counts.
    pub profile_scale: usize,
    pub train_counts: Vec<usize>,
    pub test_per_class: usize,
    pub image_side: usize,
    pub cell_side: usize,
    pub label_rule: LabelRule,
    /// Probability of replacing the label with a different random class.
    pub label_noise: f64,
    /// Per-pixel flip probability applied after tiling.
    pub pixel_noise: f64,
    pub seed: u64,
    /// Rejection-sampling budget per requested sample.
    pub max_attempts_per_sample: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            profile: None,
            profile_scale: 1,
            train_counts: vec![100, 100, 100],
            test_per_class: 30,
            image_side: 64,
            cell_side: 8,
            label_rule: LabelRule::default(),
            label_noise: 0.0,
            pixel_noise: 0.0,
            seed: 0,
            max_attempts_per_sample: 2000,
        }
    }
}

impl SynthConfig {
    /// Train counts and test size after applying any named profile.
    pub fn resolved_profile(&self) -> Result<ImbalanceProfile> {
        match &self.profile {
            Some(name) => {
                let p = ImbalanceProfile::named(name)
                    .ok_or_else(|| Error::config("profile", format!("unknown profile `{name}`")))?;
                if self.profile_scale == 0 {
                    return Err(Error::config("profile_scale", "must be >= 1"));
                }
                Ok(p.scaled(self.profile_scale, 2))
            }
            None => Ok(ImbalanceProfile {
                train: self.train_counts.clone(),
                test_per_class: self.test_per_class,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.label_rule.validate()?;
        let profile = self.resolved_profile()?;
        if profile.train.len() != self.label_rule.classes() {
            return Err(Error::config(
                "train_counts",
                format!(
                    "{} counts given for {} label classes",
                    profile.train.len(),
                    self.label_rule.classes()
                ),
            ));
        }
        if self.cell_side < 4 || self.image_side < self.cell_side || self.image_side % self.cell_side != 0 {
            return Err(Error::config(
                "cell_side",
                "cell side must be >= 4 and divide the image side",
            ));
        }
        for (key, p) in [("label_noise", self.label_noise), ("pixel_noise", self.pixel_noise)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(key, "probability must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Ground-truth unit count of every generated image.
    pub fn unit_count(&self) -> usize {
        self.image_side / self.cell_side
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: BinaryPattern,
    pub label: usize,
    pub descriptors: DescriptorRecord,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn class_counts(samples: &[Sample], classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for s in samples {
            c[s.label] += 1;
        }
        c
    }

    pub fn image_side(&self) -> Option<(usize, usize)> {
        self.train
            .first()
            .or(self.test.first())
            .map(|s| (s.image.height(), s.image.width()))
    }
}

/// Flips each pixel independently with probability `p`.
pub fn flip_pixels<R: Rng>(img: &BinaryPattern, p: f64, rng: &mut R) -> BinaryPattern {
    if p <= 0.0 {
        return img.clone();
    }
    let data = img
        .data()
        .iter()
        .map(|&v| if rng.gen_bool(p) { 1 - v } else { v })
        .collect();
    BinaryPattern::new(img.height(), img.width(), data).expect("flip keeps the shape")
}

/// Rejection-samples random tilings until every class quota is met.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let profile = cfg.resolved_profile()?;
    let classes = cfg.label_rule.classes();
    let p = cfg.unit_count();
    let needed: usize = profile.train.iter().sum::<usize>() + classes * profile.test_per_class;
    let budget = needed.max(1).saturating_mul(cfg.max_attempts_per_sample);

    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train: Vec<Sample> = Vec::new();
    let mut test: Vec<Sample> = Vec::new();
    let mut train_left = profile.train.clone();
    let mut test_left = vec![profile.test_per_class; classes];

    let mut attempts = 0usize;
    while train_left.iter().chain(&test_left).any(|&n| n > 0) {
        if attempts >= budget {
            let deficit: Vec<String> = (0..classes)
                .filter(|&c| train_left[c] + test_left[c] > 0)
                .map(|c| format!("class {c} short by {}", train_left[c] + test_left[c]))
                .collect();
            return Err(Error::config(
                "label_rule",
                format!("coverage band unreachable after {attempts} draws ({})", deficit.join(", ")),
            ));
        }
        attempts += 1;
        let seed: u64 = master.gen();
        let spec = UnitCellSpec::random(cfg.cell_side, seed);
        let cell = render_unit_cell(&spec)?;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let image = flip_pixels(&tile(&cell, p)?, cfg.pixel_noise, &mut noise_rng);
        let descriptors = compute_descriptors(&image);
        let mut label = cfg.label_rule.label(&descriptors);
        if cfg.label_noise > 0.0 && noise_rng.gen_bool(cfg.label_noise) {
            label = (label + noise_rng.gen_range(1..classes)) % classes;
        }
        let sample = Sample {
            image,
            label,
            descriptors,
            seed,
        };
        if train_left[label] > 0 {
            train_left[label] -= 1;
            train.push(sample);
        } else if test_left[label] > 0 {
            test_left[label] -= 1;
            test.push(sample);
        }
    }
    Ok(Dataset { classes, train, test })
}

/// One line of a manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub coverage: f64,
    pub mean_feature_area: f64,
    pub feature_count: usize,
    pub seed: u64,
}

impl ManifestEntry {
    fn new(path: String, s: &Sample) -> Self {
        ManifestEntry {
            path,
            label: s.label,
            coverage: s.descriptors.feature_coverage,
            mean_feature_area: s.descriptors.mean_feature_area,
            feature_count: s.descriptors.feature_count,
            seed: s.seed,
        }
    }
}

/// Train and test manifests; paths are relative to `root`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

pub const TRAIN_MANIFEST: &str = "train.jsonl";
pub const TEST_MANIFEST: &str = "test.jsonl";

fn encode_jsonl(entries: &[ManifestEntry]) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

fn decode_jsonl(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

impl DatasetManifest {
    pub fn class_counts(entries: &[ManifestEntry], classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for e in entries {
            if e.label < classes {
                c[e.label] += 1;
            }
        }
        c
    }

    pub fn classes(&self) -> usize {
        self.train
            .iter()
            .chain(&self.test)
            .map(|e| e.label + 1)
            .max()
            .unwrap_or(0)
    }

    /// Loads `train.jsonl`/`test.jsonl` from a directory, or a single
    /// manifest file (its sibling `test.jsonl` is picked up when present).
    pub fn load(path: &Path) -> Result<Self> {
        let (root, train_path) = if path.is_dir() {
            (path.to_path_buf(), path.join(TRAIN_MANIFEST))
        } else {
            (
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
                path.to_path_buf(),
            )
        };
        let train = decode_jsonl(&train_path)?;
        let test_path = root.join(TEST_MANIFEST);
        let test = if test_path.exists() && test_path != train_path {
            decode_jsonl(&test_path)?
        } else {
            Vec::new()
        };
        Ok(DatasetManifest { root, train, test })
    }

    pub fn save(&self) -> Result<()> {
        write_atomic(&self.root.join(TRAIN_MANIFEST), encode_jsonl(&self.train)?.as_bytes())?;
        write_atomic(&self.root.join(TEST_MANIFEST), encode_jsonl(&self.test)?.as_bytes())
    }

    fn load_split(&self, entries: &[ManifestEntry]) -> Result<Vec<Sample>> {
        entries
            .iter()
            .map(|e| {
                let image = pgm::read_binary(&self.root.join(&e.path))?;
                Ok(Sample {
                    image,
                    label: e.label,
                    descriptors: DescriptorRecord {
                        feature_coverage: e.coverage,
                        mean_feature_area: e.mean_feature_area,
                        feature_count: e.feature_count,
                    },
                    seed: e.seed,
                })
            })
            .collect()
    }

    /// Reads every referenced image.
    pub fn load_images(&self) -> Result<Dataset> {
        Ok(Dataset {
            classes: self.classes(),
            train: self.load_split(&self.train)?,
            test: self.load_split(&self.test)?,
        })
    }
}

/// Writes images under `dir/images/` and both manifests into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<DatasetManifest> {
    let write_split = |name: &str, samples: &[Sample]| -> Result<Vec<ManifestEntry>> {
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let rel = format!("images/{name}_{i:05}.pgm");
                pgm::write_binary(&dir.join(&rel), &s.image)?;
                Ok(ManifestEntry::new(rel, s))
            })
            .collect()
    };
    let train = write_split("train", &data.train)?;
    let test = write_split("test", &data.test)?;
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        train,
        test,
    };
    manifest.save()?;
    Ok(manifest)
}

/// Appends generated samples under `dir/images/` and returns their entries.
pub fn write_samples(dir: &Path, prefix: &str, samples: &[Sample]) -> Result<Vec<ManifestEntry>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let rel = format!("images/{prefix}_{i:05}.pgm");
            pgm::write_binary(&dir.join(&rel), &s.image)?;
            Ok(ManifestEntry::new(rel, s))
        })
        .collect()
}

/// Label histogram keyed by class, for reports.
pub fn histogram(labels: impl Iterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}
