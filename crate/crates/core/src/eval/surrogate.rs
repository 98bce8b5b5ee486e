use std::path::Path;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{argmax, classification_metrics, ClassificationMetrics};
use crate::autodiff::{adam_step, forward_on, mlp_infer, Activation, AdamHyper, AdamState, MlpSpec, ParameterSet, Tape, Tensor2};
use crate::error::{Error, Result};
use crate::io;
use crate::pattern::{BinaryPattern, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamHyper,
    /// Hidden layer whose activations serve as features; `None` is the last one.
    pub feature_layer: Option<usize>,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            hidden: vec![256, 64],
            leaky_slope: 0.01,
            epochs: 30,
            batch_size: 32,
            optimizer: AdamHyper {
                step_size: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            feature_layer: None,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("surrogate.hidden", "needs at least one layer of width >= 1"));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::config("surrogate.leaky_slope", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("surrogate.batch_size", "must be >= 1"));
        }
        if let Some(l) = self.feature_layer {
            if l >= self.hidden.len() {
                return Err(Error::config(
                    "surrogate.feature_layer",
                    format!("must be below the hidden layer count {}", self.hidden.len()),
                ));
            }
        }
        self.optimizer.validate()
    }
}

/// Signed images as rows plus their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImages {
    pub x: Tensor2,
    pub labels: Vec<usize>,
}

/// Flattens images to `{-1, +1}` rows; all must share one size.
pub fn image_rows<'a>(images: impl IntoIterator<Item = &'a BinaryPattern>) -> Result<Tensor2> {
    let mut data = Vec::new();
    let mut shape = None;
    let mut rows = 0;
    for (i, img) in images.into_iter().enumerate() {
        let s = (img.height(), img.width());
        match shape {
            None => shape = Some(s),
            Some(first) if first != s => {
                return Err(Error::Contract(format!(
                    "image {i} is {}x{}, expected {}x{}",
                    s.0, s.1, first.0, first.1
                )))
            }
            _ => {}
        }
        data.extend_from_slice(img.to_signed().data());
        rows += 1;
    }
    let cols = shape.map_or(0, |(h, w)| h * w);
    Ok(Tensor2::from_vec(rows, cols, data))
}

impl LabeledImages {
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        Ok(LabeledImages {
            x: image_rows(samples.iter().map(|s| &s.image))?,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn gather(&self, idx: &[usize]) -> (Tensor2, Vec<usize>) {
        let cols = self.x.cols;
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(self.x.row(i));
        }
        (Tensor2::from_vec(idx.len(), cols, data), idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Compact classifier standing in for a pretrained image network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateModel {
    pub spec: MlpSpec,
    pub params: ParameterSet,
    /// Index of the hidden layer used by [`SurrogateModel::features`].
    pub feature_layer: usize,
}

fn softmax_rows(logits: &mut Tensor2) {
    let c = logits.cols;
    for row in logits.data.chunks_mut(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

impl SurrogateModel {
    pub fn init(pixels: usize, classes: usize, cfg: &SurrogateConfig) -> Result<Self> {
        cfg.validate()?;
        if classes < 2 {
            return Err(Error::config("classes", "a classifier needs at least 2 classes"));
        }
        let mut widths = vec![pixels];
        widths.extend(&cfg.hidden);
        widths.push(classes);
        let spec = MlpSpec::new(widths, Activation::LeakyRelu(cfg.leaky_slope), Activation::Identity)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = spec.init(&mut rng);
        Ok(SurrogateModel {
            spec,
            params,
            feature_layer: cfg.feature_layer.unwrap_or(cfg.hidden.len() - 1),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.spec.check_params(&self.params)?;
        if self.feature_layer + 1 >= self.spec.layers() {
            return Err(Error::Contract(format!(
                "feature layer {} is not a hidden layer",
                self.feature_layer
            )));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.spec.output_width()
    }

    pub fn pixels(&self) -> usize {
        self.spec.input_width()
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.widths[self.feature_layer + 1]
    }

    pub fn logits(&self, x: &Tensor2) -> Result<Tensor2> {
        mlp_infer(&self.spec, &self.params.blocks, x)
    }

    pub fn probabilities(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut p = self.logits(x)?;
        softmax_rows(&mut p);
        Ok(p)
    }

    pub fn predict(&self, x: &Tensor2) -> Result<Vec<usize>> {
        let l = self.logits(x)?;
        Ok((0..l.rows).map(|r| argmax(l.row(r))).collect())
    }

    /// Activations of the feature layer, one row per image.
    pub fn features(&self, x: &Tensor2) -> Result<Tensor2> {
        let keep = self.feature_layer + 1;
        let spec = MlpSpec {
            widths: self.spec.widths[..=keep].to_vec(),
            hidden: self.spec.hidden,
            output: self.spec.hidden,
        };
        mlp_infer(&spec, &self.params.blocks[..2 * keep], x)
    }

    pub fn evaluate(&self, data: &LabeledImages) -> Result<ClassificationMetrics> {
        classification_metrics(&data.labels, &self.predict(&data.x)?, self.classes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: SurrogateModel = io::read_json(path)?;
        m.validate()?;
        Ok(m)
    }
}

/// Penultimate-layer features of `images`.
pub fn extract_features(model: &SurrogateModel, images: &Tensor2) -> Result<Tensor2> {
    model.features(images)
}

/// Mean cross-entropy of one minibatch and its parameter gradient.
fn batch_gradient(model: &SurrogateModel, x: Tensor2, labels: &[usize]) -> Result<(f64, ParameterSet)> {
    let mut tape = Tape::new();
    let input = tape.leaf(x);
    let params = model.params.to_leaves(&mut tape);
    let out = forward_on(&mut tape, &model.spec, &params, input)?.output;
    let (rows, classes) = tape.value(out).shape();
    let mut pick = Tensor2::zeros(rows, classes);
    for (r, &y) in labels.iter().enumerate() {
        pick.set(r, y, -1.0 / rows as f64);
    }
    let ls = tape.log_softmax(out);
    let pick = tape.leaf(pick);
    let picked = tape.mul(ls, pick);
    let loss = tape.sum_all(picked);
    let value = tape.value(loss).data[0];
    let grads = tape.grad(loss, &params, 1.0)?;
    Ok((value, model.params.from_nodes(&tape, &grads)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateFit {
    pub model: SurrogateModel,
    /// Metrics on the test split.
    pub metrics: ClassificationMetrics,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Trains the classifier with minibatch cross-entropy and Adam, then scores `test`.
pub fn train_surrogate(
    train: &LabeledImages,
    test: &LabeledImages,
    classes: usize,
    cfg: &SurrogateConfig,
) -> Result<SurrogateFit> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::config("data", "train and test splits must both be non-empty"));
    }
    if train.x.cols != test.x.cols {
        return Err(Error::Contract(format!(
            "train images have {} pixels, test images {}",
            train.x.cols, test.x.cols
        )));
    }
    for &l in train.labels.iter().chain(&test.labels) {
        if l >= classes {
            return Err(Error::Label { label: l, classes });
        }
    }
    let mut counts = vec![0usize; classes];
    for &l in &train.labels {
        counts[l] += 1;
    }
    if counts.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(Error::config("data", "training split contains a single class"));
    }
    let mut test_counts = vec![0usize; classes];
    for &l in &test.labels {
        test_counts[l] += 1;
    }
    if test_counts.iter().any(|&n| n != test_counts[0]) {
        warn!("test split is not class-balanced: {test_counts:?}");
    }

    let mut model = SurrogateModel::init(train.x.cols, classes, cfg)?;
    let mut state = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train.gather(chunk);
            let (loss, grads) = batch_gradient(&model, x, &y)?;
            adam_step(&mut model.params, &grads, &mut state, &cfg.optimizer)?;
            total += loss * chunk.len() as f64;
        }
        let mean = total / train.len() as f64;
        debug!("surrogate epoch {epoch}: loss {mean:.4}");
        loss_history.push(mean);
    }
    let metrics = model.evaluate(test)?;
    Ok(SurrogateFit {
        model,
        metrics,
        loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> LabeledImages {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let shift = if y == 0 { -1.0 } else { 1.0 };
            for j in 0..6 {
                let base = if j < 3 { shift } else { 0.0 };
                data.push(base + rng.gen_range(-0.3..0.3));
            }
            labels.push(y);
        }
        LabeledImages {
            x: Tensor2::from_vec(n, 6, data),
            labels,
        }
    }

    fn small_cfg(epochs: usize) -> SurrogateConfig {
        SurrogateConfig {
            hidden: vec![8, 4],
            epochs,
            batch_size: 8,
            ..Default::default()
        }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let fit = train_surrogate(&toy(64, 1), &toy(40, 2), 2, &small_cfg(40)).unwrap();
        assert_eq!(fit.metrics.accuracy, 1.0);
        assert!(fit.loss_history.last().unwrap() < &fit.loss_history[0]);
    }

    #[test]
    fn zero_epochs_scores_the_initial_model() {
        let cfg = small_cfg(0);
        let test = toy(20, 5);
        let fit = train_surrogate(&toy(10, 4), &test, 2, &cfg).unwrap();
        let init = SurrogateModel::init(6, 2, &cfg).unwrap();
        assert_eq!(fit.model, init);
        assert_eq!(fit.metrics, init.evaluate(&test).unwrap());
    }

    #[test]
    fn single_class_training_is_config_error() {
        let mut train = toy(10, 1);
        train.labels = vec![1; 10];
        assert!(matches!(
            train_surrogate(&train, &toy(4, 2), 2, &small_cfg(1)),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn features_match_truncated_forward() {
        let cfg = SurrogateConfig {
            hidden: vec![5, 3],
            ..Default::default()
        };
        let model = SurrogateModel::init(4, 2, &cfg).unwrap();
        let x = Tensor2::from_rows(&[vec![0.5, -1.0, 1.0, 0.25], vec![-0.5, 0.0, 1.0, -1.0]]);
        let f = extract_features(&model, &x).unwrap();
        assert_eq!(f.shape(), (2, 3));
        let act = model.spec.hidden;
        for r in 0..2 {
            let mut h = x.row(r).to_vec();
            for layer in 0..2 {
                let w = &model.params.blocks[2 * layer].tensor;
                let b = &model.params.blocks[2 * layer + 1].tensor;
                h = (0..w.cols)
                    .map(|j| act.eval(b.data[j] + (0..w.rows).map(|i| h[i] * w.get(i, j)).sum::<f64>()))
                    .collect();
            }
            for (a, e) in f.row(r).iter().zip(&h) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn features_do_not_depend_on_batch_company() {
        let model = SurrogateModel::init(6, 2, &small_cfg(0)).unwrap();
        let data = toy(5, 9);
        let all = extract_features(&model, &data.x).unwrap();
        let (one, _) = data.gather(&[3]);
        assert_eq!(extract_features(&model, &one).unwrap().row(0), all.row(3));
        let (dup, _) = data.gather(&[2, 2]);
        let f = extract_features(&model, &dup).unwrap();
        assert_eq!(f.row(0), f.row(1));
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let model = SurrogateModel::init(6, 2, &small_cfg(0)).unwrap();
        assert!(extract_features(&model, &Tensor2::zeros(1, 5)).is_err());
    }

    #[test]
    fn probabilities_are_normalized_and_model_round_trips() {
        let model = SurrogateModel::init(6, 3, &small_cfg(0)).unwrap();
        let p = model.probabilities(&toy(4, 3).x).unwrap();
        for r in 0..4 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        model.save(&path).unwrap();
        assert_eq!(SurrogateModel::load(&path).unwrap(), model);
    }
}
