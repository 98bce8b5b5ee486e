use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{RealSampling, TrainConfig};
use super::model::{critic_step, generator_step, sample_latent, GanModel, GeneratorLosses, StructureTerms};
use crate::autodiff::{AdamState, Tensor2};
use crate::error::{Error, Result};
use crate::guidance::{batch_mode, estimate_unit_count};
use crate::pattern::{BinaryPattern, ContinuousPattern, Sample};
use crate::structure::{
    blur_kernel_size, blur_matrix, clamp_kernel, consensus_continuous, retile_reconstruction, BlurConfig,
    ConsensusMode,
};

/// Training images as `{-1, +1}` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub side: usize,
    pub classes: usize,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl TrainingSet {
    pub fn from_samples(samples: &[Sample], classes: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Contract("training set is empty".into()))?;
        let side = first.image.height();
        let mut images = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.image.height() != side || s.image.width() != side {
                return Err(Error::Contract(format!(
                    "sample {i} is {}x{}, expected {side}x{side}",
                    s.image.height(),
                    s.image.width()
                )));
            }
            if s.label >= classes {
                return Err(Error::Label { label: s.label, classes });
            }
            images.push(s.image.to_signed().data().to_vec());
            labels.push(s.label);
        }
        Ok(TrainingSet {
            side,
            classes,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// One row of the metrics log: epoch means of the loss components and the
/// structure state after the last iteration of the epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub iter: usize,
    pub l_d: f64,
    pub l_w: f64,
    pub l_cls: f64,
    pub l_blur: f64,
    pub l_recon: f64,
    pub p_h: usize,
    pub p_w: usize,
    pub k: usize,
}

pub const METRICS_HEADER: &str = "epoch,iter,L_D,L_W,L_cls,L_blur,L_recon,p_h,p_w,k";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            m.epoch, m.iter, m.l_d, m.l_w, m.l_cls, m.l_blur, m.l_recon, m.p_h, m.p_w, m.k
        );
    }
    s
}

/// Converts a batch row to an image.
pub fn row_image(x: &Tensor2, r: usize, side: usize) -> ContinuousPattern {
    ContinuousPattern::new(side, side, x.row(r).to_vec()).expect("row length is side²")
}

pub struct Trainer {
    cfg: TrainConfig,
    model: GanModel,
    g_opt: AdamState,
    c_opt: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
    iteration: usize,
    guide: Guide,
    /// Image indices per non-empty class.
    by_class: Vec<Vec<usize>>,
}

/// Cached unit-count estimate and blur matrices.
struct Guide {
    cfg: TrainConfig,
    estimate: Option<(usize, usize, bool)>,
    blur_cache: HashMap<usize, Arc<Tensor2>>,
    recon_skips: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: &TrainingSet) -> Result<Self> {
        cfg.validate()?;
        if data.side != cfg.image_side {
            return Err(Error::config(
                "image_side",
                format!("dataset images are {0}x{0}, config says {1}", data.side, cfg.image_side),
            ));
        }
        if data.classes != cfg.classes {
            return Err(Error::config(
                "classes",
                format!("dataset has {} classes, config says {}", data.classes, cfg.classes),
            ));
        }
        if data.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = GanModel::init(&cfg, &mut rng)?;
        let g_opt = AdamState::new(&model.generator);
        let c_opt = AdamState::new(&model.critic);
        let mut by_class = vec![Vec::new(); cfg.classes];
        for (i, &y) in data.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class.retain(|v| !v.is_empty());
        Ok(Trainer {
            by_class,
            guide: Guide {
                cfg: cfg.clone(),
                estimate: None,
                blur_cache: HashMap::new(),
                recon_skips: 0,
            },
            cfg,
            model,
            g_opt,
            c_opt,
            rng,
            epoch: 0,
            iteration: 0,
        })
    }

    pub fn model(&self) -> &GanModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Generator steps whose reconstruction term was skipped for an invalid estimate.
    pub fn recon_skips(&self) -> usize {
        self.guide.recon_skips
    }

    pub fn steps_per_epoch(&self, data: &TrainingSet) -> usize {
        self.cfg
            .steps_per_epoch
            .unwrap_or_else(|| (data.len() / self.cfg.batch_size).max(1))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.cfg,
            &self.model,
            &self.g_opt,
            &self.c_opt,
            self.rng.get_word_pos(),
            self.epoch,
            self.iteration,
        )
    }

    fn real_batch(&mut self, data: &TrainingSet) -> (Tensor2, Vec<usize>) {
        let b = self.cfg.batch_size;
        let mut x = Vec::with_capacity(b * self.cfg.pixels());
        let mut labels = Vec::with_capacity(b);
        for _ in 0..b {
            let i = match self.cfg.real_sampling {
                RealSampling::Uniform => self.rng.gen_range(0..data.len()),
                RealSampling::ClassBalanced => {
                    let pool = &self.by_class[self.rng.gen_range(0..self.by_class.len())];
                    pool[self.rng.gen_range(0..pool.len())]
                }
            };
            x.extend_from_slice(&data.images[i]);
            labels.push(data.labels[i]);
        }
        (Tensor2::from_vec(b, self.cfg.pixels(), x), labels)
    }

    fn random_labels(&mut self) -> Vec<usize> {
        (0..self.cfg.batch_size)
            .map(|_| self.rng.gen_range(0..self.cfg.classes))
            .collect()
    }

    /// Runs `steps` generator iterations (each preceded by `n_critic` critic steps).
    pub fn run_epoch(&mut self, data: &TrainingSet) -> Result<EpochMetrics> {
        if data.len() != self.by_class.iter().map(Vec::len).sum::<usize>() {
            return Err(Error::Contract("run_epoch needs the training set the trainer was built with".into()));
        }
        let steps = self.steps_per_epoch(data);
        let (mut sum_d, mut n_d) = (0.0, 0usize);
        let mut sum_g = GeneratorLosses::default();
        let mut last = (1, 1, 1);
        for _ in 0..steps {
            for _ in 0..self.cfg.weights.n_critic {
                let (real, real_labels) = self.real_batch(data);
                let fake_labels = self.random_labels();
                let z = sample_latent(&mut self.rng, self.cfg.batch_size, self.cfg.d_z);
                let fake = self.model.generate(&z, &fake_labels)?;
                let eps: Vec<f64> = (0..self.cfg.batch_size).map(|_| self.rng.gen::<f64>()).collect();
                let l = critic_step(
                    &mut self.model,
                    &mut self.c_opt,
                    &self.cfg.critic_optimizer,
                    &self.cfg.weights,
                    &real,
                    &real_labels,
                    &fake,
                    &eps,
                    self.iteration,
                )?;
                sum_d += l.l_d;
                n_d += 1;
            }
            let labels = self.random_labels();
            let z = sample_latent(&mut self.rng, self.cfg.batch_size, self.cfg.d_z);
            let (epoch, iteration) = (self.epoch, self.iteration);
            let guide = &mut self.guide;
            let mut terms = |x: &Tensor2| guide.structure_terms(x, epoch, iteration, &mut last);
            let l = generator_step(
                &mut self.model,
                &mut self.g_opt,
                &self.cfg.generator_optimizer,
                &self.cfg.weights,
                &z,
                &labels,
                self.cfg.image_side,
                &mut terms,
                iteration,
            )?;
            sum_g.l_w += l.l_w;
            sum_g.l_cls += l.l_cls;
            sum_g.l_blur += l.l_blur;
            sum_g.l_recon += l.l_recon;
            self.iteration += 1;
        }
        self.epoch += 1;
        let n = steps as f64;
        Ok(EpochMetrics {
            epoch: self.epoch - 1,
            iter: self.iteration,
            l_d: if n_d > 0 { sum_d / n_d as f64 } else { 0.0 },
            l_w: sum_g.l_w / n,
            l_cls: sum_g.l_cls / n,
            l_blur: sum_g.l_blur / n,
            l_recon: sum_g.l_recon / n,
            p_h: last.0,
            p_w: last.1,
            k: last.2,
        })
    }
}

impl Guide {
    fn blur_mats(&mut self, k: usize) -> Result<Arc<Tensor2>> {
        if let Some(m) = self.blur_cache.get(&k) {
            return Ok(m.clone());
        }
        let cfg = BlurConfig::for_kernel(k, self.cfg.blur_boundary)?;
        let m = Arc::new(blur_matrix(self.cfg.image_side, &cfg));
        self.blur_cache.insert(k, m.clone());
        Ok(m)
    }

    /// Unit counts for this iteration, refreshed from `x` when due.
    fn unit_counts(&mut self, x: &Tensor2, iteration: usize) -> Result<(usize, usize, bool)> {
        if self.cfg.ablation.disable_fft {
            let t = self.cfg.true_unit_count;
            return Ok((t, t, true));
        }
        if self.estimate.is_none() || iteration % self.cfg.fft_refresh_interval == 0 {
            let side = self.cfg.image_side;
            let estimates = (0..x.rows)
                .map(|r| estimate_unit_count(&row_image(x, r, side).binarize().to_continuous(), &self.cfg.peaks))
                .collect::<Result<Vec<_>>>()?;
            self.estimate = batch_mode(&estimates);
        }
        Ok(self.estimate.unwrap_or((1, 1, false)))
    }

    fn structure_terms(
        &mut self,
        x: &Tensor2,
        epoch: usize,
        iteration: usize,
        state: &mut (usize, usize, usize),
    ) -> Result<StructureTerms> {
        let side = self.cfg.image_side;
        let (p_h, p_w, valid) = self.unit_counts(x, iteration)?;
        let k = clamp_kernel(blur_kernel_size(side, side, p_h, p_w)?, side, side);
        *state = (p_h, p_w, k);
        let blur = if !self.cfg.ablation.disable_blur && k > 1 {
            let m = self.blur_mats(k)?;
            Some((m.clone(), m))
        } else {
            None
        };
        let recon_active = !self.cfg.ablation.disable_recon && epoch >= self.cfg.weights.recon_start_epoch;
        let recon_target = if recon_active && valid {
            let mut t = Tensor2::zeros(x.rows, x.cols);
            for r in 0..x.rows {
                let c = consensus_continuous(&row_image(x, r, side), p_h, p_w, ConsensusMode::Median)?;
                let full = retile_reconstruction(&c.cell, side, side);
                t.data[r * x.cols..(r + 1) * x.cols].copy_from_slice(full.data());
            }
            Some(t)
        } else {
            if recon_active {
                self.recon_skips += 1;
                log::debug!("iteration {iteration}: invalid unit-count estimate, reconstruction skipped");
            }
            None
        };
        Ok(StructureTerms { blur, recon_target })
    }
}

/// Final state of a training run. `divergence` is set when a NaN stopped the
/// run; the checkpoint then holds the last good state.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub divergence: Option<Error>,
}

/// Trains for `cfg.epochs` epochs, calling `on_epoch` after each one.
pub fn train(
    cfg: TrainConfig,
    data: &TrainingSet,
    mut on_epoch: impl FnMut(&Trainer, &EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg, data)?;
    let mut metrics = Vec::new();
    let epochs = trainer.cfg.epochs;
    for _ in 0..epochs {
        match trainer.run_epoch(data) {
            Ok(m) => {
                on_epoch(&trainer, &m)?;
                metrics.push(m);
            }
            Err(e @ Error::Divergence { .. }) => {
                log::error!("{e}");
                return Ok(TrainOutcome {
                    checkpoint: trainer.checkpoint(),
                    metrics,
                    divergence: Some(e),
                });
            }
            Err(e) => return Err(e),
        }
    }
    if trainer.recon_skips() > 0 {
        log::info!("reconstruction skipped on {} generator steps", trainer.recon_skips());
    }
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        metrics,
        divergence: None,
    })
}

/// Continuous generator outputs for `n` samples of class `label`.
pub fn generate_continuous(model: &GanModel, label: usize, n: usize, seed: u64) -> Result<Vec<ContinuousPattern>> {
    if label >= model.classes() {
        return Err(Error::Label {
            label,
            classes: model.classes(),
        });
    }
    if n == 0 {
        return Ok(vec![]);
    }
    let side = (model.pixels() as f64).sqrt().round() as usize;
    if side * side != model.pixels() {
        return Err(Error::Contract(format!("generator width {} is not a square image", model.pixels())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_latent(&mut rng, n, model.d_z());
    let x = model.generate(&z, &vec![label; n])?;
    Ok((0..n).map(|r| row_image(&x, r, side)).collect())
}

/// `n` binarized samples of class `label`; deterministic per seed.
pub fn generate(model: &GanModel, label: usize, n: usize, seed: u64) -> Result<Vec<BinaryPattern>> {
    Ok(generate_continuous(model, label, n, seed)?
        .iter()
        .map(ContinuousPattern::binarize)
        .collect())
}

/// Images laid out in a grid of `cols` columns with a 1-pixel background gutter.
pub fn image_grid(images: &[BinaryPattern], cols: usize) -> Option<BinaryPattern> {
    let first = images.first()?;
    let (h, w) = (first.height(), first.width());
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let mut out = BinaryPattern::zeros(rows * (h + 1) - 1, cols * (w + 1) - 1);
    for (n, img) in images.iter().enumerate() {
        let (r0, c0) = ((n / cols) * (h + 1), (n % cols) * (w + 1));
        for i in 0..h {
            for j in 0..w {
                out.set(r0 + i, c0 + j, img.get(i, j));
            }
        }
    }
    Some(out)
}
