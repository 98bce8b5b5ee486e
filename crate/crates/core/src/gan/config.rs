use serde::{Deserialize, Serialize};

use crate::autodiff::AdamHyper;
use crate::error::{Error, Result};
use crate::guidance::PeakDetectConfig;
use crate::structure::Boundary;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_w: f64,
    pub lambda_cls: f64,
    pub lambda_blur: f64,
    pub lambda_recon: f64,
    pub lambda_gp: f64,
    pub recon_start_epoch: usize,
    pub n_critic: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_w: 1.0,
            lambda_cls: 1.0,
            lambda_blur: 0.5,
            lambda_recon: 0.5,
            lambda_gp: 10.0,
            recon_start_epoch: 10,
            n_critic: 5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("weights.lambda_w", self.lambda_w),
            ("weights.lambda_cls", self.lambda_cls),
            ("weights.lambda_blur", self.lambda_blur),
            ("weights.lambda_recon", self.lambda_recon),
            ("weights.lambda_gp", self.lambda_gp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be a finite value >= 0"));
            }
        }
        if self.n_critic == 0 {
            return Err(Error::config("weights.n_critic", "must be >= 1"));
        }
        Ok(())
    }
}

/// Switches that remove one mechanism each.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Use the configured ground-truth unit count instead of estimating it.
    pub disable_fft: bool,
    pub disable_blur: bool,
    pub disable_recon: bool,
}

/// How real critic batches are drawn from the training set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealSampling {
    /// Uniform over images, so batches follow the training label distribution.
    Uniform,
    /// Uniform over classes, then uniform within the class.
    #[default]
    ClassBalanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub generator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            generator_hidden: vec![256, 512],
            critic_hidden: vec![512, 256],
            leaky_slope: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub image_side: usize,
    pub d_z: usize,
    pub classes: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Generator iterations per epoch; `None` means `⌊n_train / batch_size⌋`.
    pub steps_per_epoch: Option<usize>,
    pub generator_optimizer: AdamHyper,
    pub critic_optimizer: AdamHyper,
    pub weights: LossWeights,
    pub peaks: PeakDetectConfig,
    pub ablation: Ablation,
    pub network: NetworkConfig,
    /// Generator iterations between unit-count re-estimates.
    pub fft_refresh_interval: usize,
    /// Unit count used when `ablation.disable_fft` is set.
    pub true_unit_count: usize,
    pub blur_boundary: Boundary,
    pub real_sampling: RealSampling,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            image_side: 64,
            d_z: 128,
            classes: 3,
            batch_size: 16,
            epochs: 100,
            steps_per_epoch: None,
            generator_optimizer: AdamHyper::default(),
            critic_optimizer: AdamHyper::default(),
            weights: LossWeights::default(),
            peaks: PeakDetectConfig::default(),
            ablation: Ablation::default(),
            network: NetworkConfig::default(),
            fft_refresh_interval: 1,
            true_unit_count: 8,
            blur_boundary: Boundary::Reflect,
            real_sampling: RealSampling::ClassBalanced,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_side < 4 {
            return Err(Error::config("image_side", "must be >= 4"));
        }
        if self.d_z == 0 {
            return Err(Error::config("d_z", "must be >= 1"));
        }
        if self.classes < 2 {
            return Err(Error::config("classes", "must be >= 2"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be >= 2 (interpolation needs pairs)"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::config("steps_per_epoch", "must be >= 1"));
        }
        if self.fft_refresh_interval == 0 {
            return Err(Error::config("fft_refresh_interval", "must be >= 1"));
        }
        if self.true_unit_count == 0 || self.true_unit_count > self.image_side {
            return Err(Error::config("true_unit_count", "must lie in [1, image_side]"));
        }
        if self.network.generator_hidden.is_empty() || self.network.critic_hidden.is_empty() {
            return Err(Error::config("network", "each network needs at least one hidden layer"));
        }
        if self.network.generator_hidden.contains(&0) || self.network.critic_hidden.contains(&0) {
            return Err(Error::config("network", "layer widths must be >= 1"));
        }
        if !(self.network.leaky_slope >= 0.0 && self.network.leaky_slope < 1.0) {
            return Err(Error::config("network.leaky_slope", "must lie in [0, 1)"));
        }
        self.generator_optimizer.validate()?;
        self.critic_optimizer.validate()?;
        self.weights.validate()?;
        self.peaks.validate()?;
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.image_side * self.image_side
    }
}
