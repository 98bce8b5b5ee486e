//! Conditional WGAN-GP with auxiliary classification and structure-aware
//! blur and reconstruction regularizers.

mod checkpoint;
mod config;
mod model;
mod train;

pub use checkpoint::{Block, Checkpoint, OptimizerSnapshot, CHECKPOINT_FORMAT_VERSION};
pub use config::{Ablation, LossWeights, NetworkConfig, RealSampling, TrainConfig};
pub use model::{
    condition_latent, critic_loss, critic_step, generator_loss, generator_step, gradient_penalty, interpolate,
    record_generator, record_gradient_penalty, sample_latent, CriticLosses, CriticOutputs, GanModel,
    GeneratorLosses, StructureTerms, EMBEDDING_BLOCK,
};
pub use train::{
    generate, generate_continuous, image_grid, metrics_csv, row_image, train, EpochMetrics, TrainOutcome,
    Trainer, TrainingSet, METRICS_HEADER,
};
