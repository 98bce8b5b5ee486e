//! Surrogate classifier, feature statistics and distribution scores.

mod metrics;
mod report;
mod stats;
mod surrogate;

pub use metrics::{argmax, classification_metrics, ClassificationMetrics};
pub use report::{topofid_csv, topofid_report, TopoFidReport, TopoFidRow, DEFAULT_IS_SPLITS, TOPOFID_HEADER};
pub use stats::{frechet_distance, gaussian_stats, inception_score, GaussianStats, PSD_TOLERANCE, ROW_SUM_TOLERANCE};
pub use surrogate::{
    extract_features, image_rows, train_surrogate, LabeledImages, SurrogateConfig, SurrogateFit, SurrogateModel,
};
