use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use super::stats::{frechet_distance, gaussian_stats, inception_score};
use super::surrogate::{extract_features, SurrogateModel};
use crate::autodiff::Tensor2;
use crate::error::{Error, Result};

pub const DEFAULT_IS_SPLITS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopoFidReport {
    pub topofid: f64,
    pub is_mean: f64,
    pub is_std: f64,
    pub n_real: usize,
    pub n_gen: usize,
}

/// Fréchet distance between surrogate features of `real` and `generated`
/// plus the surrogate inception score of `generated`.
///
/// Uses `min(splits, n_gen)` score splits.
pub fn topofid_report(
    model: &SurrogateModel,
    real: &Tensor2,
    generated: &Tensor2,
    splits: usize,
) -> Result<TopoFidReport> {
    if real.rows == 0 || generated.rows == 0 {
        return Err(Error::Contract("both image sets must be non-empty".into()));
    }
    let d_f = model.feature_dim();
    for (name, n) in [("real", real.rows), ("generated", generated.rows)] {
        if n < d_f {
            warn!("{name} set has {n} images for {d_f} feature dimensions; covariance is rank deficient");
        }
    }
    let a = gaussian_stats(&extract_features(model, real)?)?;
    let b = gaussian_stats(&extract_features(model, generated)?)?;
    let topofid = frechet_distance(&a, &b)?;
    let (is_mean, is_std) = inception_score(&model.probabilities(generated)?, splits.min(generated.rows).max(1))?;
    Ok(TopoFidReport {
        topofid,
        is_mean,
        is_std,
        n_real: real.rows,
        n_gen: generated.rows,
    })
}

/// One line of the model comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopoFidRow {
    pub variant: String,
    pub report: TopoFidReport,
    pub seed: u64,
}

pub const TOPOFID_HEADER: &str = "variant,TopoFID,IS_mean,IS_std,n_real,n_gen,seed";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn topofid_csv(rows: &[TopoFidRow]) -> String {
    let mut s = String::from(TOPOFID_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            csv_field(&r.variant),
            r.report.topofid,
            r.report.is_mean,
            r.report.is_std,
            r.report.n_real,
            r.report.n_gen,
            r.seed
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::SurrogateConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> SurrogateModel {
        let cfg = SurrogateConfig {
            hidden: vec![6, 3],
            ..Default::default()
        };
        SurrogateModel::init(5, 3, &cfg).unwrap()
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor2::from_vec(20, 5, (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let r = topofid_report(&model(), &x, &x, 10).unwrap();
        assert!(r.topofid < 1e-6);
        assert_eq!((r.n_real, r.n_gen), (20, 20));
    }

    #[test]
    fn collapsed_generator_scores_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let real = Tensor2::from_vec(12, 5, (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let gen = Tensor2::from_rows(&vec![real.row(0).to_vec(); 12]);
        let r = topofid_report(&model(), &real, &gen, 10).unwrap();
        assert!((r.is_mean - 1.0).abs() < 1e-12);
        assert!(r.is_std < 1e-12);
        assert!(r.topofid > 0.0);
    }

    #[test]
    fn csv_has_header_and_quotes() {
        let rep = TopoFidReport {
            topofid: 1.5,
            is_mean: 2.0,
            is_std: 0.25,
            n_real: 3,
            n_gen: 4,
        };
        let text = topofid_csv(&[TopoFidRow {
            variant: "no-recon, seed".into(),
            report: rep,
            seed: 7,
        }]);
        assert_eq!(text, format!("{TOPOFID_HEADER}\n\"no-recon, seed\",1.5,2,0.25,3,4,7\n"));
    }
}
