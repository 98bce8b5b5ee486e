use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::autodiff::{matmul, Tensor2};
use crate::error::{Error, Result};

/// Negative eigenvalues down to `-PSD_TOLERANCE · max(1, max|λ|)` count as zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Mean and unbiased, symmetrized covariance of a feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Rows of `features` are samples.
pub fn gaussian_stats(features: &Tensor2) -> Result<GaussianStats> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::Contract(format!("covariance needs at least 2 samples, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = features.clone();
    for row in centered.data.chunks_mut(d) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let scatter = matmul(&centered, &centered, true, false);
    let cov = DMatrix::from_row_slice(d, d, &scatter.data) / (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats {
        mean: DVector::from_vec(mean),
        cov,
    })
}

fn checked_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{what} has non-finite entries")));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some(&low) = eig.eigenvalues.iter().find(|&&l| l < -PSD_TOLERANCE * scale) {
        return Err(Error::Numerical(format!(
            "{what} is not positive semi-definite (eigenvalue {low:e})"
        )));
    }
    Ok(eig)
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = checked_eigen(m, what)?;
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2(Σa Σb)^{1/2})`, with the trace term taken from
/// the eigenvalues of `Σa^{1/2} Σb Σa^{1/2}`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.shape() != (a.dim(), a.dim()) || b.cov.shape() != (b.dim(), b.dim()) {
        return Err(Error::Contract(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let root_a = psd_sqrt(&a.cov, "first covariance")?;
    checked_eigen(&b.cov, "second covariance")?;
    let inner = &root_a * &b.cov * &root_a;
    let cross: f64 = checked_eigen(&inner, "covariance product")?
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let diff = (&a.mean - &b.mean).norm_squared();
    let d = diff + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::Numerical("Fréchet distance is not finite".into()));
    }
    Ok(d.max(0.0))
}

/// Rows must be probability vectors within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// `exp(mean_x KL(p(y|x) ‖ p̄(y)))` over `splits` contiguous chunks; returns
/// the mean and population standard deviation across chunks.
pub fn inception_score(probabilities: &Tensor2, splits: usize) -> Result<(f64, f64)> {
    let (n, c) = probabilities.shape();
    if splits == 0 || n < splits {
        return Err(Error::Contract(format!("{n} rows cannot form {splits} splits")));
    }
    for r in 0..n {
        let row = probabilities.row(r);
        if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Contract(format!("row {r} has entries outside [0, 1]")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Contract(format!("row {r} sums to {s}, not 1")));
        }
    }
    let scores: Vec<f64> = (0..splits)
        .map(|k| {
            let (lo, hi) = (k * n / splits, (k + 1) * n / splits);
            let m = (hi - lo) as f64;
            let mut marginal = vec![0.0; c];
            for r in lo..hi {
                for (q, &p) in marginal.iter_mut().zip(probabilities.row(r)) {
                    *q += p;
                }
            }
            for q in &mut marginal {
                *q /= m;
            }
            let kl: f64 = (lo..hi)
                .map(|r| {
                    probabilities
                        .row(r)
                        .iter()
                        .zip(&marginal)
                        .filter(|(&p, _)| p > 0.0)
                        .map(|(&p, &q)| p * (p.ln() - q.ln()))
                        .sum::<f64>()
                })
                .sum();
            (kl / m).exp()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats_1d(mu: f64, var: f64) -> GaussianStats {
        GaussianStats {
            mean: DVector::from_vec(vec![mu]),
            cov: DMatrix::from_vec(1, 1, vec![var]),
        }
    }

    fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor2 {
        Tensor2::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    #[test]
    fn two_points_in_one_dimension() {
        let s = gaussian_stats(&Tensor2::from_vec(2, 1, vec![0.0, 2.0])).unwrap();
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.cov[(0, 0)], 2.0);
    }

    #[test]
    fn identical_rows_have_zero_covariance() {
        let s = gaussian_stats(&Tensor2::from_rows(&vec![vec![1.0, -3.0]; 5])).unwrap();
        assert!(s.cov.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_rows_is_contract_error() {
        assert!(matches!(
            gaussian_stats(&Tensor2::from_vec(1, 3, vec![0.0; 3])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, d) = (40, 6);
        let x = random_features(&mut rng, n, d);
        let s = gaussian_stats(&x).unwrap();
        for j in 0..d {
            let mu: f64 = (0..n).map(|r| x.get(r, j)).sum::<f64>() / n as f64;
            assert!((s.mean[j] - mu).abs() < 1e-12);
        }
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for r in 0..n {
                    acc += (x.get(r, i) - s.mean[i]) * (x.get(r, j) - s.mean[j]);
                }
                assert!((s.cov[(i, j)] - acc / (n - 1) as f64).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let d = frechet_distance(&stats_1d(0.0, 1.0), &stats_1d(1.0, 4.0)).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn self_distance_is_zero_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = gaussian_stats(&random_features(&mut rng, 50, 8)).unwrap();
        let b = gaussian_stats(&random_features(&mut rng, 30, 8)).unwrap();
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8);
        assert!(ab > 0.0);
    }

    #[test]
    fn diagonal_covariances_match_per_axis_formula() {
        let a = GaussianStats {
            mean: DVector::from_vec(vec![0.0, 1.0]),
            cov: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 9.0])),
        };
        let b = GaussianStats {
            mean: DVector::from_vec(vec![2.0, 1.0]),
            cov: DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
        };
        // (0-2)^2 + (1-2)^2 + (3-1)^2
        assert!((frechet_distance(&a, &b).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_covariance_is_accepted() {
        let x = Tensor2::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]);
        let a = gaussian_stats(&x).unwrap();
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn indefinite_covariance_is_numerical_error() {
        let bad = GaussianStats {
            mean: DVector::from_vec(vec![0.0, 0.0]),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]),
        };
        let ok = stats_1d(0.0, 1.0);
        assert!(matches!(frechet_distance(&bad, &bad), Err(Error::Numerical(_))));
        assert!(matches!(frechet_distance(&bad, &ok), Err(Error::Contract(_))));
    }

    #[test]
    fn one_hot_uniform_rows_score_class_count() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let mut r = vec![0.0; 3];
                r[i % 3] = 1.0;
                r
            })
            .collect();
        let (mean, std) = inception_score(&Tensor2::from_rows(&rows), 10).unwrap();
        assert!((mean - 3.0).abs() < 1e-14, "{mean}");
        assert!(std < 1e-14);
    }

    #[test]
    fn identical_rows_score_one() {
        let p = Tensor2::from_rows(&vec![vec![0.2, 0.3, 0.5]; 20]);
        let (mean, std) = inception_score(&p, 10).unwrap();
        assert!((mean - 1.0).abs() < 1e-15);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn score_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, c, splits) = (37, 4, 5);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let (mean, std) = inception_score(&Tensor2::from_rows(&rows), splits).unwrap();
        let mut scores = Vec::new();
        for k in 0..splits {
            let part = &rows[k * n / splits..(k + 1) * n / splits];
            let mut total = 0.0;
            for row in part {
                for j in 0..c {
                    let q = part.iter().map(|r| r[j]).sum::<f64>() / part.len() as f64;
                    total += row[j] * (row[j] / q).ln();
                }
            }
            scores.push((total / part.len() as f64).exp());
        }
        let m = scores.iter().sum::<f64>() / splits as f64;
        let s = (scores.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / splits as f64).sqrt();
        assert!((mean - m).abs() < 1e-10);
        assert!((std - s).abs() < 1e-10);
    }

    #[test]
    fn invalid_distributions_are_rejected() {
        assert!(inception_score(&Tensor2::from_rows(&[vec![0.5, 0.6]]), 1).is_err());
        assert!(inception_score(&Tensor2::from_rows(&[vec![1.5, -0.5]]), 1).is_err());
        assert!(inception_score(&Tensor2::from_rows(&[vec![0.5, 0.5]]), 2).is_err());
    }
}
