//! Fréchet distance between Gaussians fitted to joint (features ⊕ one-hot
//! label) vectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::cgan::ConditionLabel;
use crate::codec::EncodedTest;

/// Added to every covariance diagonal before taking square roots.
pub const COVARIANCE_REGULARIZATION: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FjdError {
    #[error("need at least {needed} samples per set, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianSummary {
    /// Sample mean and unbiased covariance, with the diagonal regularized.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self, FjdError> {
        let d = samples.first().map_or(0, Vec::len);
        if samples.len() < d + 1 || samples.len() < 2 {
            return Err(FjdError::TooFewSamples {
                needed: (d + 1).max(2),
                got: samples.len(),
            });
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != d) {
            return Err(FjdError::Dimension(d, bad.len()));
        }
        let n = samples.len() as f64;
        let mut mean = DVector::zeros(d);
        for s in samples {
            for (m, &v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for s in samples {
            for i in 0..d {
                let di = s[i] - mean[i];
                for j in i..d {
                    cov[(i, j)] += di * (s[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / (n - 1.0);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
            cov[(i, i)] += COVARIANCE_REGULARIZATION;
        }
        Ok(Self { mean, covariance: cov })
    }
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues
/// from round-off are clamped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μ₁−μ₂‖² + tr(Σ₁ + Σ₂ − 2 (Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2})`, floored at 0.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> f64 {
    let diff = &a.mean - &b.mean;
    let s1 = sqrtm_psd(&a.covariance);
    let inner = &s1 * &b.covariance * &s1;
    let cross = sqrtm_psd(&inner);
    let d = diff.norm_squared() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross.trace();
    d.max(0.0)
}

pub fn frechet_distance_samples(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, FjdError> {
    let ga = GaussianSummary::fit(a)?;
    let gb = GaussianSummary::fit(b)?;
    if ga.mean.len() != gb.mean.len() {
        return Err(FjdError::Dimension(ga.mean.len(), gb.mean.len()));
    }
    Ok(frechet_distance(&ga, &gb))
}

pub fn joint_vector(features: &[f64], label: usize, num_labels: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(features.len() + num_labels);
    v.extend_from_slice(features);
    v.extend((0..num_labels).map(|k| if k == label { 1.0 } else { 0.0 }));
    v
}

/// Fréchet joint distance between two labeled sets of encoded tests.
pub fn fjd(
    real: &[(EncodedTest, ConditionLabel)],
    synthetic: &[(EncodedTest, ConditionLabel)],
    num_labels: usize,
) -> Result<f64, FjdError> {
    let joint = |set: &[(EncodedTest, ConditionLabel)]| -> Vec<Vec<f64>> {
        set.iter()
            .map(|(t, l)| joint_vector(&t.features, l.0, num_labels))
            .collect()
    };
    frechet_distance_samples(&joint(real), &joint(synthetic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Box–Muller standard normal.
    fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        sd * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn labeled(rows: &[[f64; 2]], label: usize) -> Vec<(EncodedTest, ConditionLabel)> {
        rows.iter()
            .map(|r| (EncodedTest { features: r.to_vec() }, ConditionLabel(label)))
            .collect()
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<[f64; 2]> = (0..200)
            .map(|_| [normal(&mut rng, 0.3), normal(&mut rng, 0.3)])
            .collect();
        let a = labeled(&rows, 1);
        assert!(fjd(&a, &a, 2).unwrap() < 1e-6);
    }

    #[test]
    fn point_masses_give_squared_shift() {
        let a = labeled(&[[0.0, 0.0]; 10], 0);
        let b = labeled(&[[1.0, 0.0]; 10], 0);
        assert!((fjd(&a, &b, 2).unwrap() - 1.0).abs() < 1e-9);
        let c = labeled(&[[0.3, 0.4]; 10], 0);
        assert!((fjd(&a, &c, 2).unwrap() - 0.25).abs() < 1e-9);
        // Different label, same features: the one-hot part moves by √2.
        let d = labeled(&[[0.0, 0.0]; 10], 1);
        assert!((fjd(&a, &d, 2).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn one_dimensional_normals_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a: Vec<Vec<f64>> = (0..10_000).map(|_| vec![normal(&mut rng, 1.0)]).collect();
        let b: Vec<Vec<f64>> = (0..10_000).map(|_| vec![normal(&mut rng, 2.0)]).collect();
        let d = frechet_distance_samples(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 0.15, "d = {d}");
    }

    #[test]
    fn too_few_samples() {
        let a = labeled(&[[0.0, 0.0]; 4], 0);
        assert_eq!(fjd(&a, &a, 2), Err(FjdError::TooFewSamples { needed: 5, got: 4 }));
    }

    #[test]
    fn sqrtm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0, -1e-18]));
        let r = sqrtm_psd(&m);
        assert!((r[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((r[(1, 1)] - 3.0).abs() < 1e-12);
        assert!(r[(2, 2)].abs() < 1e-12);
    }
}
