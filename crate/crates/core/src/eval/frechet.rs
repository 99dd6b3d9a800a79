use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Eigenvalues above `-NEG_TOL · max(1, λ_max)` are treated as round-off and clipped to 0.
pub const NEG_TOL: f64 = 1e-8;

/// Gaussian summary (mean, covariance) of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    /// Mean and unbiased covariance of the rows of `features`.
    pub fn from_rows(features: &Tensor) -> Result<Self> {
        let (m, d) = (features.rows(), features.cols());
        if m < 2 {
            return Err(Error::invalid(format!("feature statistics need ≥ 2 samples, got {m}")));
        }
        let x = DMatrix::from_row_iterator(m, d, features.data().iter().map(|&v| v as f64));
        Ok(Self::from_matrix(&x))
    }

    pub fn from_matrix(x: &DMatrix<f64>) -> Self {
        let m = x.nrows();
        let mean = x.row_mean().transpose();
        let mut c = x.clone();
        for mut row in c.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = (c.transpose() * &c) / (m as f64 - 1.0);
        Self { mean, cov, count: m }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn psd_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut e = SymmetricEigen::new(sym);
    let top = e.eigenvalues.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    for v in e.eigenvalues.iter_mut() {
        if *v < -NEG_TOL * top {
            return Err(Error::invalid(format!("matrix is not positive semidefinite (eigenvalue {v:e})")));
        }
        *v = v.max(0.0);
    }
    Ok(e)
}

/// Symmetric PSD square root.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = psd_eigen(m)?;
    let s = DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt));
    Ok(&e.eigenvectors * s * e.eigenvectors.transpose())
}

/// `‖μ_A − μ_B‖² + tr(Σ_A + Σ_B − 2 (Σ_A Σ_B)^{1/2})`, with the trace of the
/// cross term computed as `Σ √λ` of the symmetric `√Σ_A Σ_B √Σ_A`.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("feature dimensions {} and {}", a.dim(), b.dim())));
    }
    if a.mean == b.mean && a.cov == b.cov {
        return Ok(0.0);
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let sa = sqrt_psd(&a.cov)?;
    let cross = psd_eigen(&(&sa * &b.cov * &sa))?.eigenvalues.iter().map(|v| v.sqrt()).sum::<f64>();
    let d = diff + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn stats_1d(mean: f64, var: f64) -> FeatureStats {
        FeatureStats { mean: DVector::from_element(1, mean), cov: DMatrix::from_element(1, 1, var), count: 2 }
    }

    #[test]
    fn one_dimensional_closed_forms() {
        assert!((frechet_distance(&stats_1d(0.0, 1.0), &stats_1d(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((frechet_distance(&stats_1d(0.0, 1.0), &stats_1d(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(frechet_distance(&stats_1d(0.3, 2.0), &stats_1d(0.3, 2.0)).unwrap(), 0.0);
    }

    fn random_spd(d: usize, seed: u64) -> DMatrix<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut r));
        &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn identical_and_symmetric() {
        let a = FeatureStats { mean: DVector::from_element(6, 0.2), cov: random_spd(6, 1), count: 10 };
        let b = FeatureStats { mean: DVector::from_fn(6, |i, _| i as f64 * 0.1), cov: random_spd(6, 2), count: 10 };
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!(ab > 0.1);
        assert!((ab - ba).abs() < 1e-8 * ab.max(1.0));
    }

    #[test]
    fn commuting_covariances_match_diagonal_formula() {
        let da = [1.0, 2.0, 0.5, 3.0];
        let db = [4.0, 0.5, 0.5, 1.0];
        let a = FeatureStats { mean: DVector::zeros(4), cov: DMatrix::from_diagonal(&DVector::from_row_slice(&da)), count: 2 };
        let b = FeatureStats { mean: DVector::zeros(4), cov: DMatrix::from_diagonal(&DVector::from_row_slice(&db)), count: 2 };
        let want: f64 = da.iter().zip(&db).map(|(x, y): (&f64, &f64)| (x.sqrt() - y.sqrt()).powi(2)).sum();
        assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn sample_estimate_matches_true_parameters() {
        let d = 4;
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let ca = random_spd(d, 4);
        let cb = random_spd(d, 5);
        let mb = DVector::from_fn(d, |i, _| 0.5 - 0.3 * i as f64);
        let draw = |cov: &DMatrix<f64>, mean: &DVector<f64>, r: &mut ChaCha8Rng| {
            let l = cov.clone().cholesky().unwrap().l();
            DMatrix::<f64>::from_fn(10_000, d, |_, _| StandardNormal.sample(r))
                .row_iter()
                .map(|z| (&l * z.transpose() + mean).transpose())
                .collect::<Vec<_>>()
        };
        let xa = DMatrix::from_rows(&draw(&ca, &DVector::zeros(d), &mut r));
        let xb = DMatrix::from_rows(&draw(&cb, &mb, &mut r));
        let est = frechet_distance(&FeatureStats::from_matrix(&xa), &FeatureStats::from_matrix(&xb)).unwrap();
        let truth = frechet_distance(
            &FeatureStats { mean: DVector::zeros(d), cov: ca, count: 0 },
            &FeatureStats { mean: mb, cov: cb, count: 0 },
        )
        .unwrap();
        assert!((est - truth).abs() < 0.05 * truth, "{est} vs {truth}");
    }

    #[test]
    fn errors() {
        let a = stats_1d(0.0, 1.0);
        let b = FeatureStats { mean: DVector::zeros(2), cov: DMatrix::identity(2, 2), count: 2 };
        assert!(frechet_distance(&a, &b).is_err());
        assert!(frechet_distance(&stats_1d(0.0, -1.0), &a).is_err());
        assert!(FeatureStats::from_rows(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn from_rows_uses_unbiased_covariance() {
        let t = Tensor::new(&[3, 2], vec![1.0, 0.0, 2.0, 0.0, 3.0, 3.0]).unwrap();
        let s = FeatureStats::from_rows(&t).unwrap();
        assert_eq!(s.mean.as_slice(), &[2.0, 1.0]);
        assert!((s.cov[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((s.cov[(1, 1)] - 3.0).abs() < 1e-12);
        assert!((s.cov[(0, 1)] - 1.5).abs() < 1e-12);
    }
}
