//! The matrix normal distribution `N_{r x m}(M, Sigma1, Sigma2)`.
//!
//! A matrix-valued `Y` is matrix normal when `vec(Y)` is Gaussian with
//! covariance `Sigma2 (x) Sigma1`. The two factors are identified only up to
//! a scalar trade-off `(a Sigma1, Sigma2 / a)`; [`identify_factors`] pins them
//! down by giving `Sigma2` unit Frobenius norm and a positive first diagonal
//! element. Densities are always evaluated through the two small factors,
//! never by forming the `rm x rm` Kronecker matrix.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::PdMatrix;

/// A Kronecker-structured covariance `Sigma2 (x) Sigma1`.
#[derive(Debug, Clone)]
pub struct KroneckerCov {
    pub sigma1: PdMatrix,
    pub sigma2: PdMatrix,
    pub normalized: bool,
}

impl KroneckerCov {
    pub fn new(sigma1: PdMatrix, sigma2: PdMatrix) -> Self {
        Self {
            sigma1,
            sigma2,
            normalized: false,
        }
    }
}

/// Rescales `(sigma1, sigma2)` to the identified pair `(d sigma1, sigma2 / d)`
/// with `d = sign(sigma2[0,0]) * ||sigma2||_F`, leaving the Kronecker product
/// unchanged.
pub fn identify_factors(sigma1: &PdMatrix, sigma2: &PdMatrix) -> KroneckerCov {
    let d = normalizer(sigma2.matrix());
    KroneckerCov {
        sigma1: PdMatrix::new_symmetrized(sigma1.matrix() * d).expect("rescaled PD stays PD"),
        sigma2: PdMatrix::new_symmetrized(sigma2.matrix() / d).expect("rescaled PD stays PD"),
        normalized: true,
    }
}

/// `sign(first diagonal) * Frobenius norm`; the rescaling constant shared by
/// the covariance and coefficient normalization conventions.
pub fn normalizer(m: &DMatrix<f64>) -> f64 {
    let lead = m[(0, 0)];
    let sign = if lead < 0.0 { -1.0 } else { 1.0 };
    sign * m.norm()
}

/// Empirical row/column covariance factors from a sample of matrices.
///
/// `cov_c = mean[(Y - Ybar)(Y - Ybar)']` and `cov_r = mean[(Y - Ybar)'(Y - Ybar)]`
/// estimate the column and row factors up to proportionality; the returned
/// pair reproduces `cov[vec(Y)]` and carries the [`identify_factors`]
/// normalization.
pub fn row_col_cov(sample: &[DMatrix<f64>]) -> Result<KroneckerCov> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::DegenerateSample(format!(
            "need at least 2 matrices, got {n}"
        )));
    }
    let (r, m) = sample[0].shape();
    let mut mean = DMatrix::zeros(r, m);
    for y in sample {
        if y.shape() != (r, m) {
            return Err(Error::DimensionMismatch {
                context: "row_col_cov",
                expected: format!("{r}x{m}"),
                found: format!("{}x{}", y.nrows(), y.ncols()),
            });
        }
        mean += y;
    }
    mean /= n as f64;

    let mut cov_c = DMatrix::zeros(r, r);
    let mut cov_r = DMatrix::zeros(m, m);
    for y in sample {
        let d = y - &mean;
        cov_c += &d * d.transpose();
        cov_r += d.transpose() * &d;
    }
    cov_c /= n as f64;
    cov_r /= n as f64;

    // tr(cov_c) = tr(Delta1) tr(Delta2) = tr(cov_r); dividing one factor by it
    // makes the Kronecker product match cov[vec(Y)].
    let total_var = cov_c.trace();
    if total_var <= 0.0 {
        return Err(Error::DegenerateSample(
            "sample has no variation; covariance factors are zero".into(),
        ));
    }
    let delta1 = PdMatrix::new_symmetrized(cov_c).map_err(|_| {
        Error::DegenerateSample("column covariance estimate is singular".into())
    })?;
    let delta2 = PdMatrix::new_symmetrized(cov_r / total_var).map_err(|_| {
        Error::DegenerateSample("row covariance estimate is singular".into())
    })?;
    Ok(identify_factors(&delta1, &delta2))
}

/// Matrix normal distribution with precomputed Cholesky factors, for repeated
/// density evaluation and sampling.
pub struct MatNormal {
    mean: DMatrix<f64>,
    chol1: Cholesky<f64, Dyn>,
    chol2: Cholesky<f64, Dyn>,
    logdet1: f64,
    logdet2: f64,
}

impl MatNormal {
    pub fn new(mean: DMatrix<f64>, sigma1: &PdMatrix, sigma2: &PdMatrix) -> Result<Self> {
        let (r, m) = mean.shape();
        if sigma1.dim() != r || sigma2.dim() != m {
            return Err(Error::DimensionMismatch {
                context: "MatNormal::new",
                expected: format!("sigma1 {r}x{r}, sigma2 {m}x{m}"),
                found: format!("sigma1 {0}x{0}, sigma2 {1}x{1}", sigma1.dim(), sigma2.dim()),
            });
        }
        let chol1 = sigma1.cholesky();
        let chol2 = sigma2.cholesky();
        let logdet1 = 2.0 * chol1.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let logdet2 = 2.0 * chol2.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            mean,
            chol1,
            chol2,
            logdet1,
            logdet2,
        })
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    /// Log-density of `vec(Y) ~ N(vec(mean), Sigma2 (x) Sigma1)`, evaluated
    /// through the factors in `O(r^2 m + r m^2)` per call.
    pub fn logpdf(&self, y: &DMatrix<f64>) -> Result<f64> {
        let (r, m) = self.mean.shape();
        if y.shape() != (r, m) {
            return Err(Error::DimensionMismatch {
                context: "MatNormal::logpdf",
                expected: format!("{r}x{m}"),
                found: format!("{}x{}", y.nrows(), y.ncols()),
            });
        }
        let d = y - &self.mean;
        let s1_inv_d = self.chol1.solve(&d);
        let s2_inv_dt = self.chol2.solve(&d.transpose());
        // tr(Sigma2^-1 D' Sigma1^-1 D)
        let quad = s2_inv_dt.dot(&s1_inv_d.transpose());
        let rm = (r * m) as f64;
        Ok(-0.5 * rm * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * (m as f64) * self.logdet1
            - 0.5 * (r as f64) * self.logdet2
            - 0.5 * quad)
    }

    /// Draws `Y = mean + A Z B'` with `A A' = Sigma1`, `B B' = Sigma2`, and
    /// `Z` iid standard normal. Deterministic for a fixed RNG state.
    pub fn sample(&self, rng: &mut impl Rng) -> DMatrix<f64> {
        let (r, m) = self.mean.shape();
        let z = DMatrix::from_fn(r, m, |_, _| rng.sample(StandardNormal));
        &self.mean + self.chol1.l() * z * self.chol2.l().transpose()
    }

    pub fn sample_n(&self, count: usize, rng: &mut impl Rng) -> Vec<DMatrix<f64>> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

/// One-shot log-density; see [`MatNormal::logpdf`].
pub fn matnorm_logpdf(
    y: &DMatrix<f64>,
    mean: &DMatrix<f64>,
    sigma1: &PdMatrix,
    sigma2: &PdMatrix,
) -> Result<f64> {
    MatNormal::new(mean.clone(), sigma1, sigma2)?.logpdf(y)
}

/// One-shot sampler; see [`MatNormal::sample`].
pub fn matnorm_sample(
    mean: &DMatrix<f64>,
    sigma1: &PdMatrix,
    sigma2: &PdMatrix,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<DMatrix<f64>>> {
    Ok(MatNormal::new(mean.clone(), sigma1, sigma2)?.sample_n(count, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron, symmetrize, vec_mat};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn randn(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn random_pd(rng: &mut impl Rng, k: usize) -> PdMatrix {
        let a = randn(rng, k, k);
        PdMatrix::new_symmetrized(symmetrize(&(&a * a.transpose())) + DMatrix::identity(k, k))
            .unwrap()
    }

    /// Dense oracle: multivariate normal log-density of vec(Y) with the full
    /// rm x rm Kronecker covariance, formed explicitly.
    fn mvn_logpdf_oracle(y: &DVector<f64>, mu: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let k = y.len() as f64;
        let chol = Cholesky::new(cov.clone()).unwrap();
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let d = y - mu;
        let quad = d.dot(&chol.solve(&d));
        -0.5 * k * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * quad
    }

    #[test]
    fn logpdf_standardized_mode() {
        let (r, m) = (3, 4);
        let mean = DMatrix::zeros(r, m);
        let lp = matnorm_logpdf(&mean, &mean, &PdMatrix::identity(r), &PdMatrix::identity(m))
            .unwrap();
        let expected = -0.5 * (r * m) as f64 * (2.0 * std::f64::consts::PI).ln();
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn logpdf_matches_dense_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..5 {
            let (r, m) = (3, 2);
            let s1 = random_pd(&mut rng, r);
            let s2 = random_pd(&mut rng, m);
            let mean = randn(&mut rng, r, m);
            let y = randn(&mut rng, r, m);
            let lp = matnorm_logpdf(&y, &mean, &s1, &s2).unwrap();
            let cov = kron(s2.matrix(), s1.matrix());
            let oracle = mvn_logpdf_oracle(&vec_mat(&y), &vec_mat(&mean), &cov);
            assert!((lp - oracle).abs() < 1e-10, "lp={lp} oracle={oracle}");
        }
    }

    #[test]
    fn logpdf_scale_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let s1 = random_pd(&mut rng, 2);
        let s2 = random_pd(&mut rng, 3);
        let mean = randn(&mut rng, 2, 3);
        let y = randn(&mut rng, 2, 3);
        let base = matnorm_logpdf(&y, &mean, &s1, &s2).unwrap();
        for a in [0.1, 2.0, 37.5] {
            let s1a = PdMatrix::new_symmetrized(s1.matrix() * a).unwrap();
            let s2a = PdMatrix::new_symmetrized(s2.matrix() / a).unwrap();
            let lp = matnorm_logpdf(&y, &mean, &s1a, &s2a).unwrap();
            assert!((lp - base).abs() < 1e-9);
        }
    }

    #[test]
    fn univariate_reduction_matches_closed_form() {
        let s1 = PdMatrix::new(DMatrix::from_element(1, 1, 2.25)).unwrap();
        let s2 = PdMatrix::identity(1);
        let mean = DMatrix::from_element(1, 1, 0.5);
        let y = DMatrix::from_element(1, 1, 1.7);
        let lp = matnorm_logpdf(&y, &mean, &s1, &s2).unwrap();
        let var: f64 = 2.25;
        let closed = -0.5 * (2.0 * std::f64::consts::PI * var).ln()
            - 0.5 * (1.7f64 - 0.5).powi(2) / var;
        assert!((lp - closed).abs() < 1e-12);
    }

    #[test]
    fn identify_factors_identity_pair() {
        let r = 3;
        let m = 4;
        let out = identify_factors(&PdMatrix::identity(r), &PdMatrix::identity(m));
        let root_m = (m as f64).sqrt();
        assert!((out.sigma1.matrix() - DMatrix::identity(r, r) * root_m).amax() < 1e-12);
        assert!((out.sigma2.matrix() - DMatrix::identity(m, m) / root_m).amax() < 1e-12);
        assert!(out.normalized);
    }

    #[test]
    fn identify_factors_idempotent_and_product_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let s1 = random_pd(&mut rng, 3);
        let s2 = random_pd(&mut rng, 2);
        let once = identify_factors(&s1, &s2);
        let twice = identify_factors(&once.sigma1, &once.sigma2);
        assert!((once.sigma2.matrix().norm() - 1.0).abs() < 1e-10);
        assert!((once.sigma1.matrix() - twice.sigma1.matrix()).amax() < 1e-10);
        let prod_in = kron(s2.matrix(), s1.matrix());
        let prod_out = kron(once.sigma2.matrix(), once.sigma1.matrix());
        assert!((prod_in - prod_out).amax() < 1e-10);
    }

    #[test]
    fn sampling_is_deterministic_under_seed() {
        let mut rng1 = ChaCha12Rng::seed_from_u64(99);
        let mut rng2 = ChaCha12Rng::seed_from_u64(99);
        let s1 = PdMatrix::identity(2);
        let s2 = PdMatrix::identity(3);
        let mean = DMatrix::zeros(2, 3);
        let a = matnorm_sample(&mean, &s1, &s2, 4, &mut rng1).unwrap();
        let b = matnorm_sample(&mean, &s1, &s2, 4, &mut rng2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn small_variance_concentrates_on_mean() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mean = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 0.5]);
        let eps = 1e-12;
        let s = PdMatrix::new(DMatrix::identity(2, 2) * eps).unwrap();
        let draw = &matnorm_sample(&mean, &s, &s, 1, &mut rng).unwrap()[0];
        assert!((draw - &mean).amax() < 1e-4);
    }

    #[test]
    fn monte_carlo_covariance_recovery() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let s1 = random_pd(&mut rng, 2);
        let s2 = random_pd(&mut rng, 2);
        let mean = DMatrix::zeros(2, 2);
        let n = 20_000;
        let sample = matnorm_sample(&mean, &s1, &s2, n, &mut rng).unwrap();

        // empirical covariance of vec(Y)
        let vecs: Vec<DVector<f64>> = sample.iter().map(vec_mat).collect();
        let mbar = vecs.iter().fold(DVector::zeros(4), |a, v| a + v) / n as f64;
        let mut cov = DMatrix::zeros(4, 4);
        for v in &vecs {
            let d = v - &mbar;
            cov += &d * d.transpose();
        }
        cov /= n as f64;
        let truth = kron(s2.matrix(), s1.matrix());
        let rel = (&cov - &truth).norm() / truth.norm();
        assert!(rel < 0.05, "relative error {rel}");

        // factor recovery through row/col covariances, compared in product space
        let fit = row_col_cov(&sample).unwrap();
        let prod = kron(fit.sigma2.matrix(), fit.sigma1.matrix());
        let rel_f = (&prod - &truth).norm() / truth.norm();
        assert!(rel_f < 0.10, "relative error {rel_f}");
    }

    #[test]
    fn row_col_cov_population_identity_scale() {
        // with Sigma1 = I_r, Sigma2 = I_m the population cov_r(Y) is r * I_m
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let (r, m) = (3, 2);
        let mean = DMatrix::zeros(r, m);
        let sample =
            matnorm_sample(&mean, &PdMatrix::identity(r), &PdMatrix::identity(m), 40_000, &mut rng)
                .unwrap();
        let mut cov_r = DMatrix::zeros(m, m);
        for y in &sample {
            cov_r += y.transpose() * y;
        }
        cov_r /= sample.len() as f64;
        assert!((cov_r - DMatrix::identity(m, m) * r as f64).amax() < 0.1);
    }

    #[test]
    fn constant_sample_is_degenerate() {
        let c = DMatrix::from_element(2, 2, 3.0);
        let sample = vec![c.clone(), c.clone(), c];
        assert!(matches!(
            row_col_cov(&sample),
            Err(Error::DegenerateSample(_))
        ));
    }
}
