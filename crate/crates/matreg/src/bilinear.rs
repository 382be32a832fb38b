//! Maximum likelihood for the bilinear matrix regression
//! `Y = mu + B1 X B2' + E` with Kronecker error covariance, via the
//! alternating (flip-flop) algorithm, plus the vectorized baseline model,
//! parameter counting, and goodness-of-fit comparison.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::dataset::MatrixDataset;
use crate::error::{Error, Result};
use crate::linalg::{kron, symmetrize, vec_mat, PdMatrix};
use crate::matnorm::normalizer;
use crate::prob::chi_square_sf;

/// Options for the alternating fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative log-likelihood change below which the alternation stops.
    pub tol: f64,
    /// Apply the identification rescaling to `(B1, B2)` and `(S1, S2)`.
    pub normalize: bool,
    /// Add `1e-8 * trace/dim` ridge to a singular step matrix instead of
    /// failing. Off by default: silent regularization would bias the MLE.
    pub ridge_jitter: bool,
    pub init: BetaInit,
}

/// Initialization of the column coefficient matrix.
#[derive(Debug, Clone, Copy)]
pub enum BetaInit {
    /// Matrix of ones scaled to unit Frobenius norm.
    Ones,
    /// Standard normal entries scaled to unit Frobenius norm.
    Random(u64),
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            normalize: true,
            ridge_jitter: false,
            init: BetaInit::Ones,
        }
    }
}

/// Fitted bilinear matrix regression.
#[derive(Debug, Clone)]
pub struct BilinearFit {
    pub mu: DMatrix<f64>,
    pub beta1: DMatrix<f64>,
    pub beta2: DMatrix<f64>,
    pub sigma1: PdMatrix,
    pub sigma2: PdMatrix,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub loglik_trace: Vec<f64>,
    pub normalized: bool,
    /// Predictor mean removed before fitting (original scale).
    pub x_mean: DMatrix<f64>,
    pub n: usize,
}

impl BilinearFit {
    /// `B2 (x) B1`, invariant to the identification rescaling.
    pub fn coefficient_product(&self) -> DMatrix<f64> {
        kron(&self.beta2, &self.beta1)
    }

    /// `S2 (x) S1`, invariant to the identification rescaling.
    pub fn covariance_product(&self) -> DMatrix<f64> {
        kron(self.sigma2.matrix(), self.sigma1.matrix())
    }

    /// Fitted mean response for a predictor on the original (uncentered) scale.
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let xc = x - &self.x_mean;
        &self.mu + &self.beta1 * xc * self.beta2.transpose()
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.beta1.nrows(),
            self.beta2.nrows(),
            self.beta1.ncols(),
            self.beta2.ncols(),
        )
    }
}

/// Relative-change stopping rule on a log-likelihood trace.
pub(crate) fn converged_rel(trace: &[f64], ll: f64, tol: f64) -> bool {
    match trace.last() {
        Some(&prev) => (ll - prev).abs() / (1.0 + prev.abs()) < tol,
        None => false,
    }
}

/// Centered per-unit quantities shared by the fitting routines.
pub(crate) struct Prepared {
    pub yc: Vec<DMatrix<f64>>,
    pub xs: Vec<DMatrix<f64>>,
    pub ybar: DMatrix<f64>,
    pub x_mean: DMatrix<f64>,
    pub n: usize,
    pub r: usize,
    pub m: usize,
    pub p1: usize,
    pub p2: usize,
}

impl Prepared {
    pub fn new(data: &MatrixDataset) -> Self {
        let centered = data.center_predictors();
        let ybar = centered.response_mean();
        let yc = centered.ys().iter().map(|y| y - &ybar).collect();
        let x_mean = centered
            .x_mean()
            .cloned()
            .unwrap_or_else(|| DMatrix::zeros(centered.p1(), centered.p2()));
        Self {
            yc,
            xs: centered.xs().to_vec(),
            ybar,
            x_mean,
            n: centered.n(),
            r: centered.r(),
            m: centered.m(),
            p1: centered.p1(),
            p2: centered.p2(),
        }
    }
}

/// Existence conditions for the alternating estimators: residual scatter
/// matrices need `nm > r` and `nr > m`, the step matrices need
/// `p1 <= min(p2, m) n` and `p2 <= min(p1, r) n`.
pub(crate) fn check_estimability(n: usize, r: usize, m: usize, p1: usize, p2: usize) -> Result<()> {
    let ok = n * m > r && n * r > m && p1 <= p2.min(m) * n && p2 <= p1.min(r) * n;
    if !ok {
        let required = (r as f64 / m as f64)
            .max(m as f64 / r as f64)
            .max(p1 as f64 / p2.min(m) as f64)
            .max(p2 as f64 / p1.min(r) as f64);
        return Err(Error::SampleTooSmall { n, required });
    }
    Ok(())
}

fn chol_or_jitter(
    mat: DMatrix<f64>,
    which: &'static str,
    iteration: usize,
    jitter: bool,
) -> Result<Cholesky<f64, Dyn>> {
    let sym = symmetrize(&mat);
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Ok(c);
    }
    if jitter {
        let k = sym.nrows();
        let eps = 1e-8 * sym.trace().abs().max(1.0) / k as f64;
        if let Some(c) = Cholesky::new(sym + DMatrix::identity(k, k) * eps) {
            return Ok(c);
        }
    }
    Err(Error::SingularStep { which, iteration })
}

/// One conditional step output: the coefficient update and the two scatter
/// matrices used by both the plain and envelope fits.
pub(crate) struct CondStep {
    pub coef: DMatrix<f64>,
    pub s_res: DMatrix<f64>,
    pub s_y: DMatrix<f64>,
}

/// Given `(beta2, Sigma2)`, the conditional update of the row side:
/// `B_{1|2} = C2 M2^-1`, `S_res|2`, and the scatter `S_Y|2`.
pub(crate) fn cond_step_given2(
    p: &Prepared,
    beta2: &DMatrix<f64>,
    chol2: &Cholesky<f64, Dyn>,
    iteration: usize,
    jitter: bool,
) -> Result<CondStep> {
    let s2inv_b2 = chol2.solve(beta2);
    let k2 = beta2.transpose() * &s2inv_b2;
    let mut c2 = DMatrix::zeros(p.r, p.p1);
    let mut m2 = DMatrix::zeros(p.p1, p.p1);
    for i in 0..p.n {
        c2 += &p.yc[i] * &s2inv_b2 * p.xs[i].transpose();
        m2 += &p.xs[i] * &k2 * p.xs[i].transpose();
    }
    let m2c = chol_or_jitter(m2, "M2", iteration, jitter)?;
    let coef = m2c.solve(&c2.transpose()).transpose();

    let mut s_res = DMatrix::zeros(p.r, p.r);
    let mut s_y = DMatrix::zeros(p.r, p.r);
    for i in 0..p.n {
        let ri = &p.yc[i] - &coef * &p.xs[i] * beta2.transpose();
        s_res += &ri * chol2.solve(&ri.transpose());
        s_y += &p.yc[i] * chol2.solve(&p.yc[i].transpose());
    }
    let scale = (p.n * p.m) as f64;
    Ok(CondStep {
        coef,
        s_res: symmetrize(&(s_res / scale)),
        s_y: symmetrize(&(s_y / scale)),
    })
}

/// Given `(beta1, Sigma1)`, the conditional update of the column side:
/// `B_{2|1} = C1 M1^-1`, `S_res|1`, and the scatter `S_Y|1`.
pub(crate) fn cond_step_given1(
    p: &Prepared,
    beta1: &DMatrix<f64>,
    chol1: &Cholesky<f64, Dyn>,
    iteration: usize,
    jitter: bool,
) -> Result<CondStep> {
    let s1inv_b1 = chol1.solve(beta1);
    let k1 = beta1.transpose() * &s1inv_b1;
    let mut c1 = DMatrix::zeros(p.m, p.p2);
    let mut m1 = DMatrix::zeros(p.p2, p.p2);
    for i in 0..p.n {
        c1 += p.yc[i].transpose() * &s1inv_b1 * &p.xs[i];
        m1 += p.xs[i].transpose() * &k1 * &p.xs[i];
    }
    let m1c = chol_or_jitter(m1, "M1", iteration, jitter)?;
    let coef = m1c.solve(&c1.transpose()).transpose();

    let mut s_res = DMatrix::zeros(p.m, p.m);
    let mut s_y = DMatrix::zeros(p.m, p.m);
    for i in 0..p.n {
        let ri = p.yc[i].transpose() - &coef * p.xs[i].transpose() * beta1.transpose();
        s_res += &ri * chol1.solve(&ri.transpose());
        s_y += p.yc[i].transpose() * chol1.solve(&p.yc[i]);
    }
    let scale = (p.n * p.r) as f64;
    Ok(CondStep {
        coef,
        s_res: symmetrize(&(s_res / scale)),
        s_y: symmetrize(&(s_y / scale)),
    })
}

/// Initial `Sigma2 = n^-1 sum (Y_i - Ybar)'(Y_i - Ybar)`.
pub(crate) fn init_sigma2(p: &Prepared) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(p.m, p.m);
    for yc in &p.yc {
        s += yc.transpose() * yc;
    }
    symmetrize(&(s / p.n as f64))
}

pub(crate) fn init_beta2(p: &Prepared, init: BetaInit) -> DMatrix<f64> {
    let raw = match init {
        BetaInit::Ones => DMatrix::from_element(p.m, p.p2, 1.0),
        BetaInit::Random(seed) => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            DMatrix::from_fn(p.m, p.p2, |_, _| rng.sample(StandardNormal))
        }
    };
    let norm = raw.norm();
    raw / norm
}

/// Log-likelihood of the bilinear model on centered data through the
/// Cholesky factors of the covariance factors.
pub(crate) fn loglik_centered(
    p: &Prepared,
    beta1: &DMatrix<f64>,
    beta2: &DMatrix<f64>,
    chol1: &Cholesky<f64, Dyn>,
    chol2: &Cholesky<f64, Dyn>,
) -> f64 {
    let logdet1: f64 = 2.0 * chol1.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let logdet2: f64 = 2.0 * chol2.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut quad = 0.0;
    for i in 0..p.n {
        let ri = &p.yc[i] - beta1 * &p.xs[i] * beta2.transpose();
        quad += chol2.solve(&ri.transpose()).dot(&chol1.solve(&ri).transpose());
    }
    let (nf, rf, mf) = (p.n as f64, p.r as f64, p.m as f64);
    -0.5 * nf * rf * mf * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * nf * mf * logdet1
        - 0.5 * nf * rf * logdet2
        - 0.5 * quad
}

/// Log-likelihood of given parameters on a dataset, with predictors used
/// exactly as supplied.
pub fn loglik_bilinear(
    data: &MatrixDataset,
    mu: &DMatrix<f64>,
    beta1: &DMatrix<f64>,
    beta2: &DMatrix<f64>,
    sigma1: &PdMatrix,
    sigma2: &PdMatrix,
) -> Result<f64> {
    let chol1 = sigma1.cholesky();
    let chol2 = sigma2.cholesky();
    let logdet1: f64 = 2.0 * chol1.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let logdet2: f64 = 2.0 * chol2.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let (r, m) = (data.r(), data.m());
    if mu.shape() != (r, m) || beta1.nrows() != r || beta2.nrows() != m {
        return Err(Error::DimensionMismatch {
            context: "loglik_bilinear",
            expected: format!("mu {r}x{m}, beta1 {r}xp1, beta2 {m}xp2"),
            found: format!(
                "mu {}x{}, beta1 {}x{}, beta2 {}x{}",
                mu.nrows(),
                mu.ncols(),
                beta1.nrows(),
                beta1.ncols(),
                beta2.nrows(),
                beta2.ncols()
            ),
        });
    }
    let mut total = 0.0;
    for i in 0..data.n() {
        let ri = &data.ys()[i] - mu - beta1 * &data.xs()[i] * beta2.transpose();
        let quad = chol2.solve(&ri.transpose()).dot(&chol1.solve(&ri).transpose());
        total += -0.5 * (r * m) as f64 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * m as f64 * logdet1
            - 0.5 * r as f64 * logdet2
            - 0.5 * quad;
    }
    Ok(total)
}

/// Rescales `(b1, b2)` so `b2` has unit Frobenius norm and positive leading
/// element of `vec(b2)`; falls back to the first nonzero element when the
/// leading one is exactly zero.
pub(crate) fn normalize_pair(b1: &mut DMatrix<f64>, b2: &mut DMatrix<f64>) {
    let norm = b2.norm();
    if norm == 0.0 {
        return;
    }
    let mut sign = 0.0;
    for &v in b2.as_slice() {
        if v != 0.0 {
            sign = v.signum();
            break;
        }
    }
    if sign == 0.0 {
        sign = 1.0;
    }
    let c = sign * norm;
    *b2 /= c;
    *b1 *= c;
}

/// MLE of the bilinear matrix regression by alternating the two conditional
/// updates until the log-likelihood settles.
pub fn fit_bilinear(data: &MatrixDataset, opts: &FitOptions) -> Result<BilinearFit> {
    let p = Prepared::new(data);
    check_estimability(p.n, p.r, p.m, p.p1, p.p2)?;

    let mut beta2 = init_beta2(&p, opts.init);
    let sigma2_init = init_sigma2(&p);
    let mut chol2 = Cholesky::new(sigma2_init.clone()).ok_or(Error::DegenerateSample(
        "initial row covariance is singular".into(),
    ))?;
    let mut sigma2 = sigma2_init;

    let mut beta1 = DMatrix::zeros(p.r, p.p1);
    let mut sigma1 = DMatrix::identity(p.r, p.r);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it + 1;

        let step1 = cond_step_given2(&p, &beta2, &chol2, it, opts.ridge_jitter)?;
        beta1 = step1.coef;
        sigma1 = step1.s_res;
        let chol1 = chol_or_jitter(sigma1.clone(), "S_res|2", it, opts.ridge_jitter)?;

        let step2 = cond_step_given1(&p, &beta1, &chol1, it, opts.ridge_jitter)?;
        beta2 = step2.coef;
        sigma2 = step2.s_res;
        chol2 = chol_or_jitter(sigma2.clone(), "S_res|1", it, opts.ridge_jitter)?;

        let ll = loglik_centered(&p, &beta1, &beta2, &chol1, &chol2);
        let done = converged_rel(&trace, ll, opts.tol);
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
    }

    let mut fit = BilinearFit {
        mu: p.ybar.clone(),
        beta1,
        beta2,
        sigma1: PdMatrix::new_symmetrized(sigma1).map_err(|_| Error::SingularStep {
            which: "S_res|2",
            iteration: iterations,
        })?,
        sigma2: PdMatrix::new_symmetrized(sigma2).map_err(|_| Error::SingularStep {
            which: "S_res|1",
            iteration: iterations,
        })?,
        loglik: *trace.last().expect("at least one iteration"),
        iterations,
        converged,
        loglik_trace: trace,
        normalized: false,
        x_mean: p.x_mean.clone(),
        n: p.n,
    };
    if opts.normalize {
        apply_normalization(&mut fit);
    }
    Ok(fit)
}

fn apply_normalization(fit: &mut BilinearFit) {
    normalize_pair(&mut fit.beta1, &mut fit.beta2);
    let d = normalizer(fit.sigma2.matrix());
    let s1 = fit.sigma1.matrix() * d;
    let s2 = fit.sigma2.matrix() / d;
    fit.sigma1 = PdMatrix::new_symmetrized(s1).expect("rescaled PD stays PD");
    fit.sigma2 = PdMatrix::new_symmetrized(s2).expect("rescaled PD stays PD");
    fit.normalized = true;
}

/// Fitted vectorized baseline model `vec(Y) = mu + nu vec(X) + e`.
#[derive(Debug, Clone)]
pub struct VectorModelFit {
    pub mu: DVector<f64>,
    pub nu: DMatrix<f64>,
    pub sigma: PdMatrix,
    pub loglik: f64,
    pub n: usize,
    pub dims: (usize, usize, usize, usize),
}

/// OLS fit of the vectorized regression with the n-divisor residual
/// covariance MLE.
pub fn fit_vector_model(data: &MatrixDataset) -> Result<VectorModelFit> {
    let centered = data.center_predictors();
    let n = centered.n();
    let q = centered.r() * centered.m();
    let s = centered.p1() * centered.p2();

    let ys: Vec<DVector<f64>> = centered.ys().iter().map(vec_mat).collect();
    let xs: Vec<DVector<f64>> = centered.xs().iter().map(vec_mat).collect();
    let ybar = ys.iter().fold(DVector::zeros(q), |a, y| a + y) / n as f64;

    let mut sxx = DMatrix::zeros(s, s);
    let mut syx = DMatrix::zeros(q, s);
    for i in 0..n {
        sxx += &xs[i] * xs[i].transpose();
        syx += (&ys[i] - &ybar) * xs[i].transpose();
    }
    let sxx_chol = Cholesky::new(symmetrize(&sxx)).ok_or_else(|| {
        Error::SingularDesign("vec(X) scatter matrix is singular".into())
    })?;
    let nu = sxx_chol.solve(&syx.transpose()).transpose();

    let mut sigma = DMatrix::zeros(q, q);
    let mut resids = Vec::with_capacity(n);
    for i in 0..n {
        let e = &ys[i] - &ybar - &nu * &xs[i];
        sigma += &e * e.transpose();
        resids.push(e);
    }
    sigma /= n as f64;
    let sigma = PdMatrix::new_symmetrized(sigma).map_err(|_| {
        Error::SingularDesign("residual covariance MLE is singular (n too small)".into())
    })?;

    let chol = sigma.cholesky();
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut loglik = -0.5 * (n * q) as f64 * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * n as f64 * logdet;
    for e in &resids {
        loglik -= 0.5 * e.dot(&chol.solve(e));
    }

    Ok(VectorModelFit {
        mu: ybar,
        nu,
        sigma,
        loglik,
        n,
        dims: (centered.r(), centered.m(), centered.p1(), centered.p2()),
    })
}

/// Which regression model a parameter count refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Vector,
    Bilinear,
    Envelope,
}

/// Whether the two identification constraints (unit-norm `B2` and `S2`) are
/// subtracted from the count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountConvention {
    /// Plain sum of parameter-block sizes.
    #[default]
    Raw,
    /// Subtract 2 for the norm constraints on `B2` and `S2`.
    WithConstraints,
}

/// Number of real parameters in each model; `u1, u2` only matter for the
/// envelope kind.
#[allow(clippy::too_many_arguments)]
pub fn count_params(
    kind: ModelKind,
    r: usize,
    m: usize,
    p1: usize,
    p2: usize,
    u1: usize,
    u2: usize,
    convention: CountConvention,
) -> Result<usize> {
    if u1 > r || u2 > m {
        return Err(Error::DimensionOutOfRange {
            u: if u1 > r { u1 } else { u2 },
            max: if u1 > r { r } else { m },
        });
    }
    let tri = |k: usize| k * (k + 1) / 2;
    let constraint = match convention {
        CountConvention::Raw => 0,
        CountConvention::WithConstraints => 2,
    };
    let count = match kind {
        ModelKind::Vector => r * m + r * m * p1 * p2 + tri(r * m),
        ModelKind::Bilinear => r * m + r * p1 + m * p2 + tri(r) + tri(m) - constraint,
        ModelKind::Envelope => r * m + u1 * p1 + u2 * p2 + tri(r) + tri(m) - constraint,
    };
    Ok(count)
}

/// `(AIC, BIC) = (-2 ll + 2 t, -2 ll + ln(n) t)`.
pub fn information_criteria(loglik: f64, n: usize, t: usize) -> (f64, f64) {
    let aic = -2.0 * loglik + 2.0 * t as f64;
    let bic = -2.0 * loglik + (n as f64).ln() * t as f64;
    (aic, bic)
}

/// Likelihood ratio test of the Kronecker-structured model (null) against
/// the unstructured vectorized model.
pub fn lrt_kron(
    vector_fit: &VectorModelFit,
    bilinear_fit: &BilinearFit,
    convention: CountConvention,
) -> Result<(f64, usize, f64)> {
    let (r, m, p1, p2) = bilinear_fit.dims();
    if vector_fit.dims != (r, m, p1, p2) || vector_fit.n != bilinear_fit.n {
        return Err(Error::DimensionMismatch {
            context: "lrt_kron",
            expected: format!("matching fits on {r}x{m} responses, n={}", bilinear_fit.n),
            found: format!("vector fit dims {:?}, n={}", vector_fit.dims, vector_fit.n),
        });
    }
    let stat = (2.0 * (vector_fit.loglik - bilinear_fit.loglik)).max(0.0);
    let t_vec = count_params(ModelKind::Vector, r, m, p1, p2, 0, 0, convention)?;
    let t_bil = count_params(ModelKind::Bilinear, r, m, p1, p2, 0, 0, convention)?;
    let df = t_vec - t_bil;
    let pvalue = chi_square_sf(stat, df as f64);
    Ok((stat, df, pvalue))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::commutation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn randn(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    /// Noisy data from known coefficients, identity covariances.
    fn gen_data(
        rng: &mut impl Rng,
        n: usize,
        beta1: &DMatrix<f64>,
        beta2: &DMatrix<f64>,
        noise: f64,
    ) -> MatrixDataset {
        let (r, p1) = beta1.shape();
        let (m, p2) = beta2.shape();
        let mu = randn(rng, r, m);
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for _ in 0..n {
            let x = randn(rng, p1, p2);
            let e = randn(rng, r, m) * noise;
            ys.push(&mu + beta1 * &x * beta2.transpose() + e);
            xs.push(x);
        }
        MatrixDataset::new(ys, xs).unwrap()
    }

    #[test]
    fn scalar_case_matches_simple_regression() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let beta1 = DMatrix::from_element(1, 1, 1.3);
        let beta2 = DMatrix::from_element(1, 1, 1.0);
        let data = gen_data(&mut rng, 60, &beta1, &beta2, 0.5);
        let opts = FitOptions {
            tol: 1e-12,
            ..Default::default()
        };
        let fit = fit_bilinear(&data, &opts).unwrap();

        let xbar: f64 = data.xs().iter().map(|x| x[(0, 0)]).sum::<f64>() / 60.0;
        let ybar: f64 = data.ys().iter().map(|y| y[(0, 0)]).sum::<f64>() / 60.0;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..60 {
            let xc = data.xs()[i][(0, 0)] - xbar;
            num += (data.ys()[i][(0, 0)] - ybar) * xc;
            den += xc * xc;
        }
        let slope = num / den;
        let prod = fit.coefficient_product()[(0, 0)];
        assert!((prod - slope).abs() < 1e-8, "prod={prod} slope={slope}");
    }

    #[test]
    fn vector_response_matches_multivariate_ols() {
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let (r, p1, n) = (3, 2, 80);
        let beta1 = randn(&mut rng, r, p1);
        let beta2 = DMatrix::from_element(1, 1, 1.0);
        let data = gen_data(&mut rng, n, &beta1, &beta2, 0.3);
        let opts = FitOptions {
            tol: 1e-12,
            ..Default::default()
        };
        let fit = fit_bilinear(&data, &opts).unwrap();

        // multivariate OLS oracle on centered data
        let centered = data.center_predictors();
        let ybar = centered.response_mean();
        let mut sxx = DMatrix::zeros(p1, p1);
        let mut syx = DMatrix::zeros(r, p1);
        for i in 0..n {
            let x = &centered.xs()[i];
            sxx += x * x.transpose();
            syx += (&centered.ys()[i] - &ybar) * x.transpose();
        }
        let b_ols = &syx * sxx.try_inverse().unwrap();
        let prod = fit.coefficient_product();
        assert!(
            (&prod - &b_ols).amax() < 1e-8,
            "max diff {}",
            (&prod - &b_ols).amax()
        );

        // covariance product equals the n-divisor residual covariance MLE
        let mut sig = DMatrix::zeros(r, r);
        for i in 0..n {
            let e = &centered.ys()[i] - &ybar - &b_ols * &centered.xs()[i];
            sig += &e * e.transpose();
        }
        sig /= n as f64;
        assert!((fit.covariance_product() - sig).amax() < 1e-7);
    }

    #[test]
    fn near_noiseless_data_recovers_coefficients() {
        // exactly noiseless data has a singular covariance MLE; a vanishing
        // noise floor keeps the likelihood bounded while recovery stays sharp
        let mut rng = ChaCha12Rng::seed_from_u64(44);
        let beta1 = randn(&mut rng, 3, 2);
        let beta2 = randn(&mut rng, 4, 2);
        let truth = kron(&beta2, &beta1);
        let data = gen_data(&mut rng, 200, &beta1, &beta2, 1e-6);
        let fit = fit_bilinear(&data, &FitOptions::default()).unwrap();
        let err = (fit.coefficient_product() - truth).norm();
        assert!(err < 1e-6, "error {err}");
    }

    #[test]
    fn sample_size_condition_enforced() {
        let mut rng = ChaCha12Rng::seed_from_u64(45);
        let beta1 = randn(&mut rng, 5, 5);
        let beta2 = randn(&mut rng, 5, 5);
        let data = gen_data(&mut rng, 1, &beta1, &beta2, 0.5);
        assert!(matches!(
            fit_bilinear(&data, &FitOptions::default()),
            Err(Error::SampleTooSmall { .. })
        ));
    }

    #[test]
    fn mu_is_response_mean_and_trace_monotone() {
        let mut rng = ChaCha12Rng::seed_from_u64(46);
        let beta1 = randn(&mut rng, 3, 2);
        let beta2 = randn(&mut rng, 3, 2);
        let data = gen_data(&mut rng, 40, &beta1, &beta2, 1.0);
        let fit = fit_bilinear(&data, &FitOptions::default()).unwrap();
        assert!((fit.mu - data.response_mean()).amax() < 1e-14);
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "trace decreased: {} -> {}", w[0], w[1]);
        }
        assert!(fit.converged);
    }

    #[test]
    fn products_invariant_to_normalization() {
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let beta1 = randn(&mut rng, 3, 2);
        let beta2 = randn(&mut rng, 4, 3);
        let data = gen_data(&mut rng, 70, &beta1, &beta2, 0.4);
        let with = fit_bilinear(&data, &FitOptions::default()).unwrap();
        let without = fit_bilinear(
            &data,
            &FitOptions {
                normalize: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((with.coefficient_product() - without.coefficient_product()).norm() < 1e-8);
        assert!((with.covariance_product() - without.covariance_product()).norm() < 1e-8);
        // normalized invariants
        assert!((with.beta2.norm() - 1.0).abs() < 1e-8);
        assert!(with.beta2.as_slice()[0] > 0.0);
        assert!((with.sigma2.matrix().norm() - 1.0).abs() < 1e-8);
        assert!(with.sigma2.matrix()[(0, 0)] > 0.0);
    }

    #[test]
    fn negated_predictors_flip_coefficients() {
        let mut rng = ChaCha12Rng::seed_from_u64(48);
        let beta1 = randn(&mut rng, 2, 2);
        let beta2 = randn(&mut rng, 3, 2);
        let data = gen_data(&mut rng, 60, &beta1, &beta2, 0.6);
        let flipped = MatrixDataset::new(
            data.ys().to_vec(),
            data.xs().iter().map(|x| -x).collect(),
        )
        .unwrap();
        let f1 = fit_bilinear(&data, &FitOptions::default()).unwrap();
        let f2 = fit_bilinear(&flipped, &FitOptions::default()).unwrap();
        assert!((f1.coefficient_product() + f2.coefficient_product()).amax() < 1e-6);
        assert!((f1.covariance_product() - f2.covariance_product()).amax() < 1e-6);
    }

    #[test]
    fn parameter_counts_reference_values() {
        let c = |k, conv| count_params(k, 5, 5, 5, 5, 2, 2, conv).unwrap();
        assert_eq!(c(ModelKind::Vector, CountConvention::Raw), 975);
        assert_eq!(c(ModelKind::Bilinear, CountConvention::Raw), 105);
        assert_eq!(c(ModelKind::Envelope, CountConvention::Raw), 75);
        assert_eq!(c(ModelKind::Bilinear, CountConvention::WithConstraints), 103);
        assert_eq!(c(ModelKind::Envelope, CountConvention::WithConstraints), 73);
        // envelope reduction relative to bilinear: (r-u1)p1 + (m-u2)p2
        assert_eq!(
            c(ModelKind::Bilinear, CountConvention::Raw)
                - c(ModelKind::Envelope, CountConvention::Raw),
            30
        );
        assert!(count_params(ModelKind::Envelope, 5, 5, 5, 5, 6, 2, CountConvention::Raw).is_err());
    }

    #[test]
    fn information_criteria_arithmetic() {
        let (aic, bic) = information_criteria(-10.0, 3, 7);
        assert!((bic - aic - ((3.0f64).ln() - 2.0) * 7.0).abs() < 1e-12);
        let (aic2, _) = information_criteria(-10.0, 3, 9);
        assert!(aic2 > aic);
    }

    #[test]
    fn vector_model_recovery_and_errors() {
        let mut rng = ChaCha12Rng::seed_from_u64(49);
        let beta1 = randn(&mut rng, 2, 1);
        let beta2 = randn(&mut rng, 2, 2);
        let data = gen_data(&mut rng, 60, &beta1, &beta2, 1e-10);
        let fit = fit_vector_model(&data).unwrap();
        let truth = kron(&beta2, &beta1);
        assert!((&fit.nu - &truth).amax() < 1e-6);

        let zeros = MatrixDataset::new(
            data.ys().to_vec(),
            vec![DMatrix::zeros(1, 2); 60],
        )
        .unwrap();
        assert!(matches!(
            fit_vector_model(&zeros),
            Err(Error::SingularDesign(_))
        ));
    }

    #[test]
    fn vector_model_transpose_equivariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(50);
        let beta1 = randn(&mut rng, 2, 2);
        let beta2 = randn(&mut rng, 2, 3);
        let data = gen_data(&mut rng, 80, &beta1, &beta2, 0.5);
        let transposed = MatrixDataset::new(
            data.ys().to_vec(),
            data.xs().iter().map(|x| x.transpose()).collect(),
        )
        .unwrap();
        let f = fit_vector_model(&data).unwrap();
        let ft = fit_vector_model(&transposed).unwrap();
        // vec(X') = K_{p1 p2} vec(X), so nu_t = nu K_{p2 p1}
        let k = commutation(data.p2(), data.p1()).unwrap();
        assert!((&f.nu * &k - &ft.nu).amax() < 1e-8);
    }

    #[test]
    fn loglik_matches_vector_oracle_on_kronecker_params() {
        let mut rng = ChaCha12Rng::seed_from_u64(51);
        let beta1 = randn(&mut rng, 2, 1);
        let beta2 = randn(&mut rng, 2, 1);
        let data = gen_data(&mut rng, 30, &beta1, &beta2, 0.7).center_predictors();
        let s1 = PdMatrix::new_symmetrized({
            let a = randn(&mut rng, 2, 2);
            &a * a.transpose() + DMatrix::identity(2, 2)
        })
        .unwrap();
        let s2 = PdMatrix::new_symmetrized({
            let a = randn(&mut rng, 2, 2);
            &a * a.transpose() + DMatrix::identity(2, 2)
        })
        .unwrap();
        let mu = data.response_mean();
        let ll = loglik_bilinear(&data, &mu, &beta1, &beta2, &s1, &s2).unwrap();

        // dense Gaussian oracle with nu = B2 (x) B1, Sigma = S2 (x) S1
        let nu = kron(&beta2, &beta1);
        let cov = kron(s2.matrix(), s1.matrix());
        let chol = Cholesky::new(cov).unwrap();
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let mut oracle = 0.0;
        for i in 0..data.n() {
            let e = vec_mat(&data.ys()[i]) - vec_mat(&mu) - &nu * vec_mat(&data.xs()[i]);
            oracle += -0.5 * 4.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet
                - 0.5 * e.dot(&chol.solve(&e));
        }
        assert!((ll - oracle).abs() < 1e-8);
    }

    #[test]
    fn loglik_scale_invariances() {
        let mut rng = ChaCha12Rng::seed_from_u64(53);
        let beta1 = randn(&mut rng, 2, 1);
        let beta2 = randn(&mut rng, 3, 2);
        let data = gen_data(&mut rng, 25, &beta1, &beta2, 0.5).center_predictors();
        let mu = data.response_mean();
        let s1 = PdMatrix::identity(2);
        let s2 = PdMatrix::identity(3);
        let base = loglik_bilinear(&data, &mu, &beta1, &beta2, &s1, &s2).unwrap();
        let c = 2.7;
        let ll_c =
            loglik_bilinear(&data, &mu, &(&beta1 * c), &(&beta2 / c), &s1, &s2).unwrap();
        assert!((base - ll_c).abs() < 1e-9);
        let d = 0.31;
        let s1d = PdMatrix::new_symmetrized(s1.matrix() * d).unwrap();
        let s2d = PdMatrix::new_symmetrized(s2.matrix() / d).unwrap();
        let ll_d = loglik_bilinear(&data, &mu, &beta1, &beta2, &s1d, &s2d).unwrap();
        assert!((base - ll_d).abs() < 1e-9);

        // zero-coefficient reduction: sum of matnorm log-densities at mu
        let zero1 = DMatrix::zeros(2, 1);
        let zero2 = DMatrix::zeros(3, 2);
        let ll_zero = loglik_bilinear(&data, &mu, &zero1, &zero2, &s1, &s2).unwrap();
        let direct: f64 = data
            .ys()
            .iter()
            .map(|y| crate::matnorm::matnorm_logpdf(y, &mu, &s1, &s2).unwrap())
            .sum();
        assert!((ll_zero - direct).abs() < 1e-10);
    }

    #[test]
    fn lrt_degrees_of_freedom_and_clamp() {
        let mut rng = ChaCha12Rng::seed_from_u64(52);
        let beta1 = randn(&mut rng, 2, 1);
        let beta2 = randn(&mut rng, 2, 1);
        let data = gen_data(&mut rng, 120, &beta1, &beta2, 0.5);
        let vfit = fit_vector_model(&data).unwrap();
        let bfit = fit_bilinear(&data, &FitOptions::default()).unwrap();
        let (stat, df, p) = lrt_kron(&vfit, &bfit, CountConvention::Raw).unwrap();
        assert!(stat >= 0.0);
        // vector: 4 + 4 + 10 = 18; bilinear: 4 + 2 + 2 + 3 + 3 = 14
        assert_eq!(df, 4);
        assert!((0.0..=1.0).contains(&p));
    }
}
