//! Uncertainty quantification: bootstrap standard errors, asymptotic
//! covariance of the Kronecker coefficient, Benjamini-Yekutieli FDR
//! adjustment, and the location-effect reporting workflow for group
//! contrasts.
//!
//! Asymptotic covariances follow the over-parameterized structural-model
//! form: with `J` the Fisher information of the unstructured vectorized
//! model and `H` the Jacobian of the structured-to-unstructured parameter
//! map, the structured estimator has `avar = H (H'JH)^+ H'`; the envelope
//! adds an inner Jacobian `G1` for its own parameterization. The Jacobians
//! are computed by central finite differences; the basis block is
//! differentiated through a smooth orthogonal retraction so the completion
//! moves consistently with the basis.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::bilinear::BilinearFit;
use crate::dataset::MatrixDataset;
use crate::envelope::{fit_envelope_scalar_x, EnvelopeFit, EnvelopeOptions, ScalarEnvelopeFit};
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{
    duplication, kron, sym_pinv, symmetrize, vec_mat, vech, PdMatrix, SemiOrthoBasis,
};
use crate::prob::normal_two_sided_p;

/// How the standard errors in a report were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeMethod {
    Bootstrap,
    Asymptotic,
}

/// Estimates with uncertainty and multiplicity-adjusted p-values.
#[derive(Debug, Clone)]
pub struct InferenceReport {
    pub estimate: DVector<f64>,
    pub se: DVector<f64>,
    pub pvalues: Vec<f64>,
    pub pvalues_fdr: Vec<f64>,
    pub method: SeMethod,
    /// Bootstrap replicates, when applicable.
    pub b: Option<usize>,
}

impl InferenceReport {
    /// `-log10` of the adjusted p-values.
    pub fn neg_log10_fdr(&self) -> Vec<f64> {
        self.pvalues_fdr.iter().map(|p| -p.max(1e-300).log10()).collect()
    }

    fn from_estimate_se(estimate: DVector<f64>, se: DVector<f64>, method: SeMethod, b: Option<usize>) -> Result<Self> {
        let pvalues: Vec<f64> = estimate
            .iter()
            .zip(se.iter())
            .map(|(&e, &s)| {
                if s > 0.0 {
                    normal_two_sided_p(e / s)
                } else if e == 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let pvalues_fdr = fdr_adjust_by(&pvalues)?;
        Ok(Self {
            estimate,
            se,
            pvalues,
            pvalues_fdr,
            method,
            b,
        })
    }
}

/// Benjamini-Yekutieli step-up adjustment with the harmonic correction
/// `c(k) = sum_{j<=k} 1/j`, valid under dependence. Monotone in the sorted
/// order and capped at 1.
pub fn fdr_adjust_by(pvalues: &[f64]) -> Result<Vec<f64>> {
    for &p in pvalues {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::PValueOutOfRange(p));
        }
    }
    let k = pvalues.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let c: f64 = (1..=k).map(|j| 1.0 / j as f64).sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| pvalues[i].partial_cmp(&pvalues[j]).expect("finite p"));
    let mut adjusted = vec![0.0; k];
    let mut running = f64::INFINITY;
    for rank in (0..k).rev() {
        let idx = order[rank];
        let raw = c * k as f64 * pvalues[idx] / (rank + 1) as f64;
        running = running.min(raw);
        adjusted[idx] = running.min(1.0);
    }
    Ok(adjusted)
}

/// Resampling scheme for the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleScheme {
    /// Resample fitted residuals with replacement and rebuild responses.
    Residual,
    /// Resample `(Y_i, X_i)` units with replacement.
    Pairs,
}

/// Report from [`bootstrap_se`].
#[derive(Debug, Clone)]
pub struct BootstrapReport {
    pub estimate: DVector<f64>,
    pub se: DVector<f64>,
    /// Per-replicate statistics in replicate order (failed fits omitted).
    pub replicates: Vec<DVector<f64>>,
    pub b: usize,
    pub failures: usize,
    pub seed: u64,
    pub scheme: ResampleScheme,
}

fn replicate_rng(seed: u64, index: u64) -> ChaCha12Rng {
    // replicate streams depend only on (seed, index), so batches concatenate
    exec::substream(seed, &[index])
}

/// Statistics for bootstrap replicates `range.start..range.end`; replicate
/// `b` depends only on `(seed, b)`, so batches concatenate exactly.
pub fn bootstrap_replicates<F>(
    data: &MatrixDataset,
    scheme: ResampleScheme,
    range: std::ops::Range<usize>,
    seed: u64,
    predict: &(dyn Fn(&DMatrix<f64>) -> DMatrix<f64> + Sync),
    fit_stat: F,
) -> Result<Vec<Option<DVector<f64>>>>
where
    F: Fn(&MatrixDataset) -> Result<DVector<f64>> + Sync,
{
    let n = data.n();
    // residual scheme needs the fitted means and residuals once
    let (fitted, residuals): (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) = match scheme {
        ResampleScheme::Residual => {
            let fitted: Vec<DMatrix<f64>> = data.xs().iter().map(predict).collect();
            let resid = data
                .ys()
                .iter()
                .zip(&fitted)
                .map(|(y, f)| y - f)
                .collect();
            (fitted, resid)
        }
        ResampleScheme::Pairs => (Vec::new(), Vec::new()),
    };

    let count = range.end.saturating_sub(range.start);
    let start = range.start;
    Ok(exec::map_indexed(count, |offset| {
        let b = start + offset;
        let mut rng = replicate_rng(seed, b as u64);
        let resampled = match scheme {
            ResampleScheme::Residual => {
                let ys: Vec<DMatrix<f64>> = (0..n)
                    .map(|i| {
                        let j = rng.gen_range(0..n);
                        &fitted[i] + &residuals[j]
                    })
                    .collect();
                data.with_responses(ys).expect("same unit count")
            }
            ResampleScheme::Pairs => {
                let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                data.select_units(&idx)
            }
        };
        fit_stat(&resampled).ok()
    }))
}

/// Bootstrap standard errors of a statistic under the given resampling
/// scheme. `predict` maps a predictor to its fitted mean response (used by
/// the residual scheme); `fit_stat` refits and returns the statistic.
pub fn bootstrap_se<F>(
    data: &MatrixDataset,
    scheme: ResampleScheme,
    b: usize,
    seed: u64,
    predict: &(dyn Fn(&DMatrix<f64>) -> DMatrix<f64> + Sync),
    fit_stat: F,
) -> Result<BootstrapReport>
where
    F: Fn(&MatrixDataset) -> Result<DVector<f64>> + Sync,
{
    if b < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 bootstrap replicates, got {b}"
        )));
    }
    let estimate = fit_stat(data)?;
    let raw = bootstrap_replicates(data, scheme, 0..b, seed, predict, &fit_stat)?;
    let replicates: Vec<DVector<f64>> = raw.into_iter().flatten().collect();
    let failures = b - replicates.len();
    if failures * 5 > b {
        return Err(Error::BootstrapRetryBudget { failures });
    }
    let se = sd_columns(&replicates, estimate.len());
    Ok(BootstrapReport {
        estimate,
        se,
        replicates,
        b,
        failures,
        seed,
        scheme,
    })
}

/// Elementwise sample standard deviation (n-1 divisor) of a set of vectors.
pub fn sd_columns(stats: &[DVector<f64>], len: usize) -> DVector<f64> {
    let k = stats.len();
    if k < 2 {
        return DVector::zeros(len);
    }
    let mean = stats.iter().fold(DVector::zeros(len), |a, v| a + v) / k as f64;
    let mut var = DVector::zeros(len);
    for v in stats {
        let d = v - &mean;
        var += d.component_mul(&d);
    }
    (var / (k as f64 - 1.0)).map(f64::sqrt)
}

/// Empirical predictor scatter `n^-1 sum vec(Xc_i) vec(Xc_i)'`.
pub fn predictor_scatter(data: &MatrixDataset) -> DMatrix<f64> {
    let centered = data.center_predictors();
    let s = centered.p1() * centered.p2();
    let mut sx = DMatrix::zeros(s, s);
    for x in centered.xs() {
        let v = vec_mat(x);
        sx += &v * v.transpose();
    }
    sx / centered.n() as f64
}

/// Per-observation Fisher information of the unstructured vectorized model
/// at `(nu, Sigma)`: block diagonal with `S_X (x) Sigma^-1` for the
/// coefficients and `1/2 D'(Sigma^-1 (x) Sigma^-1) D` for `vech(Sigma)`.
pub fn fisher_info_vectorized(s_x: &DMatrix<f64>, sigma: &PdMatrix) -> DMatrix<f64> {
    let q = sigma.dim();
    let s = s_x.nrows();
    let sigma_inv = sigma.inverse();
    let j_nu = kron(s_x, &sigma_inv);
    let d = duplication(q);
    let j_sig = 0.5 * d.transpose() * kron(&sigma_inv, &sigma_inv) * &d;
    let dim = q * s + q * (q + 1) / 2;
    let mut j = DMatrix::zeros(dim, dim);
    j.view_mut((0, 0), (q * s, q * s)).copy_from(&j_nu);
    j.view_mut((q * s, q * s), (q * (q + 1) / 2, q * (q + 1) / 2))
        .copy_from(&j_sig);
    symmetrize(&j)
}

/// `avar(sqrt(n) gamma_hat)` for the unstructured vectorized model: the
/// inverse information.
pub fn avar_gamma_vector(s_x: &DMatrix<f64>, sigma: &PdMatrix) -> DMatrix<f64> {
    sym_pinv(&fisher_info_vectorized(s_x, sigma), 1e-12)
}

fn gamma_of(beta1: &DMatrix<f64>, beta2: &DMatrix<f64>, sigma1: &DMatrix<f64>, sigma2: &DMatrix<f64>) -> DVector<f64> {
    let nu = kron(beta2, beta1);
    let sigma = kron(sigma2, sigma1);
    let v1 = vec_mat(&nu);
    let v2 = vech(&symmetrize(&sigma)).expect("kron of symmetric is symmetric");
    let mut out = DVector::zeros(v1.len() + v2.len());
    out.rows_mut(0, v1.len()).copy_from(&v1);
    out.rows_mut(v1.len(), v2.len()).copy_from(&v2);
    out
}

/// Central finite differences of a map at a point, step `1e-6 * scale`.
fn numeric_jacobian(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    at: &DVector<f64>,
) -> DMatrix<f64> {
    let out_dim = f(at).len();
    let mut jac = DMatrix::zeros(out_dim, at.len());
    for k in 0..at.len() {
        let h = 1e-6 * at[k].abs().max(1.0);
        let mut plus = at.clone();
        let mut minus = at.clone();
        plus[k] += h;
        minus[k] -= h;
        let col = (f(&plus) - f(&minus)) / (2.0 * h);
        jac.set_column(k, &col);
    }
    jac
}

/// `avar(sqrt(n) gamma_hat)` for the Kronecker-structured bilinear model
/// at the given parameters: `H (H'JH)^+ H'`.
pub fn avar_gamma_bilinear(
    beta1: &DMatrix<f64>,
    beta2: &DMatrix<f64>,
    sigma1: &PdMatrix,
    sigma2: &PdMatrix,
    s_x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (r, p1) = beta1.shape();
    let (m, p2) = beta2.shape();
    let len1 = r * p1;
    let len2 = m * p2;
    let lenv1 = r * (r + 1) / 2;
    let lenv2 = m * (m + 1) / 2;

    let mut theta = DVector::zeros(len1 + len2 + lenv1 + lenv2);
    theta.rows_mut(0, len1).copy_from(&vec_mat(beta1));
    theta.rows_mut(len1, len2).copy_from(&vec_mat(beta2));
    theta
        .rows_mut(len1 + len2, lenv1)
        .copy_from(&vech(sigma1.matrix())?);
    theta
        .rows_mut(len1 + len2 + lenv1, lenv2)
        .copy_from(&vech(sigma2.matrix())?);

    let h_map = move |t: &DVector<f64>| -> DVector<f64> {
        let b1 = crate::linalg::unvec(&t.rows(0, len1).into_owned(), r, p1);
        let b2 = crate::linalg::unvec(&t.rows(len1, len2).into_owned(), m, p2);
        let s1 = crate::linalg::unvech(&t.rows(len1 + len2, lenv1).into_owned(), r);
        let s2 = crate::linalg::unvech(&t.rows(len1 + len2 + lenv1, lenv2).into_owned(), m);
        gamma_of(&b1, &b2, &s1, &s2)
    };
    let h = numeric_jacobian(&h_map, &theta);

    let sigma = PdMatrix::new_symmetrized(kron(sigma2.matrix(), sigma1.matrix()))?;
    let j = fisher_info_vectorized(s_x, &sigma);
    let core = symmetrize(&(h.transpose() * &j * &h));
    Ok(symmetrize(&(&h * sym_pinv(&core, 1e-10) * h.transpose())))
}

/// Envelope parameters needed to assemble the envelope avar.
#[derive(Debug, Clone)]
pub struct EnvelopeParams {
    pub l: SemiOrthoBasis,
    pub r: SemiOrthoBasis,
    pub eta1: DMatrix<f64>,
    pub eta2: DMatrix<f64>,
    pub omega1: DMatrix<f64>,
    pub omega10: DMatrix<f64>,
    pub omega2: DMatrix<f64>,
    pub omega20: DMatrix<f64>,
}

impl From<&EnvelopeFit> for EnvelopeParams {
    fn from(fit: &EnvelopeFit) -> Self {
        Self {
            l: fit.l_basis.clone(),
            r: fit.r_basis.clone(),
            eta1: fit.eta1.clone(),
            eta2: fit.eta2.clone(),
            omega1: fit.omega1.clone(),
            omega10: fit.omega10.clone(),
            omega2: fit.omega2.clone(),
            omega20: fit.omega20.clone(),
        }
    }
}

/// Smooth orthogonal retraction: moves a basis along tangent coordinates
/// `A` while keeping `[L(A) | L0(A)]` orthogonal; exact at `A = 0`.
fn retract(l: &DMatrix<f64>, l0: &DMatrix<f64>, a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let u = l.ncols();
    let k0 = l0.ncols();
    let l_new = (l + l0 * a) * inv_sqrt(&(DMatrix::identity(u, u) + a.transpose() * a));
    let l0_new = (l0 - l * a.transpose()) * inv_sqrt(&(DMatrix::identity(k0, k0) + a * a.transpose()));
    (l_new, l0_new)
}

fn inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let vals = eig.eigenvalues.map(|v| 1.0 / v.max(1e-300).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `avar(sqrt(n) phi(zeta_hat))` for the envelope model at the given
/// parameters: `H G1 (G1'H'JH G1)^+ G1'H'`.
pub fn avar_gamma_envelope(params: &EnvelopeParams, s_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = params.l.nrows();
    let m = params.r.nrows();
    let u1 = params.l.ncols();
    let u2 = params.r.ncols();
    let p1 = params.eta1.ncols();
    let p2 = params.eta2.ncols();
    let l0 = params.l.complete().into_inner();
    let r0 = params.r.complete().into_inner();
    let l = params.l.matrix().clone();
    let rb = params.r.matrix().clone();

    // free coordinates: eta1, tangent A (for L), eta2, tangent B (for R),
    // vech of the four coordinate covariances
    let n_eta1 = u1 * p1;
    let n_a = (r - u1) * u1;
    let n_eta2 = u2 * p2;
    let n_b = (m - u2) * u2;
    let n_o1 = u1 * (u1 + 1) / 2;
    let n_o10 = (r - u1) * (r - u1 + 1) / 2;
    let n_o2 = u2 * (u2 + 1) / 2;
    let n_o20 = (m - u2) * (m - u2 + 1) / 2;
    let total = n_eta1 + n_a + n_eta2 + n_b + n_o1 + n_o10 + n_o2 + n_o20;

    let mut zeta = DVector::zeros(total);
    let mut off = 0;
    zeta.rows_mut(off, n_eta1).copy_from(&vec_mat(&params.eta1));
    off += n_eta1 + n_a; // tangents start at zero
    zeta.rows_mut(off, n_eta2).copy_from(&vec_mat(&params.eta2));
    off += n_eta2 + n_b;
    zeta.rows_mut(off, n_o1).copy_from(&vech(&params.omega1)?);
    off += n_o1;
    zeta.rows_mut(off, n_o10).copy_from(&vech(&params.omega10)?);
    off += n_o10;
    zeta.rows_mut(off, n_o2).copy_from(&vech(&params.omega2)?);
    off += n_o2;
    zeta.rows_mut(off, n_o20).copy_from(&vech(&params.omega20)?);

    let g_map = |z: &DVector<f64>| -> DVector<f64> {
        let mut off = 0;
        let eta1 = crate::linalg::unvec(&z.rows(off, n_eta1).into_owned(), u1, p1);
        off += n_eta1;
        let a = crate::linalg::unvec(&z.rows(off, n_a).into_owned(), r - u1, u1);
        off += n_a;
        let eta2 = crate::linalg::unvec(&z.rows(off, n_eta2).into_owned(), u2, p2);
        off += n_eta2;
        let b = crate::linalg::unvec(&z.rows(off, n_b).into_owned(), m - u2, u2);
        off += n_b;
        let o1 = crate::linalg::unvech(&z.rows(off, n_o1).into_owned(), u1);
        off += n_o1;
        let o10 = crate::linalg::unvech(&z.rows(off, n_o10).into_owned(), r - u1);
        off += n_o10;
        let o2 = crate::linalg::unvech(&z.rows(off, n_o2).into_owned(), u2);
        off += n_o2;
        let o20 = crate::linalg::unvech(&z.rows(off, n_o20).into_owned(), m - u2);

        let (l_a, l0_a) = retract(&l, &l0, &a);
        let (r_b, r0_b) = retract(&rb, &r0, &b);
        let beta1 = &l_a * eta1;
        let beta2 = &r_b * eta2;
        let sigma1 = &l_a * o1 * l_a.transpose() + &l0_a * o10 * l0_a.transpose();
        let sigma2 = &r_b * o2 * r_b.transpose() + &r0_b * o20 * r0_b.transpose();

        let mut out =
            DVector::zeros(r * p1 + m * p2 + r * (r + 1) / 2 + m * (m + 1) / 2);
        let mut t = 0;
        out.rows_mut(t, r * p1).copy_from(&vec_mat(&beta1));
        t += r * p1;
        out.rows_mut(t, m * p2).copy_from(&vec_mat(&beta2));
        t += m * p2;
        out.rows_mut(t, r * (r + 1) / 2)
            .copy_from(&vech(&symmetrize(&sigma1)).expect("symmetric"));
        t += r * (r + 1) / 2;
        out.rows_mut(t, m * (m + 1) / 2)
            .copy_from(&vech(&symmetrize(&sigma2)).expect("symmetric"));
        out
    };
    let g1 = numeric_jacobian(&g_map, &zeta);

    // H evaluated at theta = g(zeta)
    let beta1 = &l * &params.eta1;
    let beta2 = &rb * &params.eta2;
    let sigma1 = PdMatrix::new_symmetrized(
        &l * &params.omega1 * l.transpose() + &l0 * &params.omega10 * l0.transpose(),
    )?;
    let sigma2 = PdMatrix::new_symmetrized(
        &rb * &params.omega2 * rb.transpose() + &r0 * &params.omega20 * r0.transpose(),
    )?;

    let (_, p1c) = params.eta1.shape();
    let len1 = r * p1c;
    let len2 = m * p2;
    let lenv1 = r * (r + 1) / 2;
    let lenv2 = m * (m + 1) / 2;
    let mut theta = DVector::zeros(len1 + len2 + lenv1 + lenv2);
    theta.rows_mut(0, len1).copy_from(&vec_mat(&beta1));
    theta.rows_mut(len1, len2).copy_from(&vec_mat(&beta2));
    theta
        .rows_mut(len1 + len2, lenv1)
        .copy_from(&vech(sigma1.matrix())?);
    theta
        .rows_mut(len1 + len2 + lenv1, lenv2)
        .copy_from(&vech(sigma2.matrix())?);
    let h_map = move |t: &DVector<f64>| -> DVector<f64> {
        let b1 = crate::linalg::unvec(&t.rows(0, len1).into_owned(), r, p1c);
        let b2 = crate::linalg::unvec(&t.rows(len1, len2).into_owned(), m, p2);
        let s1 = crate::linalg::unvech(&t.rows(len1 + len2, lenv1).into_owned(), r);
        let s2 = crate::linalg::unvech(&t.rows(len1 + len2 + lenv1, lenv2).into_owned(), m);
        gamma_of(&b1, &b2, &s1, &s2)
    };
    let h = numeric_jacobian(&h_map, &theta);

    let hg = &h * &g1;
    let sigma = PdMatrix::new_symmetrized(kron(sigma2.matrix(), sigma1.matrix()))?;
    let j = fisher_info_vectorized(s_x, &sigma);
    let core = symmetrize(&(hg.transpose() * &j * &hg));
    Ok(symmetrize(&(&hg * sym_pinv(&core, 1e-10) * hg.transpose())))
}

/// Model whose Kronecker-coefficient asymptotic SEs are requested.
pub enum AvarModel<'a> {
    Bilinear(&'a BilinearFit),
    Envelope(&'a EnvelopeFit),
}

/// Asymptotic standard errors of `vec(B2 (x) B1)` from the fitted model,
/// `sqrt(diag(avar)/n)` on the coefficient block.
pub fn asymptotic_se_kron(model: AvarModel<'_>, data: &MatrixDataset) -> Result<InferenceReport> {
    let s_x = predictor_scatter(data);
    let n = data.n() as f64;
    let (avar, estimate) = match model {
        AvarModel::Bilinear(fit) => (
            avar_gamma_bilinear(&fit.beta1, &fit.beta2, &fit.sigma1, &fit.sigma2, &s_x)?,
            vec_mat(&fit.coefficient_product()),
        ),
        AvarModel::Envelope(fit) => (
            avar_gamma_envelope(&EnvelopeParams::from(fit), &s_x)?,
            vec_mat(&fit.coefficient_product()),
        ),
    };
    let len = estimate.len();
    let se = DVector::from_fn(len, |i, _| (avar[(i, i)].max(0.0) / n).sqrt());
    InferenceReport::from_estimate_se(estimate, se, SeMethod::Asymptotic, None)
}

/// Axis of the coefficient matrix averaged over when building location
/// effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectAxis {
    /// Average over rows; one effect per column.
    Rows,
    /// Average over columns; one effect per row.
    Cols,
}

fn axis_average(beta: &DMatrix<f64>, axis: EffectAxis) -> DVector<f64> {
    match axis {
        EffectAxis::Rows => {
            DVector::from_fn(beta.ncols(), |j, _| beta.column(j).mean())
        }
        EffectAxis::Cols => DVector::from_fn(beta.nrows(), |i, _| beta.row(i).mean()),
    }
}

/// Location-effect workflow for a scalar-predictor contrast: average the
/// fitted coefficient over one axis, bootstrap per-coordinate standard
/// errors, apply normal-reference two-sided tests, and adjust for FDR.
pub fn location_effect_report(
    data: &MatrixDataset,
    u1: usize,
    u2: usize,
    axis: EffectAxis,
    b: usize,
    seed: u64,
    opts: &EnvelopeOptions,
) -> Result<InferenceReport> {
    let base: ScalarEnvelopeFit = fit_envelope_scalar_x(data, u1, u2, opts)?;
    let estimate = axis_average(&base.beta, axis);
    let base_mu = base.mu.clone();
    let base_beta = base.beta.clone();
    let x_mean = base.x_mean;
    let predict = move |x: &DMatrix<f64>| -> DMatrix<f64> {
        &base_mu + &base_beta * (x[(0, 0)] - x_mean)
    };
    let report = bootstrap_se(
        data,
        ResampleScheme::Residual,
        b,
        seed,
        &predict,
        |resampled| {
            let fit = fit_envelope_scalar_x(resampled, u1, u2, opts)?;
            Ok(axis_average(&fit.beta, axis))
        },
    )?;
    let mut out =
        InferenceReport::from_estimate_se(estimate, report.se, SeMethod::Bootstrap, Some(b))?;
    out.b = Some(b);
    Ok(out)
}
