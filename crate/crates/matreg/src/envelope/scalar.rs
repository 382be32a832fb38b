//! Two-sided envelope for the scalar-predictor model `Y = mu_c + beta X + e`
//! with `beta = L eta R'`, the form used for group-contrast studies where `X`
//! is an indicator.
//!
//! The unenveloped coefficient for a scalar predictor is free of the
//! covariances (`B = sum Yc_i xc_i / sum xc_i^2`, the group-mean difference
//! for a 0/1 indicator), so the alternation only re-weights the scatter
//! matrices: residual scatters use the fixed `B`-residuals (group-mean
//! centering for the indicator case), response scatters use pooled-mean
//! centering.

use nalgebra::{Cholesky, DMatrix};

use crate::dataset::MatrixDataset;
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, PdMatrix, SemiOrthoBasis};
use crate::matnorm::normalizer;

use super::fit::EnvelopeOptions;
use super::objective::minimize_envelope_objective;

/// Fitted scalar-predictor envelope model.
#[derive(Debug, Clone)]
pub struct ScalarEnvelopeFit {
    /// Response mean (the fitted mean at the centered predictor's zero).
    pub mu: DMatrix<f64>,
    pub l_basis: SemiOrthoBasis,
    pub r_basis: SemiOrthoBasis,
    /// Coordinates of `beta` relative to the two bases (`u1 x u2`).
    pub eta: DMatrix<f64>,
    /// `L eta R'`.
    pub beta: DMatrix<f64>,
    /// Unenveloped coefficient (group-mean difference for an indicator).
    pub baseline: DMatrix<f64>,
    pub sigma1: PdMatrix,
    pub sigma2: PdMatrix,
    pub u1: usize,
    pub u2: usize,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub optimizer_warning: bool,
    pub x_mean: f64,
    pub n: usize,
}

impl ScalarEnvelopeFit {
    pub fn predict(&self, x: f64) -> DMatrix<f64> {
        &self.mu + &self.beta * (x - self.x_mean)
    }

    /// Fitted mean at `x = 0`; the control-group mean when `X` is a 0/1
    /// indicator.
    pub fn mu_at_zero(&self) -> DMatrix<f64> {
        &self.mu - &self.beta * self.x_mean
    }
}

/// Fits the two-sided envelope with a scalar predictor.
pub fn fit_envelope_scalar_x(
    data: &MatrixDataset,
    u1: usize,
    u2: usize,
    opts: &EnvelopeOptions,
) -> Result<ScalarEnvelopeFit> {
    if data.p1() != 1 || data.p2() != 1 {
        return Err(Error::DimensionMismatch {
            context: "fit_envelope_scalar_x",
            expected: "1x1 predictor".into(),
            found: format!("{}x{}", data.p1(), data.p2()),
        });
    }
    let (n, r, m) = (data.n(), data.r(), data.m());
    if u1 > r {
        return Err(Error::DimensionOutOfRange { u: u1, max: r });
    }
    if u2 > m {
        return Err(Error::DimensionOutOfRange { u: u2, max: m });
    }
    if n < 2 {
        return Err(Error::SampleTooSmall { n, required: 2.0 });
    }

    let xbar: f64 = (0..n).map(|i| data.x_scalar(i).expect("scalar x")).sum::<f64>() / n as f64;
    let xc: Vec<f64> = (0..n)
        .map(|i| data.x_scalar(i).expect("scalar x") - xbar)
        .collect();
    let sxx: f64 = xc.iter().map(|v| v * v).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidArgument(
            "constant predictor: the contrast coefficient is not estimable".into(),
        ));
    }

    let ybar = data.response_mean();
    let yc: Vec<DMatrix<f64>> = data.ys().iter().map(|y| y - &ybar).collect();
    let baseline = yc
        .iter()
        .zip(&xc)
        .fold(DMatrix::zeros(r, m), |acc, (y, &x)| acc + y * x)
        / sxx;
    let resid: Vec<DMatrix<f64>> = yc
        .iter()
        .zip(&xc)
        .map(|(y, &x)| y - &baseline * x)
        .collect();

    // zero on either side kills the whole coefficient
    let (beta, l_basis, r_basis, sigma1, sigma2, trace, iterations, converged, warning) =
        if u1 == 0 || u2 == 0 {
            let (s1, s2, trace, it, conv) =
                matnorm_mle(&yc, r, m, opts.outer_tol, opts.outer_max_iter)?;
            let l = leading_basis(&s1, u1);
            let rb = leading_basis(&s2, u2);
            (
                DMatrix::zeros(r, m),
                l,
                rb,
                s1,
                s2,
                trace,
                it,
                conv,
                false,
            )
        } else {
            general_alternation(data, u1, u2, opts, &yc, &xc, &baseline, &resid)?
        };

    let mut sigma1 = PdMatrix::new_symmetrized(sigma1).map_err(|_| Error::SingularStep {
        which: "scalar envelope Sigma1",
        iteration: iterations,
    })?;
    let mut sigma2 = PdMatrix::new_symmetrized(sigma2).map_err(|_| Error::SingularStep {
        which: "scalar envelope Sigma2",
        iteration: iterations,
    })?;
    if opts.normalize {
        let d = normalizer(sigma2.matrix());
        sigma1 = PdMatrix::new_symmetrized(sigma1.matrix() * d).expect("PD rescale");
        sigma2 = PdMatrix::new_symmetrized(sigma2.matrix() / d).expect("PD rescale");
    }

    let eta = l_basis.matrix().transpose() * &beta * r_basis.matrix();
    let loglik = *trace.last().expect("nonempty trace");
    Ok(ScalarEnvelopeFit {
        mu: ybar,
        l_basis,
        r_basis,
        eta,
        beta,
        baseline,
        sigma1,
        sigma2,
        u1,
        u2,
        loglik,
        loglik_trace: trace,
        iterations,
        converged,
        optimizer_warning: warning,
        x_mean: xbar,
        n,
    })
}

type AlternationState = (
    DMatrix<f64>,
    SemiOrthoBasis,
    SemiOrthoBasis,
    DMatrix<f64>,
    DMatrix<f64>,
    Vec<f64>,
    usize,
    bool,
    bool,
);

#[allow(clippy::too_many_arguments)]
fn general_alternation(
    data: &MatrixDataset,
    u1: usize,
    u2: usize,
    opts: &EnvelopeOptions,
    yc: &[DMatrix<f64>],
    xc: &[f64],
    baseline: &DMatrix<f64>,
    resid: &[DMatrix<f64>],
) -> Result<AlternationState> {
    let (n, r, m) = (data.n(), data.r(), data.m());
    let mut sigma2 = {
        let mut s = DMatrix::zeros(m, m);
        for y in yc {
            s += y.transpose() * y;
        }
        symmetrize(&(s / n as f64))
    };
    let mut chol2 = Cholesky::new(sigma2.clone()).ok_or(Error::DegenerateSample(
        "response scatter is singular".into(),
    ))?;

    let light = super::objective::MinimizeOptions {
        random_starts: 1,
        ..opts.minimize.clone()
    };
    let mut l_warm: Option<DMatrix<f64>> = None;
    let mut r_warm: Option<DMatrix<f64>> = None;
    let mut l_basis = SemiOrthoBasis::identity(r);
    let mut r_basis = SemiOrthoBasis::identity(m);
    let mut beta = baseline.clone();
    let mut sigma1 = DMatrix::identity(r, r);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut warning = false;
    let mut iterations = 0;

    for it in 0..opts.outer_max_iter {
        iterations = it + 1;
        let min_opts = if it == 0 { &opts.minimize } else { &light };

        // row side
        let mut s_res2 = DMatrix::zeros(r, r);
        let mut s_y2 = DMatrix::zeros(r, r);
        for i in 0..n {
            s_res2 += &resid[i] * chol2.solve(&resid[i].transpose());
            s_y2 += &yc[i] * chol2.solve(&yc[i].transpose());
        }
        let scale2 = (n * m) as f64;
        let s_res2 = symmetrize(&(s_res2 / scale2));
        let s_y2 = symmetrize(&(s_y2 / scale2));
        let (l, s1_new, w1) = envelope_side(&s_res2, &s_y2, u1, min_opts, l_warm.as_ref())?;
        warning |= w1;
        l_warm = Some(l.matrix().clone());
        sigma1 = s1_new;
        l_basis = l;
        let chol1 = Cholesky::new(sigma1.clone()).ok_or(Error::SingularStep {
            which: "scalar envelope Sigma1",
            iteration: it,
        })?;

        // column side
        let mut s_res1 = DMatrix::zeros(m, m);
        let mut s_y1 = DMatrix::zeros(m, m);
        for i in 0..n {
            s_res1 += resid[i].transpose() * chol1.solve(&resid[i]);
            s_y1 += yc[i].transpose() * chol1.solve(&yc[i]);
        }
        let scale1 = (n * r) as f64;
        let s_res1 = symmetrize(&(s_res1 / scale1));
        let s_y1 = symmetrize(&(s_y1 / scale1));
        let (rb, s2_new, w2) = envelope_side(&s_res1, &s_y1, u2, min_opts, r_warm.as_ref())?;
        warning |= w2;
        r_warm = Some(rb.matrix().clone());
        sigma2 = s2_new;
        r_basis = rb;
        chol2 = Cholesky::new(sigma2.clone()).ok_or(Error::SingularStep {
            which: "scalar envelope Sigma2",
            iteration: it,
        })?;

        beta = l_basis.projector() * baseline * r_basis.projector();

        // log-likelihood of the current state
        let logdet1: f64 = 2.0 * chol1.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let logdet2: f64 = 2.0 * chol2.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let mut quad = 0.0;
        for i in 0..n {
            let e = &yc[i] - &beta * xc[i];
            quad += chol2.solve(&e.transpose()).dot(&chol1.solve(&e).transpose());
        }
        let ll = -0.5 * (n * r * m) as f64 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * (n * m) as f64 * logdet1
            - 0.5 * (n * r) as f64 * logdet2
            - 0.5 * quad;
        let done = crate::bilinear::converged_rel(&trace, ll, opts.outer_tol);
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
    }

    Ok((
        beta, l_basis, r_basis, sigma1, sigma2, trace, iterations, converged, warning,
    ))
}

/// Basis search plus reconstruction of the side covariance.
fn envelope_side(
    s_res: &DMatrix<f64>,
    s_y: &DMatrix<f64>,
    u: usize,
    min_opts: &super::objective::MinimizeOptions,
    warm: Option<&DMatrix<f64>>,
) -> Result<(SemiOrthoBasis, DMatrix<f64>, bool)> {
    let dim = s_res.nrows();
    if u == dim {
        return Ok((SemiOrthoBasis::identity(dim), s_res.clone(), false));
    }
    let s_res_pd = PdMatrix::new_symmetrized(s_res.clone()).map_err(|_| Error::SingularStep {
        which: "scalar envelope S_res",
        iteration: 0,
    })?;
    let s_y_pd = PdMatrix::new_symmetrized(s_y.clone()).map_err(|_| Error::SingularStep {
        which: "scalar envelope S_Y",
        iteration: 0,
    })?;
    let out = minimize_envelope_objective(&s_res_pd, &s_y_pd, u, min_opts, warm)?;
    let basis = out.basis;
    let basis0 = basis.complete();
    let omega = symmetrize(&(basis.matrix().transpose() * s_res * basis.matrix()));
    let omega0 = symmetrize(&(basis0.matrix().transpose() * s_y * basis0.matrix()));
    let sigma = basis.matrix() * omega * basis.matrix().transpose()
        + basis0.matrix() * omega0 * basis0.matrix().transpose();
    Ok((basis, symmetrize(&sigma), !out.improved))
}

/// `(sigma1, sigma2, loglik trace, iterations, converged)`.
pub(crate) type MatnormMle = (DMatrix<f64>, DMatrix<f64>, Vec<f64>, usize, bool);

/// No-predictor matrix-normal MLE on centered responses.
pub(crate) fn matnorm_mle(
    yc: &[DMatrix<f64>],
    r: usize,
    m: usize,
    tol: f64,
    max_iter: usize,
) -> Result<MatnormMle> {
    let n = yc.len();
    let mut sigma2 = {
        let mut s = DMatrix::zeros(m, m);
        for y in yc {
            s += y.transpose() * y;
        }
        symmetrize(&(s / n as f64))
    };
    let mut chol2 = Cholesky::new(sigma2.clone()).ok_or(Error::DegenerateSample(
        "response scatter is singular".into(),
    ))?;
    let mut sigma1 = DMatrix::identity(r, r);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let mut s1 = DMatrix::zeros(r, r);
        for y in yc {
            s1 += y * chol2.solve(&y.transpose());
        }
        sigma1 = symmetrize(&(s1 / (n * m) as f64));
        let chol1 = Cholesky::new(sigma1.clone()).ok_or(Error::SingularStep {
            which: "Sigma1",
            iteration: it,
        })?;
        let mut s2 = DMatrix::zeros(m, m);
        for y in yc {
            s2 += y.transpose() * chol1.solve(y);
        }
        sigma2 = symmetrize(&(s2 / (n * r) as f64));
        chol2 = Cholesky::new(sigma2.clone()).ok_or(Error::SingularStep {
            which: "Sigma2",
            iteration: it,
        })?;

        let logdet1: f64 = 2.0 * chol1.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let logdet2: f64 = 2.0 * chol2.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let mut quad = 0.0;
        for y in yc {
            quad += chol2.solve(&y.transpose()).dot(&chol1.solve(y).transpose());
        }
        let ll = -0.5 * (n * r * m) as f64 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * (n * m) as f64 * logdet1
            - 0.5 * (n * r) as f64 * logdet2
            - 0.5 * quad;
        let done = crate::bilinear::converged_rel(&trace, ll, tol);
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
    }
    Ok((sigma1, sigma2, trace, iterations, converged))
}

/// Leading-eigenvector basis of a covariance estimate.
fn leading_basis(sigma: &DMatrix<f64>, u: usize) -> SemiOrthoBasis {
    let k = sigma.nrows();
    if u == 0 {
        return SemiOrthoBasis::empty(k);
    }
    let eig = nalgebra::SymmetricEigen::new(symmetrize(sigma));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
    });
    let mut basis = DMatrix::zeros(k, u);
    for (t, &i) in order.iter().take(u).enumerate() {
        basis.set_column(t, &eig.eigenvectors.column(i));
    }
    SemiOrthoBasis::orthonormalize(&basis).expect("eigenvectors are orthonormal")
}
