//! Envelope matrix regression: the alternating MLE that couples the two
//! semi-orthogonal objective minimizations with the conditional flip-flop
//! updates.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::bilinear::{
    check_estimability, cond_step_given1, cond_step_given2, fit_bilinear, loglik_centered,
    normalize_pair, BilinearFit, FitOptions, Prepared,
};
use crate::dataset::MatrixDataset;
use crate::error::{Error, Result};
use crate::linalg::{kron, symmetrize, PdMatrix, SemiOrthoBasis};
use crate::matnorm::normalizer;

use super::objective::{minimize_envelope_objective, MinimizeOptions};

/// Options for the envelope alternation.
#[derive(Debug, Clone)]
pub struct EnvelopeOptions {
    pub outer_max_iter: usize,
    /// Relative log-likelihood change below which the outer loop stops.
    pub outer_tol: f64,
    /// Apply the identification rescaling at the end.
    pub normalize: bool,
    /// Options for the initializing bilinear fit.
    pub bilinear: FitOptions,
    /// Options for the basis searches.
    pub minimize: MinimizeOptions,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self {
            outer_max_iter: 200,
            outer_tol: 1e-7,
            normalize: true,
            bilinear: FitOptions {
                normalize: false,
                ..Default::default()
            },
            minimize: MinimizeOptions::default(),
        }
    }
}

/// Fitted envelope matrix regression.
#[derive(Debug, Clone)]
pub struct EnvelopeFit {
    pub mu: DMatrix<f64>,
    /// Basis of the row envelope (`r x u1`).
    pub l_basis: SemiOrthoBasis,
    /// Basis of the column envelope (`m x u2`).
    pub r_basis: SemiOrthoBasis,
    pub eta1: DMatrix<f64>,
    pub eta2: DMatrix<f64>,
    pub omega1: DMatrix<f64>,
    pub omega10: DMatrix<f64>,
    pub omega2: DMatrix<f64>,
    pub omega20: DMatrix<f64>,
    /// `L eta1`; rows outside the envelope span are zero linear combinations.
    pub beta1: DMatrix<f64>,
    /// `R eta2`.
    pub beta2: DMatrix<f64>,
    pub sigma1: PdMatrix,
    pub sigma2: PdMatrix,
    pub u1: usize,
    pub u2: usize,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when any basis search failed to improve on its starts.
    pub optimizer_warning: bool,
    pub normalized: bool,
    pub x_mean: DMatrix<f64>,
    pub n: usize,
}

impl EnvelopeFit {
    pub fn coefficient_product(&self) -> DMatrix<f64> {
        kron(&self.beta2, &self.beta1)
    }

    pub fn covariance_product(&self) -> DMatrix<f64> {
        kron(self.sigma2.matrix(), self.sigma1.matrix())
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let xc = x - &self.x_mean;
        &self.mu + &self.beta1 * xc * self.beta2.transpose()
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.l_basis.nrows(),
            self.r_basis.nrows(),
            self.eta1.ncols(),
            self.eta2.ncols(),
        )
    }
}

/// One side of the alternation after its basis step.
struct SideState {
    basis: SemiOrthoBasis,
    eta: DMatrix<f64>,
    omega: DMatrix<f64>,
    omega0: DMatrix<f64>,
    beta: DMatrix<f64>,
    sigma: DMatrix<f64>,
    warning: bool,
}

/// Basis step shared by both sides: given the conditional-step scatter
/// matrices and the unconstrained coefficient, produce the envelope-structured
/// estimates.
fn basis_step(
    coef: &DMatrix<f64>,
    s_res: &DMatrix<f64>,
    s_y: &DMatrix<f64>,
    u: usize,
    min_opts: &MinimizeOptions,
    warm: Option<&DMatrix<f64>>,
) -> Result<SideState> {
    let dim = s_res.nrows();
    if u == dim {
        return Ok(SideState {
            basis: SemiOrthoBasis::identity(dim),
            eta: coef.clone(),
            omega: s_res.clone(),
            omega0: DMatrix::zeros(0, 0),
            beta: coef.clone(),
            sigma: s_res.clone(),
            warning: false,
        });
    }
    let s_res_pd = PdMatrix::new_symmetrized(s_res.clone()).map_err(|_| Error::SingularStep {
        which: "S_res",
        iteration: 0,
    })?;
    let s_y_pd = PdMatrix::new_symmetrized(s_y.clone()).map_err(|_| Error::SingularStep {
        which: "S_Y",
        iteration: 0,
    })?;
    let outcome = minimize_envelope_objective(&s_res_pd, &s_y_pd, u, min_opts, warm)?;
    let basis = outcome.basis;
    let basis0 = basis.complete();
    let eta = basis.matrix().transpose() * coef;
    let beta = basis.matrix() * &eta;
    let omega = symmetrize(&(basis.matrix().transpose() * s_res * basis.matrix()));
    let omega0 = symmetrize(&(basis0.matrix().transpose() * s_y * basis0.matrix()));
    let sigma = basis.matrix() * &omega * basis.matrix().transpose()
        + basis0.matrix() * &omega0 * basis0.matrix().transpose();
    Ok(SideState {
        basis,
        eta,
        omega,
        omega0,
        beta,
        sigma: symmetrize(&sigma),
        warning: !outcome.improved,
    })
}

/// MLE of the envelope matrix regression at fixed envelope dimensions.
pub fn fit_envelope(
    data: &MatrixDataset,
    u1: usize,
    u2: usize,
    opts: &EnvelopeOptions,
) -> Result<EnvelopeFit> {
    let p = Prepared::new(data);
    if u1 > p.r {
        return Err(Error::DimensionOutOfRange { u: u1, max: p.r });
    }
    if u2 > p.m {
        return Err(Error::DimensionOutOfRange { u: u2, max: p.m });
    }
    if u1 == 0 || u2 == 0 {
        return fit_null_envelope(&p, u1, u2, opts);
    }
    check_estimability(p.n, p.r, p.m, p.p1, p.p2)?;

    let bfit: BilinearFit = fit_bilinear(data, &opts.bilinear)?;
    let mut beta1 = bfit.beta1.clone();
    let mut beta2 = bfit.beta2.clone();
    let mut chol2 = bfit.sigma2.cholesky();

    // after the first pass, reuse the previous basis and drop the expensive
    // global search; the warm start keeps the half-steps monotone
    let light_opts = MinimizeOptions {
        random_starts: 1,
        ..opts.minimize.clone()
    };

    let mut l_state: Option<SideState> = None;
    let mut r_state: Option<SideState> = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut warning = false;
    let mut iterations = 0;

    for it in 0..opts.outer_max_iter {
        iterations = it + 1;
        let min_opts = if it == 0 { &opts.minimize } else { &light_opts };

        let step2 = cond_step_given2(&p, &beta2, &chol2, it, false)?;
        let l_new = basis_step(
            &step2.coef,
            &step2.s_res,
            &step2.s_y,
            u1,
            min_opts,
            l_state.as_ref().map(|s| s.basis.matrix()),
        )?;
        beta1 = l_new.beta.clone();
        let chol1 =
            Cholesky::new(l_new.sigma.clone()).ok_or(Error::SingularStep {
                which: "envelope Sigma1",
                iteration: it,
            })?;
        warning |= l_new.warning;
        l_state = Some(l_new);

        let step1 = cond_step_given1(&p, &beta1, &chol1, it, false)?;
        let r_new = basis_step(
            &step1.coef,
            &step1.s_res,
            &step1.s_y,
            u2,
            min_opts,
            r_state.as_ref().map(|s| s.basis.matrix()),
        )?;
        beta2 = r_new.beta.clone();
        chol2 = Cholesky::new(r_new.sigma.clone()).ok_or(Error::SingularStep {
            which: "envelope Sigma2",
            iteration: it,
        })?;
        warning |= r_new.warning;
        r_state = Some(r_new);

        let ll = loglik_centered(&p, &beta1, &beta2, &chol1, &chol2);
        let done = crate::bilinear::converged_rel(&trace, ll, opts.outer_tol);
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
    }

    let l_state = l_state.expect("at least one outer iteration");
    let r_state = r_state.expect("at least one outer iteration");

    let mut fit = EnvelopeFit {
        mu: p.ybar.clone(),
        l_basis: l_state.basis,
        r_basis: r_state.basis,
        eta1: l_state.eta,
        eta2: r_state.eta,
        omega1: l_state.omega,
        omega10: l_state.omega0,
        omega2: r_state.omega,
        omega20: r_state.omega0,
        beta1,
        beta2,
        sigma1: PdMatrix::new_symmetrized(l_state.sigma).map_err(|_| Error::SingularStep {
            which: "envelope Sigma1",
            iteration: iterations,
        })?,
        sigma2: PdMatrix::new_symmetrized(r_state.sigma).map_err(|_| Error::SingularStep {
            which: "envelope Sigma2",
            iteration: iterations,
        })?,
        u1,
        u2,
        loglik: *trace.last().expect("nonempty trace"),
        loglik_trace: trace,
        iterations,
        converged,
        optimizer_warning: warning,
        normalized: false,
        x_mean: p.x_mean.clone(),
        n: p.n,
    };
    if opts.normalize {
        apply_normalization(&mut fit);
    }
    Ok(fit)
}

fn apply_normalization(fit: &mut EnvelopeFit) {
    if fit.beta2.norm() > 0.0 {
        normalize_pair(&mut fit.beta1, &mut fit.beta2);
        // eta carries the same rescaling as its beta
        fit.eta1 = fit.l_basis.matrix().transpose() * &fit.beta1;
        fit.eta2 = fit.r_basis.matrix().transpose() * &fit.beta2;
    }
    let d = normalizer(fit.sigma2.matrix());
    fit.sigma1 = PdMatrix::new_symmetrized(fit.sigma1.matrix() * d).expect("PD rescale");
    fit.sigma2 = PdMatrix::new_symmetrized(fit.sigma2.matrix() / d).expect("PD rescale");
    fit.omega1 *= d;
    fit.omega10 *= d;
    fit.omega2 /= d;
    fit.omega20 /= d;
    fit.normalized = true;
}

/// Envelope fit when either dimension is zero: the coefficient vanishes and
/// the covariances come from the no-predictor matrix-normal MLE.
fn fit_null_envelope(
    p: &Prepared,
    u1: usize,
    u2: usize,
    opts: &EnvelopeOptions,
) -> Result<EnvelopeFit> {
    if p.n * p.m <= p.r || p.n * p.r <= p.m {
        return Err(Error::SampleTooSmall {
            n: p.n,
            required: (p.r as f64 / p.m as f64).max(p.m as f64 / p.r as f64),
        });
    }

    // matrix-normal flip-flop with zero coefficients
    let beta1 = DMatrix::zeros(p.r, p.p1);
    let beta2 = DMatrix::zeros(p.m, p.p2);
    let (sigma1, sigma2, trace, iterations, converged) = super::scalar::matnorm_mle(
        &p.yc,
        p.r,
        p.m,
        opts.outer_tol,
        opts.outer_max_iter,
    )?;

    // a zero-dimensional side has the trivial basis; a positive side takes
    // leading eigenvectors of its covariance, which reduce it exactly
    let (l_basis, omega1, omega10) = eigen_split(&sigma1, u1);
    let (r_basis, omega2, omega20) = eigen_split(&sigma2, u2);

    let mut fit = EnvelopeFit {
        mu: p.ybar.clone(),
        eta1: DMatrix::zeros(u1, p.p1),
        eta2: DMatrix::zeros(u2, p.p2),
        l_basis,
        r_basis,
        omega1,
        omega10,
        omega2,
        omega20,
        beta1,
        beta2,
        sigma1: PdMatrix::new_symmetrized(sigma1).map_err(|_| Error::SingularStep {
            which: "Sigma1",
            iteration: iterations,
        })?,
        sigma2: PdMatrix::new_symmetrized(sigma2).map_err(|_| Error::SingularStep {
            which: "Sigma2",
            iteration: iterations,
        })?,
        u1,
        u2,
        loglik: *trace.last().expect("nonempty trace"),
        loglik_trace: trace,
        iterations,
        converged,
        optimizer_warning: false,
        normalized: false,
        x_mean: p.x_mean.clone(),
        n: p.n,
    };
    if opts.normalize {
        let d = normalizer(fit.sigma2.matrix());
        fit.sigma1 = PdMatrix::new_symmetrized(fit.sigma1.matrix() * d).expect("PD rescale");
        fit.sigma2 = PdMatrix::new_symmetrized(fit.sigma2.matrix() / d).expect("PD rescale");
        fit.omega1 *= d;
        fit.omega10 *= d;
        fit.omega2 /= d;
        fit.omega20 /= d;
        fit.normalized = true;
    }
    Ok(fit)
}

/// Leading-eigenvector basis of dimension `u` plus the coordinate blocks of a
/// symmetric matrix relative to it and its complement.
fn eigen_split(sigma: &DMatrix<f64>, u: usize) -> (SemiOrthoBasis, DMatrix<f64>, DMatrix<f64>) {
    let k = sigma.nrows();
    if u == 0 {
        return (
            SemiOrthoBasis::empty(k),
            DMatrix::zeros(0, 0),
            sigma.clone(),
        );
    }
    let eig = SymmetricEigen::new(symmetrize(sigma));
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
    let basis = SemiOrthoBasis::orthonormalize(&basis).expect("eigenvectors are orthonormal");
    let basis0 = basis.complete();
    let omega = symmetrize(&(basis.matrix().transpose() * sigma * basis.matrix()));
    let omega0 = symmetrize(&(basis0.matrix().transpose() * sigma * basis0.matrix()));
    (basis, omega, omega0)
}
