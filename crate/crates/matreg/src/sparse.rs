//! Row-sparse estimation: the group-lasso penalized bilinear likelihood and
//! the sparse envelope objectives with adaptive weights, plus tuning-parameter
//! selection.
//!
//! Rows are driven to exact zeros by group proximal steps. For the penalized
//! bilinear fit the blocks alternate coefficient-row proximal gradient
//! updates with the exact covariance updates, so the penalized objective is
//! nonincreasing sweep over sweep. For the sparse envelope the group penalty
//! sits on the rows of the basis matrices; each basis step relaxes
//! orthonormality during the proximal descent and re-orthonormalizes the
//! nonzero rows' column space afterwards.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::bilinear::{fit_bilinear, loglik_centered, BilinearFit, FitOptions, Prepared};
use crate::dataset::MatrixDataset;
use crate::envelope::{
    envelope_objective_grad, fit_envelope, minimize_envelope_objective, EnvelopeFit,
    EnvelopeOptions,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{symmetrize, PdMatrix, SemiOrthoBasis};

/// Group-lasso weights for the two row blocks.
#[derive(Debug, Clone)]
pub struct SparseWeights {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

/// Adaptive weights from an initial unpenalized fit: `w_i = ||row_i||^-gamma`;
/// rows with exactly zero norm get an infinite weight (immediate exclusion).
pub fn adaptive_weights(initial: &BilinearFit, gamma: f64) -> SparseWeights {
    SparseWeights {
        w1: weights_from_rows(&initial.beta1, gamma),
        w2: weights_from_rows(&initial.beta2, gamma),
    }
}

pub fn weights_from_rows(mat: &DMatrix<f64>, gamma: f64) -> Vec<f64> {
    row_norms(mat)
        .into_iter()
        .map(|n| if n == 0.0 { f64::INFINITY } else { n.powf(-gamma) })
        .collect()
}

fn row_norms(mat: &DMatrix<f64>) -> Vec<f64> {
    (0..mat.nrows()).map(|i| mat.row(i).norm()).collect()
}

/// Options for the sparse fits.
#[derive(Debug, Clone)]
pub struct SparseOptions {
    /// Adaptive-weight exponent.
    pub gamma: f64,
    /// Outer blockwise sweeps.
    pub max_sweeps: usize,
    /// Relative objective change below which sweeping stops.
    pub tol: f64,
    /// Proximal iterations per coefficient block within a sweep.
    pub inner_max_iter: usize,
    /// Options for the initializing unpenalized fits.
    pub bilinear: FitOptions,
    pub envelope: EnvelopeOptions,
    /// Flagged extension: also penalize predictor-side columns of the
    /// coefficients with these `(lambda1, lambda2)` and unit weights. The
    /// objective trace is not guaranteed monotone in this mode.
    pub predictor_column_lambdas: Option<(f64, f64)>,
}

impl Default for SparseOptions {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            max_sweeps: 200,
            tol: 1e-8,
            inner_max_iter: 100,
            bilinear: FitOptions {
                normalize: false,
                ..Default::default()
            },
            envelope: EnvelopeOptions::default(),
            predictor_column_lambdas: None,
        }
    }
}

/// The fitted model inside a sparse wrapper.
#[derive(Debug, Clone)]
pub enum SparseInner {
    Bilinear(Box<BilinearFit>),
    Envelope(Box<EnvelopeFit>),
}

/// Row-sparse fit: active index sets plus the wrapped estimates.
#[derive(Debug, Clone)]
pub struct SparseFit {
    /// Active response rows `A1` (0-based indices).
    pub active_rows: Vec<usize>,
    /// Active response columns `A2` (0-based indices).
    pub active_cols: Vec<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub weights: SparseWeights,
    /// Penalized objective per sweep (nonincreasing for the bilinear fit).
    pub objective_trace: Vec<f64>,
    pub inner: SparseInner,
}

impl SparseFit {
    pub fn loglik(&self) -> f64 {
        match &self.inner {
            SparseInner::Bilinear(f) => f.loglik,
            SparseInner::Envelope(f) => f.loglik,
        }
    }

    pub fn coefficient_product(&self) -> DMatrix<f64> {
        match &self.inner {
            SparseInner::Bilinear(f) => f.coefficient_product(),
            SparseInner::Envelope(f) => f.coefficient_product(),
        }
    }
}

/// Group soft-threshold of each row: `row <- (1 - t_i/||row||)+ row`, with
/// exact zeros at or below the threshold.
fn prox_rows(mat: &mut DMatrix<f64>, thresholds: &[f64]) {
    for (i, &t) in thresholds.iter().enumerate().take(mat.nrows()) {
        if t == 0.0 {
            continue;
        }
        let norm = mat.row(i).norm();
        if !t.is_finite() || norm <= t {
            mat.row_mut(i).fill(0.0);
        } else {
            let scale = 1.0 - t / norm;
            let scaled = mat.row(i) * scale;
            mat.row_mut(i).copy_from(&scaled);
        }
    }
}

fn prox_cols(mat: &mut DMatrix<f64>, t: f64) {
    if t == 0.0 {
        return;
    }
    for j in 0..mat.ncols() {
        let norm = mat.column(j).norm();
        if norm <= t {
            mat.column_mut(j).fill(0.0);
        } else {
            let scale = 1.0 - t / norm;
            let scaled = mat.column(j) * scale;
            mat.column_mut(j).copy_from(&scaled);
        }
    }
}

fn penalty_value(mat: &DMatrix<f64>, lambda: f64, weights: &[f64]) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, w) in weights.iter().enumerate() {
        let norm = mat.row(i).norm();
        if norm > 0.0 {
            if w.is_finite() {
                total += lambda * w * norm;
            } else {
                return f64::INFINITY;
            }
        }
    }
    total
}

fn lambda_max_sym(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, &e| a.max(e))
}

fn smallest_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &e| a.min(e))
        .max(1e-300)
}

fn active_set(mat: &DMatrix<f64>) -> Vec<usize> {
    (0..mat.nrows())
        .filter(|&i| mat.row(i).iter().any(|v| *v != 0.0))
        .collect()
}

/// ISTA block update for a coefficient matrix whose smooth part has gradient
/// `prec^-1 (coef A - C)` and exact Lipschitz constant
/// `lambda_max(A) / lambda_min(prec)`.
#[allow(clippy::too_many_arguments)]
fn ista_block(
    coef: &mut DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    prec_chol: &Cholesky<f64, nalgebra::Dyn>,
    prec_inv_lmax: f64,
    lambda: f64,
    weights: &[f64],
    col_lambda: f64,
    inner_max_iter: usize,
) {
    let lips = lambda_max_sym(a) * prec_inv_lmax;
    if lips <= 1e-300 {
        // the smooth part is flat (the other coefficient block is zero);
        // any positive penalty zeroes the rows outright
        if lambda > 0.0 {
            coef.fill(0.0);
        }
        return;
    }
    if lambda == 0.0 && col_lambda == 0.0 {
        // unpenalized block has the closed-form conditional solution
        if let Some(chol_a) = Cholesky::new(symmetrize(a)) {
            *coef = chol_a.solve(&c.transpose()).transpose();
            return;
        }
    }
    let step = 1.0 / lips;
    let thresholds: Vec<f64> = weights
        .iter()
        .map(|w| if lambda == 0.0 { 0.0 } else { lambda * w * step })
        .collect();
    for _ in 0..inner_max_iter {
        let grad = prec_chol.solve(&(&*coef * a - c));
        let mut next = &*coef - grad * step;
        prox_rows(&mut next, &thresholds);
        if col_lambda > 0.0 {
            prox_cols(&mut next, col_lambda * step);
        }
        let delta = (&next - &*coef).amax();
        *coef = next;
        if delta < 1e-11 * (1.0 + coef.amax()) {
            break;
        }
    }
}

/// Group-lasso penalized MLE of the bilinear matrix regression by blockwise
/// coordinate descent.
pub fn penalized_bilinear(
    data: &MatrixDataset,
    lambda1: f64,
    lambda2: f64,
    weights: &SparseWeights,
    opts: &SparseOptions,
) -> Result<SparseFit> {
    if lambda1 < 0.0 || lambda2 < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "negative penalty: lambda1={lambda1}, lambda2={lambda2}"
        )));
    }
    let p = Prepared::new(data);
    if weights.w1.len() != p.r || weights.w2.len() != p.m {
        return Err(Error::DimensionMismatch {
            context: "penalized_bilinear",
            expected: format!("{} row weights, {} column weights", p.r, p.m),
            found: format!("{}, {}", weights.w1.len(), weights.w2.len()),
        });
    }
    let init = fit_bilinear(data, &opts.bilinear)?;
    let mut beta1 = init.beta1.clone();
    let mut beta2 = init.beta2.clone();
    let mut sigma1 = init.sigma1.matrix().clone();
    let mut sigma2 = init.sigma2.matrix().clone();
    let (col_l1, col_l2) = opts.predictor_column_lambdas.unwrap_or((0.0, 0.0));

    let mut objective_trace: Vec<f64> = Vec::new();
    let mut loglik = init.loglik;
    let mut sweeps = 0;
    let mut converged = false;

    for sweep in 0..opts.max_sweeps {
        sweeps = sweep + 1;
        let chol1 = Cholesky::new(sigma1.clone()).ok_or(Error::SingularStep {
            which: "sparse Sigma1",
            iteration: sweep,
        })?;
        let chol2 = Cholesky::new(sigma2.clone()).ok_or(Error::SingularStep {
            which: "sparse Sigma2",
            iteration: sweep,
        })?;
        let prec1_lmax = 1.0 / smallest_eig(&sigma1);
        let prec2_lmax = 1.0 / smallest_eig(&sigma2);

        // beta1 rows given (beta2, Sigma1, Sigma2)
        let s2inv_b2 = chol2.solve(&beta2);
        let k2 = beta2.transpose() * &s2inv_b2;
        let mut a1 = DMatrix::zeros(p.p1, p.p1);
        let mut c1 = DMatrix::zeros(p.r, p.p1);
        for i in 0..p.n {
            a1 += &p.xs[i] * &k2 * p.xs[i].transpose();
            c1 += &p.yc[i] * &s2inv_b2 * p.xs[i].transpose();
        }
        ista_block(
            &mut beta1,
            &a1,
            &c1,
            &chol1,
            prec1_lmax,
            lambda1,
            &weights.w1,
            col_l1,
            opts.inner_max_iter,
        );

        // beta2 rows given (beta1, Sigma1, Sigma2)
        let s1inv_b1 = chol1.solve(&beta1);
        let k1 = beta1.transpose() * &s1inv_b1;
        let mut a2 = DMatrix::zeros(p.p2, p.p2);
        let mut c2 = DMatrix::zeros(p.m, p.p2);
        for i in 0..p.n {
            a2 += p.xs[i].transpose() * &k1 * &p.xs[i];
            c2 += p.yc[i].transpose() * &s1inv_b1 * &p.xs[i];
        }
        ista_block(
            &mut beta2,
            &a2,
            &c2,
            &chol2,
            prec2_lmax,
            lambda2,
            &weights.w2,
            col_l2,
            opts.inner_max_iter,
        );

        // exact covariance updates from the residual scatter
        let mut s1 = DMatrix::zeros(p.r, p.r);
        for i in 0..p.n {
            let ri = &p.yc[i] - &beta1 * &p.xs[i] * beta2.transpose();
            s1 += &ri * chol2.solve(&ri.transpose());
        }
        sigma1 = symmetrize(&(s1 / (p.n * p.m) as f64));
        let chol1b = Cholesky::new(sigma1.clone()).ok_or(Error::SingularStep {
            which: "sparse Sigma1",
            iteration: sweep,
        })?;
        let mut s2 = DMatrix::zeros(p.m, p.m);
        for i in 0..p.n {
            let ri = p.yc[i].transpose() - &beta2 * p.xs[i].transpose() * beta1.transpose();
            s2 += &ri * chol1b.solve(&ri.transpose());
        }
        sigma2 = symmetrize(&(s2 / (p.n * p.r) as f64));
        let chol2b = Cholesky::new(sigma2.clone()).ok_or(Error::SingularStep {
            which: "sparse Sigma2",
            iteration: sweep,
        })?;

        loglik = loglik_centered(&p, &beta1, &beta2, &chol1b, &chol2b);
        let objective = -loglik
            + penalty_value(&beta1, lambda1, &weights.w1)
            + penalty_value(&beta2, lambda2, &weights.w2);
        let done = match objective_trace.last() {
            Some(&prev) => (objective - prev).abs() / (1.0 + prev.abs()) < opts.tol,
            None => false,
        };
        objective_trace.push(objective);
        if done {
            converged = true;
            break;
        }
    }

    let active_rows = active_set(&beta1);
    let active_cols = active_set(&beta2);
    let fit = BilinearFit {
        mu: p.ybar.clone(),
        beta1,
        beta2,
        sigma1: PdMatrix::new_symmetrized(sigma1).map_err(|_| Error::SingularStep {
            which: "sparse Sigma1",
            iteration: sweeps,
        })?,
        sigma2: PdMatrix::new_symmetrized(sigma2).map_err(|_| Error::SingularStep {
            which: "sparse Sigma2",
            iteration: sweeps,
        })?,
        loglik,
        iterations: sweeps,
        converged,
        loglik_trace: Vec::new(),
        normalized: false,
        x_mean: p.x_mean.clone(),
        n: p.n,
    };
    Ok(SparseFit {
        active_rows,
        active_cols,
        lambda1,
        lambda2,
        weights: weights.clone(),
        objective_trace,
        inner: SparseInner::Bilinear(Box::new(fit)),
    })
}

/// Convenience: adaptive weights from the unpenalized fit, then the
/// penalized fit.
pub fn penalized_bilinear_auto(
    data: &MatrixDataset,
    lambda1: f64,
    lambda2: f64,
    opts: &SparseOptions,
) -> Result<SparseFit> {
    let init = fit_bilinear(data, &opts.bilinear)?;
    let weights = adaptive_weights(&init, opts.gamma);
    penalized_bilinear(data, lambda1, lambda2, &weights, opts)
}

/// Proximal descent on the penalized basis objective
/// `f(G) + lambda sum_i w_i ||G_i||`, relaxing orthonormality, then
/// re-orthonormalizing the nonzero rows' column space.
fn sparse_basis_step(
    start: &DMatrix<f64>,
    s_res: &PdMatrix,
    s_y: &PdMatrix,
    lambda: f64,
    weights: &[f64],
    opts: &SparseOptions,
) -> Result<SemiOrthoBasis> {
    let u = start.ncols();
    let feasible = weights.iter().filter(|w| w.is_finite()).count();
    if feasible < u {
        return Err(Error::InfeasibleSparsity(format!(
            "only {feasible} rows can stay active but the basis needs {u}"
        )));
    }

    // the raw objective is unbounded below off the manifold (it falls like
    // log of the scale); subtracting 2 log|G'G| makes it invariant to any
    // right GL transform, so it depends on span(G) alone, agrees with f on
    // the manifold, and diverges at rank deficiency
    let f_val = |g: &DMatrix<f64>| -> f64 {
        let raw = match crate::envelope::envelope_objective_raw(g, s_res, s_y) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        match crate::linalg::try_logdet(&(g.transpose() * g)) {
            Ok(ld) => raw - 2.0 * ld,
            Err(_) => f64::INFINITY,
        }
    };
    let grad_val = |g: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let raw = envelope_objective_grad(g, s_res, s_y)?;
        let gram = Cholesky::new(symmetrize(&(g.transpose() * g))).ok_or(
            Error::NotPositiveDefinite {
                context: "sparse basis gram",
            },
        )?;
        Ok(raw - 4.0 * g * gram.inverse())
    };
    let pen = |g: &DMatrix<f64>| penalty_value(g, lambda, weights);

    let mut g = start.clone();
    // zero out excluded rows up front
    if lambda > 0.0 {
        let hard: Vec<f64> = weights
            .iter()
            .map(|w| if w.is_finite() { 0.0 } else { f64::INFINITY })
            .collect();
        prox_rows(&mut g, &hard);
    }
    let mut fg = f_val(&g);
    if !fg.is_finite() {
        return Err(Error::InfeasibleSparsity(
            "objective undefined after excluding infinite-weight rows".into(),
        ));
    }
    let mut objective = fg + pen(&g);
    let mut step = 1.0;

    for _ in 0..opts.inner_max_iter {
        // near rank deficiency the compression can flip to numerically
        // indefinite between the objective and gradient evaluations; the
        // current point is feasible, so stop descending there
        let Ok(grad) = grad_val(&g) else {
            break;
        };
        let mut accepted = false;
        let mut fixed_point = false;
        for _ in 0..40 {
            let mut cand = &g - &grad * step;
            let thresholds: Vec<f64> = weights
                .iter()
                .map(|w| if lambda == 0.0 { 0.0 } else { lambda * w * step })
                .collect();
            prox_rows(&mut cand, &thresholds);
            let fc = f_val(&cand);
            if fc.is_finite() {
                let diff = &cand - &g;
                let quad = fg + grad.dot(&diff) + diff.norm_squared() / (2.0 * step);
                if fc <= quad + 1e-12 {
                    let new_objective = fc + pen(&cand);
                    fixed_point = new_objective >= objective - 1e-12;
                    g = cand;
                    fg = fc;
                    objective = new_objective;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted || fixed_point {
            break;
        }
        step = (step * 2.0).min(1.0);
    }

    // re-orthonormalize the nonzero rows' column space, keeping zero rows
    // exactly zero
    let active = active_set(&g);
    if active.len() < u {
        return Err(Error::InfeasibleSparsity(format!(
            "penalty left {} active rows but the basis needs {u}",
            active.len()
        )));
    }
    let mut sub = DMatrix::zeros(active.len(), u);
    for (t, &i) in active.iter().enumerate() {
        sub.row_mut(t).copy_from(&g.row(i));
    }
    let sub_ortho = SemiOrthoBasis::orthonormalize(&sub)
        .map_err(|_| Error::InfeasibleSparsity("active rows are rank deficient".into()))?;
    let mut out = DMatrix::zeros(g.nrows(), u);
    for (t, &i) in active.iter().enumerate() {
        out.row_mut(i).copy_from(&sub_ortho.matrix().row(t));
    }
    SemiOrthoBasis::new(out)
}

/// One penalized basis step plus the side-covariance reconstruction; used
/// in the active-set identification phase.
fn sparse_side(
    warm: &SemiOrthoBasis,
    step: &crate::bilinear::CondStep,
    u: usize,
    lambda: f64,
    weights: &[f64],
    opts: &SparseOptions,
) -> Result<(SemiOrthoBasis, DMatrix<f64>)> {
    let dim = step.s_res.nrows();
    let s_res =
        PdMatrix::new_symmetrized(step.s_res.clone()).map_err(|_| Error::SingularStep {
            which: "sparse envelope S_res",
            iteration: 0,
        })?;
    let s_y = PdMatrix::new_symmetrized(step.s_y.clone()).map_err(|_| Error::SingularStep {
        which: "sparse envelope S_Y",
        iteration: 0,
    })?;
    let basis = if u == dim {
        SemiOrthoBasis::identity(dim)
    } else if lambda == 0.0 {
        minimize_envelope_objective(&s_res, &s_y, u, &opts.envelope.minimize, Some(warm.matrix()))?
            .basis
    } else {
        sparse_basis_step(warm.matrix(), &s_res, &s_y, lambda, weights, opts)?
    };
    Ok(rebuild_sigma(&basis, step))
}

fn rebuild_sigma(
    basis: &SemiOrthoBasis,
    step: &crate::bilinear::CondStep,
) -> (SemiOrthoBasis, DMatrix<f64>) {
    let basis0 = basis.complete();
    let omega = symmetrize(&(basis.matrix().transpose() * &step.s_res * basis.matrix()));
    let omega0 = symmetrize(&(basis0.matrix().transpose() * &step.s_y * basis0.matrix()));
    let sigma = basis.matrix() * omega * basis.matrix().transpose()
        + basis0.matrix() * omega0 * basis0.matrix().transpose();
    (basis.clone(), symmetrize(&sigma))
}

/// Basis step constrained to a frozen active-row set: rows outside `active`
/// are exactly zero, so the objective reduces to the plain objective on the
/// active submatrices (`G' S G = G_sub' S_AA G_sub`, and the second term
/// compresses the inverse the same way).
fn constrained_side(
    warm: &SemiOrthoBasis,
    step: &crate::bilinear::CondStep,
    active: &[usize],
    u: usize,
    opts: &SparseOptions,
) -> Result<(SemiOrthoBasis, DMatrix<f64>)> {
    let dim = step.s_res.nrows();
    if active.len() == dim {
        // unconstrained
        return sparse_side(warm, step, u, 0.0, &[], opts);
    }
    if active.len() < u {
        return Err(Error::InfeasibleSparsity(format!(
            "active set of {} rows cannot carry a {u}-dimensional basis",
            active.len()
        )));
    }
    let k = active.len();
    let sub = |m: &DMatrix<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(k, k, |i, j| m[(active[i], active[j])])
    };
    let s_res_sub = PdMatrix::new_symmetrized(sub(&step.s_res)).map_err(|_| {
        Error::SingularStep {
            which: "sparse envelope S_res submatrix",
            iteration: 0,
        }
    })?;
    // the compression of S_Y^-1 onto the active rows is (S_Y^-1)_AA; the
    // minimizer wants a PD matrix whose inverse is that block
    let s_y_full = PdMatrix::new_symmetrized(step.s_y.clone()).map_err(|_| {
        Error::SingularStep {
            which: "sparse envelope S_Y",
            iteration: 0,
        }
    })?;
    let s_y_inv_sub = sub(&s_y_full.inverse());
    let s_y_eff = PdMatrix::new_symmetrized(crate::linalg::sym_pinv(&s_y_inv_sub, 1e-13))
        .map_err(|_| Error::SingularStep {
            which: "sparse envelope S_Y submatrix",
            iteration: 0,
        })?;

    let warm_sub = {
        let mut w = DMatrix::zeros(k, u);
        for (t, &i) in active.iter().enumerate() {
            w.row_mut(t).copy_from(&warm.matrix().row(i));
        }
        SemiOrthoBasis::orthonormalize(&w).ok().map(|b| b.into_inner())
    };
    let out = minimize_envelope_objective(
        &s_res_sub,
        &s_y_eff,
        u,
        &opts.envelope.minimize,
        warm_sub.as_ref(),
    )?;
    let mut full = DMatrix::zeros(dim, u);
    for (t, &i) in active.iter().enumerate() {
        full.row_mut(i).copy_from(&out.basis.matrix().row(t));
    }
    let basis = SemiOrthoBasis::new(full)?;
    Ok(rebuild_sigma(&basis, step))
}

/// Sparse envelope fit: the group penalty on basis rows replaces the plain
/// objective inside the envelope alternation; remaining parameters are
/// estimated as in the non-sparse setting.
pub fn sparse_envelope(
    data: &MatrixDataset,
    u1: usize,
    u2: usize,
    lambda1: f64,
    lambda2: f64,
    opts: &SparseOptions,
) -> Result<SparseFit> {
    if lambda1 < 0.0 || lambda2 < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "negative penalty: lambda1={lambda1}, lambda2={lambda2}"
        )));
    }
    let p = Prepared::new(data);

    // unpenalized envelope supplies the adaptive weights and the warm start
    let base = fit_envelope(data, u1, u2, &opts.envelope)?;
    if u1 == 0 || u2 == 0 {
        return Ok(SparseFit {
            active_rows: Vec::new(),
            active_cols: Vec::new(),
            lambda1,
            lambda2,
            weights: SparseWeights {
                w1: vec![1.0; p.r],
                w2: vec![1.0; p.m],
            },
            objective_trace: Vec::new(),
            inner: SparseInner::Envelope(Box::new(base)),
        });
    }
    let weights = SparseWeights {
        w1: weights_from_rows(base.l_basis.matrix(), opts.gamma),
        w2: weights_from_rows(base.r_basis.matrix(), opts.gamma),
    };

    let mut beta2 = base.beta2.clone();
    let mut chol2 = base.sigma2.cholesky();
    let mut l_basis = base.l_basis.clone();
    let mut r_basis = base.r_basis.clone();
    let mut beta1 = base.beta1.clone();
    let mut sigma1 = base.sigma1.matrix().clone();
    let mut sigma2 = base.sigma2.matrix().clone();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    // phase one: a few penalized sweeps to identify the active row sets;
    // the prox steps are path dependent, so their loglik settles into a
    // small limit cycle rather than converging, and only the supports are
    // taken from this phase
    let eopts = &opts.envelope;
    let mut active1: Vec<usize> = (0..p.r).collect();
    let mut active2: Vec<usize> = (0..p.m).collect();
    if lambda1 > 0.0 || lambda2 > 0.0 {
        let ident_iters = 12.min(eopts.outer_max_iter.max(1));
        let mut stable = 0;
        for it in 0..ident_iters {
            iterations = it + 1;
            let step2 = crate::bilinear::cond_step_given2(&p, &beta2, &chol2, it, false)?;
            let (l_new, sig1_new) = sparse_side(&l_basis, &step2, u1, lambda1, &weights.w1, opts)?;
            l_basis = l_new;
            beta1 = l_basis.projector() * &step2.coef;
            sigma1 = sig1_new;
            let chol1 = Cholesky::new(sigma1.clone()).ok_or(Error::SingularStep {
                which: "sparse envelope Sigma1",
                iteration: it,
            })?;

            let step1 = crate::bilinear::cond_step_given1(&p, &beta1, &chol1, it, false)?;
            let (r_new, sig2_new) = sparse_side(&r_basis, &step1, u2, lambda2, &weights.w2, opts)?;
            r_basis = r_new;
            beta2 = r_basis.projector() * &step1.coef;
            sigma2 = sig2_new;
            chol2 = Cholesky::new(sigma2.clone()).ok_or(Error::SingularStep {
                which: "sparse envelope Sigma2",
                iteration: it,
            })?;

            let ll = loglik_centered(&p, &beta1, &beta2, &chol1, &chol2);
            trace.push(ll);

            let new1 = active_set(l_basis.matrix());
            let new2 = active_set(r_basis.matrix());
            if new1 == active1 && new2 == active2 {
                stable += 1;
            } else {
                stable = 0;
            }
            active1 = new1;
            active2 = new2;
            if stable >= 2 {
                break;
            }
        }
    }

    // phase two: freeze the supports and alternate constrained basis steps
    // until the log-likelihood settles
    for it in 0..eopts.outer_max_iter {
        iterations += 1;

        let step2 = crate::bilinear::cond_step_given2(&p, &beta2, &chol2, it, false)?;
        let (l_new, sig1_new) = constrained_side(&l_basis, &step2, &active1, u1, opts)?;
        l_basis = l_new;
        beta1 = l_basis.projector() * &step2.coef;
        sigma1 = sig1_new;
        let chol1 = Cholesky::new(sigma1.clone()).ok_or(Error::SingularStep {
            which: "sparse envelope Sigma1",
            iteration: it,
        })?;

        let step1 = crate::bilinear::cond_step_given1(&p, &beta1, &chol1, it, false)?;
        let (r_new, sig2_new) = constrained_side(&r_basis, &step1, &active2, u2, opts)?;
        r_basis = r_new;
        beta2 = r_basis.projector() * &step1.coef;
        sigma2 = sig2_new;
        chol2 = Cholesky::new(sigma2.clone()).ok_or(Error::SingularStep {
            which: "sparse envelope Sigma2",
            iteration: it,
        })?;

        let ll = loglik_centered(&p, &beta1, &beta2, &chol1, &chol2);
        let done = crate::bilinear::converged_rel(&trace, ll, eopts.outer_tol);
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
    }

    let l0 = l_basis.complete();
    let r0 = r_basis.complete();
    let eta1 = l_basis.matrix().transpose() * &beta1;
    let eta2 = r_basis.matrix().transpose() * &beta2;
    let omega1 = symmetrize(&(l_basis.matrix().transpose() * &sigma1 * l_basis.matrix()));
    let omega10 = symmetrize(&(l0.matrix().transpose() * &sigma1 * l0.matrix()));
    let omega2 = symmetrize(&(r_basis.matrix().transpose() * &sigma2 * r_basis.matrix()));
    let omega20 = symmetrize(&(r0.matrix().transpose() * &sigma2 * r0.matrix()));

    let active_rows = active_set(l_basis.matrix());
    let active_cols = active_set(r_basis.matrix());
    let loglik = trace.last().copied().unwrap_or(base.loglik);
    let fit = EnvelopeFit {
        mu: p.ybar.clone(),
        l_basis,
        r_basis,
        eta1,
        eta2,
        omega1,
        omega10,
        omega2,
        omega20,
        beta1,
        beta2,
        sigma1: PdMatrix::new_symmetrized(sigma1).map_err(|_| Error::SingularStep {
            which: "sparse envelope Sigma1",
            iteration: iterations,
        })?,
        sigma2: PdMatrix::new_symmetrized(sigma2).map_err(|_| Error::SingularStep {
            which: "sparse envelope Sigma2",
            iteration: iterations,
        })?,
        u1,
        u2,
        loglik,
        loglik_trace: trace.clone(),
        iterations,
        converged,
        optimizer_warning: false,
        normalized: false,
        x_mean: p.x_mean.clone(),
        n: p.n,
    };
    Ok(SparseFit {
        active_rows,
        active_cols,
        lambda1,
        lambda2,
        weights,
        objective_trace: trace.iter().map(|ll| -ll).collect(),
        inner: SparseInner::Envelope(Box::new(fit)),
    })
}

/// One evaluated tuning-parameter cell.
#[derive(Debug, Clone)]
pub struct LambdaCell {
    pub lambda1: f64,
    pub lambda2: f64,
    pub loglik: Option<f64>,
    pub df: usize,
    pub score: Option<f64>,
    pub active_rows: usize,
    pub active_cols: usize,
    pub error: Option<String>,
}

/// Result of tuning-parameter selection.
#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub table: Vec<LambdaCell>,
}

/// BIC-style selection over a grid of `(lambda1, lambda2)` pairs:
/// `-2 loglik + log(n) df` with `df` counting nonzero rows times the per-row
/// parameter count. Ties go to the sparser model, then the larger penalty.
pub fn select_lambda(
    data: &MatrixDataset,
    grid: &[(f64, f64)],
    opts: &SparseOptions,
) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    for &(l1, l2) in grid {
        if l1 < 0.0 || l2 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "negative penalty in grid: ({l1}, {l2})"
            )));
        }
    }
    let init = fit_bilinear(data, &opts.bilinear)?;
    let weights = adaptive_weights(&init, opts.gamma);
    let n = data.n();
    let (p1, p2) = (data.p1(), data.p2());

    let table: Vec<LambdaCell> = exec::map_slice(grid, |&(l1, l2)| {
        match penalized_bilinear(data, l1, l2, &weights, opts) {
            Ok(fit) => {
                let df = fit.active_rows.len() * p1 + fit.active_cols.len() * p2;
                let score = -2.0 * fit.loglik() + (n as f64).ln() * df as f64;
                LambdaCell {
                    lambda1: l1,
                    lambda2: l2,
                    loglik: Some(fit.loglik()),
                    df,
                    score: Some(score),
                    active_rows: fit.active_rows.len(),
                    active_cols: fit.active_cols.len(),
                    error: None,
                }
            }
            Err(e) => LambdaCell {
                lambda1: l1,
                lambda2: l2,
                loglik: None,
                df: 0,
                score: None,
                active_rows: 0,
                active_cols: 0,
                error: Some(e.to_string()),
            },
        }
    });

    let best = table
        .iter()
        .filter(|c| c.score.map(f64::is_finite).unwrap_or(false))
        .min_by(|a, b| {
            let ka = (
                a.score.unwrap(),
                a.active_rows + a.active_cols,
                -(a.lambda1 + a.lambda2),
            );
            let kb = (
                b.score.unwrap(),
                b.active_rows + b.active_cols,
                -(b.lambda1 + b.lambda2),
            );
            ka.partial_cmp(&kb).expect("finite keys")
        })
        .ok_or(Error::FitFailed {
            context: "select_lambda",
            message: "no grid cell produced a finite score".into(),
        })?;
    Ok(LambdaSelection {
        lambda1: best.lambda1,
        lambda2: best.lambda2,
        table,
    })
}
