//! The semi-orthogonal objective `f(G) = log|G' S_res G| + log|G' S_Y^-1 G|`
//! and its minimizer over bases of a given dimension.
//!
//! The objective depends on `G` only through its span, so the minimizer is a
//! subspace; any orthonormal basis of it is a valid return. Minimization
//! builds the basis one direction at a time, each new direction found by a
//! quasi-Newton (BFGS) search restricted to the orthogonal complement of the
//! partial basis, then polishes with column-wise coordinate descent sweeps.
//! Multiple starts (eigenvector-based and random) guard against local minima
//! and the best result is kept.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, PdMatrix, SemiOrthoBasis};

/// Objective value at a semi-orthogonal basis.
pub fn envelope_objective(g: &SemiOrthoBasis, s_res: &PdMatrix, s_y: &PdMatrix) -> Result<f64> {
    if g.ncols() == 0 {
        return Err(Error::InvalidArgument(
            "objective undefined at u = 0".into(),
        ));
    }
    let s_y_inv = s_y.inverse();
    objective_raw(g.matrix(), s_res.matrix(), &s_y_inv)
}

/// Objective extended off the manifold: defined for any full-column-rank `G`
/// for which both compressions stay positive definite.
pub fn envelope_objective_raw(
    g: &DMatrix<f64>,
    s_res: &PdMatrix,
    s_y: &PdMatrix,
) -> Result<f64> {
    let s_y_inv = s_y.inverse();
    objective_raw(g, s_res.matrix(), &s_y_inv)
}

pub(crate) fn objective_raw(
    g: &DMatrix<f64>,
    s_res: &DMatrix<f64>,
    s_y_inv: &DMatrix<f64>,
) -> Result<f64> {
    let a = symmetrize(&(g.transpose() * s_res * g));
    let b = symmetrize(&(g.transpose() * s_y_inv * g));
    let la = logdet(&a)?;
    let lb = logdet(&b)?;
    Ok(la + lb)
}

fn logdet(m: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite {
        context: "envelope objective compression",
    })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Euclidean gradient of the objective at `G`:
/// `2 S_res G (G' S_res G)^-1 + 2 S_Y^-1 G (G' S_Y^-1 G)^-1`.
pub fn envelope_objective_grad(
    g: &DMatrix<f64>,
    s_res: &PdMatrix,
    s_y: &PdMatrix,
) -> Result<DMatrix<f64>> {
    let s_y_inv = s_y.inverse();
    let term = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let mg = m * g;
        let core = symmetrize(&(g.transpose() * &mg));
        let chol = Cholesky::new(core).ok_or(Error::NotPositiveDefinite {
            context: "envelope objective gradient",
        })?;
        Ok(2.0 * &mg * chol.inverse())
    };
    Ok(term(s_res.matrix())? + term(&s_y_inv)?)
}

/// Options for the basis search.
#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    /// Random starting bases in addition to the eigenvector-based ones.
    pub random_starts: usize,
    /// Column-wise polishing sweeps per start.
    pub max_sweeps: usize,
    pub bfgs_max_iter: usize,
    pub bfgs_tol: f64,
    pub seed: u64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            random_starts: 5,
            max_sweeps: 30,
            bfgs_max_iter: 200,
            bfgs_tol: 1e-11,
            seed: 0,
        }
    }
}

/// Result of a basis search.
#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    pub basis: SemiOrthoBasis,
    pub value: f64,
    /// False when no start improved on the best raw starting value; the
    /// best start is returned as-is in that case.
    pub improved: bool,
}

/// Minimizes the objective over `r x u` semi-orthogonal matrices.
pub fn minimize_envelope_objective(
    s_res: &PdMatrix,
    s_y: &PdMatrix,
    u: usize,
    opts: &MinimizeOptions,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<MinimizeOutcome> {
    let r = s_res.dim();
    if s_y.dim() != r {
        return Err(Error::DimensionMismatch {
            context: "minimize_envelope_objective",
            expected: format!("{r}x{r} scatter matrices"),
            found: format!("{0}x{0}", s_y.dim()),
        });
    }
    if u == 0 || u > r {
        return Err(Error::DimensionOutOfRange { u, max: r });
    }
    let s_y_inv = s_y.inverse();

    if u == r {
        // only one subspace: the whole space
        let basis = SemiOrthoBasis::identity(r);
        let value = objective_raw(basis.matrix(), s_res.matrix(), &s_y_inv)?;
        return Ok(MinimizeOutcome {
            basis,
            value,
            improved: true,
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let mut starts: Vec<DMatrix<f64>> = Vec::new();
    if let Some(w) = warm_start {
        if w.shape() == (r, u) {
            starts.push(w.clone());
        }
    }
    starts.push(eigvec_start(s_res.matrix(), s_res.matrix(), &s_y_inv, u));
    starts.push(eigvec_start(s_y.matrix(), s_res.matrix(), &s_y_inv, u));
    for _ in 0..opts.random_starts {
        let raw = DMatrix::from_fn(r, u, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Ok(q) = SemiOrthoBasis::orthonormalize(&raw) {
            starts.push(q.into_inner());
        }
    }

    // reference value: best objective among the raw starts
    let mut best_start_value = f64::INFINITY;
    for s in &starts {
        if let Ok(v) = objective_raw(s, s_res.matrix(), &s_y_inv) {
            best_start_value = best_start_value.min(v);
        }
    }

    let mut best: Option<(DMatrix<f64>, f64)> = None;
    let greedy = greedy_build(s_res.matrix(), &s_y_inv, u, opts, &mut rng)?;
    consider(&mut best, greedy, s_res.matrix(), &s_y_inv, opts)?;
    for s in starts {
        consider(&mut best, s, s_res.matrix(), &s_y_inv, opts)?;
    }
    let (mat, value) = best.ok_or(Error::FitFailed {
        context: "minimize_envelope_objective",
        message: "no feasible starting basis".into(),
    })?;
    let improved = value <= best_start_value + 1e-12;
    Ok(MinimizeOutcome {
        basis: SemiOrthoBasis::orthonormalize(&mat)?,
        value,
        improved,
    })
}

fn consider(
    best: &mut Option<(DMatrix<f64>, f64)>,
    start: DMatrix<f64>,
    s_res: &DMatrix<f64>,
    s_y_inv: &DMatrix<f64>,
    opts: &MinimizeOptions,
) -> Result<()> {
    let refined = refine_sweeps(start, s_res, s_y_inv, opts)?;
    let value = objective_raw(&refined, s_res, s_y_inv)?;
    match best {
        Some((_, v)) if *v <= value => {}
        _ => *best = Some((refined, value)),
    }
    Ok(())
}

/// Basis from the `u` eigenvectors of `source` with the smallest
/// single-direction objective value.
fn eigvec_start(
    source: &DMatrix<f64>,
    s_res: &DMatrix<f64>,
    s_y_inv: &DMatrix<f64>,
    u: usize,
) -> DMatrix<f64> {
    let r = source.nrows();
    let eig = SymmetricEigen::new(symmetrize(source));
    let mut scored: Vec<(f64, usize)> = (0..r)
        .map(|i| {
            let v = eig.eigenvectors.column(i).into_owned();
            let q_res = v.dot(&(s_res * &v)).max(1e-300);
            let q_yi = v.dot(&(s_y_inv * &v)).max(1e-300);
            (q_res.ln() + q_yi.ln(), i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let mut out = DMatrix::zeros(r, u);
    for (j, &(_, i)) in scored.iter().take(u).enumerate() {
        out.set_column(j, &eig.eigenvectors.column(i));
    }
    out
}

/// Builds a basis column by column, each direction minimizing the objective
/// increment over the orthogonal complement of the current partial basis.
fn greedy_build(
    s_res: &DMatrix<f64>,
    s_y_inv: &DMatrix<f64>,
    u: usize,
    opts: &MinimizeOptions,
    rng: &mut ChaCha12Rng,
) -> Result<DMatrix<f64>> {
    let r = s_res.nrows();
    let mut partial = DMatrix::<f64>::zeros(r, 0);
    for _ in 0..u {
        let col = best_new_column(&partial, s_res, s_y_inv, opts, rng)?;
        partial = append_column(&partial, &col);
    }
    Ok(partial)
}

/// Column-wise coordinate descent: re-solve each column given the others
/// until no column improves.
fn refine_sweeps(
    start: DMatrix<f64>,
    s_res: &DMatrix<f64>,
    s_y_inv: &DMatrix<f64>,
    opts: &MinimizeOptions,
) -> Result<DMatrix<f64>> {
    let u = start.ncols();
    let mut g = start;
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed ^ 0x5eed_c01d);
    let mut current = objective_raw(&g, s_res, s_y_inv)?;
    for _ in 0..opts.max_sweeps {
        let mut improved = false;
        for j in 0..u {
            let others = drop_column(&g, j);
            let col = best_new_column(&others, s_res, s_y_inv, opts, &mut rng)?;
            let candidate = append_column(&others, &col);
            let value = objective_raw(&candidate, s_res, s_y_inv)?;
            if value < current - 1e-12 {
                g = candidate;
                current = value;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(g)
}

fn drop_column(g: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    let (r, u) = g.shape();
    let mut out = DMatrix::zeros(r, u - 1);
    let mut t = 0;
    for c in 0..u {
        if c != j {
            out.set_column(t, &g.column(c));
            t += 1;
        }
    }
    out
}

fn append_column(g: &DMatrix<f64>, col: &DVector<f64>) -> DMatrix<f64> {
    let (r, u) = g.shape();
    let mut out = DMatrix::zeros(r, u + 1);
    out.view_mut((0, 0), (r, u)).copy_from(g);
    out.set_column(u, col);
    out
}

/// Best unit direction in the orthogonal complement of `partial`, minimizing
/// the Schur-complement increment of the objective.
fn best_new_column(
    partial: &DMatrix<f64>,
    s_res: &DMatrix<f64>,
    s_y_inv: &DMatrix<f64>,
    opts: &MinimizeOptions,
    rng: &mut ChaCha12Rng,
) -> Result<DVector<f64>> {
    let r = partial.nrows();
    let k = partial.ncols();
    let g0 = if k == 0 {
        DMatrix::identity(r, r)
    } else {
        SemiOrthoBasis::orthonormalize(partial)?.complete().into_inner()
    };
    let a = compress_schur(s_res, partial, &g0)?;
    let b = compress_schur(s_y_inv, partial, &g0)?;
    let d = g0.ncols();

    // increment(z) = ln(z'Az) + ln(z'Bz); subtracting 2 ln(z'z) makes it
    // scale-invariant so BFGS can run unconstrained
    let f_grad = |z: &DVector<f64>| -> (f64, DVector<f64>) {
        let az = &a * z;
        let bz = &b * z;
        let qa = z.dot(&az);
        let qb = z.dot(&bz);
        let qn = z.dot(z);
        let f = qa.ln() + qb.ln() - 2.0 * qn.ln();
        let grad = az * (2.0 / qa) + bz * (2.0 / qb) - z * (4.0 / qn);
        (f, grad)
    };

    let mut starts: Vec<DVector<f64>> = Vec::new();
    let eig_a = SymmetricEigen::new(a.clone());
    let eig_b = SymmetricEigen::new(b.clone());
    for eig in [&eig_a, &eig_b] {
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[i]
                .partial_cmp(&eig.eigenvalues[j])
                .expect("finite eigenvalues")
        });
        for &i in order.iter().take(2) {
            starts.push(eig.eigenvectors.column(i).into_owned());
        }
    }
    for _ in 0..opts.random_starts {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        starts.push(v.normalize());
    }

    let mut best_z: Option<(DVector<f64>, f64)> = None;
    for z0 in starts {
        let (z, f) = bfgs(&f_grad, z0, opts.bfgs_max_iter, opts.bfgs_tol);
        match &best_z {
            Some((_, fb)) if *fb <= f => {}
            _ => best_z = Some((z, f)),
        }
    }
    let (z, _) = best_z.expect("at least one start");

    // map back, then re-orthogonalize against the partial basis once to wash
    // out roundoff
    let mut g = &g0 * z;
    if k > 0 {
        g -= partial * (partial.transpose() * &g);
    }
    let norm = g.norm();
    if norm < 1e-12 {
        return Err(Error::FitFailed {
            context: "best_new_column",
            message: "new direction collapsed onto the partial basis".into(),
        });
    }
    Ok(g / norm)
}

/// `G0' (M - M P (P'MP)^-1 P'M) G0`, the compression of the Schur complement
/// of `M` onto the complement of the partial basis.
fn compress_schur(
    m: &DMatrix<f64>,
    partial: &DMatrix<f64>,
    g0: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if partial.ncols() == 0 {
        return Ok(symmetrize(&(g0.transpose() * m * g0)));
    }
    let mp = m * partial;
    let core = symmetrize(&(partial.transpose() * &mp));
    let chol = Cholesky::new(core).ok_or(Error::NotPositiveDefinite {
        context: "compress_schur",
    })?;
    let schur = m - &mp * chol.solve(&mp.transpose());
    Ok(symmetrize(&(g0.transpose() * schur * g0)))
}

/// Small dense BFGS with Armijo backtracking.
fn bfgs(
    f_grad: &impl Fn(&DVector<f64>) -> (f64, DVector<f64>),
    x0: DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> (DVector<f64>, f64) {
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = f_grad(&x);
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iter {
        if g.norm() < tol * (1.0 + f.abs()) {
            break;
        }
        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            // not a descent direction; reset
            h = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let x_new = &x + &dir * step;
            let (f_new, g_new) = f_grad(&x_new);
            if f_new.is_finite() && f_new <= f + 1e-4 * step * slope {
                let s = &x_new - &x;
                let y = &g_new - &g;
                let sy = s.dot(&y);
                if sy > 1e-12 * s.norm() * y.norm() {
                    let rho = 1.0 / sy;
                    let i = DMatrix::<f64>::identity(n, n);
                    let left = &i - &s * y.transpose() * rho;
                    h = &left * h * left.transpose() + &s * s.transpose() * rho;
                }
                x = x_new;
                f = f_new;
                g = g_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::kron;

    fn pd(diag: &[f64]) -> PdMatrix {
        PdMatrix::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag))).unwrap()
    }

    fn random_pd(rng: &mut ChaCha12Rng, k: usize) -> PdMatrix {
        let a = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        PdMatrix::new_symmetrized(&a * a.transpose() + DMatrix::identity(k, k) * 0.3).unwrap()
    }

    fn random_semi_ortho(rng: &mut ChaCha12Rng, r: usize, u: usize) -> SemiOrthoBasis {
        let a = DMatrix::from_fn(r, u, |_, _| rng.sample::<f64, _>(StandardNormal));
        SemiOrthoBasis::orthonormalize(&a).unwrap()
    }

    #[test]
    fn objective_zero_at_identity_scatters() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let (r, u) = (4, 2);
        let id = PdMatrix::identity(r);
        for _ in 0..5 {
            let g = random_semi_ortho(&mut rng, r, u);
            let f = envelope_objective(&g, &id, &id).unwrap();
            assert!(f.abs() < 1e-12);
        }
    }

    #[test]
    fn objective_rotation_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let (r, u) = (5, 3);
        let s_res = random_pd(&mut rng, r);
        let s_y = random_pd(&mut rng, r);
        let g = random_semi_ortho(&mut rng, r, u);
        let f = envelope_objective(&g, &s_res, &s_y).unwrap();
        for _ in 0..5 {
            let o = random_semi_ortho(&mut rng, u, u);
            let go = SemiOrthoBasis::new(g.matrix() * o.matrix()).unwrap();
            let fo = envelope_objective(&go, &s_res, &s_y).unwrap();
            assert!((f - fo).abs() < 1e-10, "f={f} fo={fo}");
        }
    }

    #[test]
    fn objective_diagonal_axis_value() {
        // S_res = diag(1,4), S_Y = diag(2,5), G = e1: 0 + log(1/2)
        let s_res = pd(&[1.0, 4.0]);
        let s_y = pd(&[2.0, 5.0]);
        let g = SemiOrthoBasis::canonical(2, 1);
        let f = envelope_objective(&g, &s_res, &s_y).unwrap();
        assert!((f - (-(2.0f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let (r, u) = (4, 2);
        for _ in 0..20 {
            let s_res = random_pd(&mut rng, r);
            let s_y = random_pd(&mut rng, r);
            let g = random_semi_ortho(&mut rng, r, u).into_inner();
            let grad = envelope_objective_grad(&g, &s_res, &s_y).unwrap();
            let h = 1e-6;
            let mut max_rel: f64 = 0.0;
            for i in 0..r {
                for j in 0..u {
                    let mut gp = g.clone();
                    let mut gm = g.clone();
                    gp[(i, j)] += h;
                    gm[(i, j)] -= h;
                    let fp = envelope_objective_raw(&gp, &s_res, &s_y).unwrap();
                    let fm = envelope_objective_raw(&gm, &s_res, &s_y).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    let denom = fd.abs().max(grad[(i, j)].abs()).max(1e-4);
                    max_rel = max_rel.max((fd - grad[(i, j)]).abs() / denom);
                }
            }
            assert!(max_rel < 1e-5, "relative error {max_rel}");
        }
    }

    #[test]
    fn minimizer_full_dimension_is_whole_space() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let s_res = random_pd(&mut rng, 3);
        let s_y = random_pd(&mut rng, 3);
        let out =
            minimize_envelope_objective(&s_res, &s_y, 3, &MinimizeOptions::default(), None)
                .unwrap();
        assert_eq!(out.basis.ncols(), 3);
        let expected = s_res.logdet() - s_y.logdet();
        assert!((out.value - expected).abs() < 1e-9);
    }

    #[test]
    fn minimizer_matches_axis_brute_force_on_diagonal_case() {
        // commuting diagonal case: the minimizing subspace is spanned by the
        // axes with smallest log(s_i) - log(y_i)
        let s_res = pd(&[0.5, 2.0, 3.0]);
        let s_y = pd(&[3.0, 2.0, 1.0]);
        let out =
            minimize_envelope_objective(&s_res, &s_y, 1, &MinimizeOptions::default(), None)
                .unwrap();
        // scores: log(0.5/3), log(2/2), log(3/1) -> axis 0 wins
        let e0 = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let align = out.basis.matrix().column(0).dot(&e0).abs();
        assert!(align > 1.0 - 1e-8, "alignment {align}");
        assert!((out.value - (0.5f64.ln() + (1.0 / 3.0f64).ln())).abs() < 1e-8);
    }

    #[test]
    fn minimizer_beats_random_probes() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let s_res = random_pd(&mut rng, 4);
        let s_y = random_pd(&mut rng, 4);
        let out =
            minimize_envelope_objective(&s_res, &s_y, 2, &MinimizeOptions::default(), None)
                .unwrap();
        let s_y_inv = s_y.inverse();
        for _ in 0..500 {
            let probe = random_semi_ortho(&mut rng, 4, 2);
            let f = objective_raw(probe.matrix(), s_res.matrix(), &s_y_inv).unwrap();
            assert!(out.value <= f + 1e-9, "probe beat minimizer: {f} < {}", out.value);
        }
    }

    #[test]
    fn minimizer_rejects_bad_dims() {
        let s = PdMatrix::identity(3);
        assert!(
            minimize_envelope_objective(&s, &s, 0, &MinimizeOptions::default(), None).is_err()
        );
        assert!(
            minimize_envelope_objective(&s, &s, 4, &MinimizeOptions::default(), None).is_err()
        );
    }

    #[test]
    fn objective_from_kronecker_structured_scatter() {
        // sanity: objective stays finite on correlated PD pairs built from
        // Kronecker pieces
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let a = random_pd(&mut rng, 2);
        let b = random_pd(&mut rng, 2);
        let big = PdMatrix::new_symmetrized(kron(a.matrix(), b.matrix())).unwrap();
        let g = random_semi_ortho(&mut rng, 4, 2);
        let f = envelope_objective(&g, &big, &big).unwrap();
        assert!(f.is_finite());
    }
}
