//! Monte Carlo checks of the statistical behaviour the models are supposed
//! to deliver: information criteria identifying the Kronecker structure,
//! LRT calibration under the null, scalar-envelope efficiency gains, and
//! the location-effect workflow's power and null behaviour.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use matreg::bilinear::{
    count_params, fit_bilinear, fit_vector_model, information_criteria, lrt_kron,
    CountConvention, FitOptions, ModelKind,
};
use matreg::dataset::MatrixDataset;
use matreg::envelope::{fit_envelope, fit_envelope_scalar_x, EnvelopeOptions};
use matreg::inference::{location_effect_report, EffectAxis};
use matreg::linalg::{PdMatrix, SemiOrthoBasis};
use matreg::simlab::{gen_sim_dataset, SimSpec};

fn randn(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

#[test]
fn bic_identifies_kronecker_structure() {
    // Kronecker-generated data: the structured model's BIC should win in
    // nearly every replicate
    let spec = SimSpec {
        n_list: vec![500],
        reps: 1,
        ..Default::default()
    };
    let reps = 20;
    let mut wins = 0;
    for rep in 0..reps {
        let (data, _) = gen_sim_dataset(&spec, 500, 40 + rep).unwrap();
        let bfit = fit_bilinear(&data, &FitOptions::default()).unwrap();
        let vfit = fit_vector_model(&data).unwrap();
        let tb = count_params(ModelKind::Bilinear, 5, 5, 5, 5, 0, 0, CountConvention::Raw)
            .unwrap();
        let tv =
            count_params(ModelKind::Vector, 5, 5, 5, 5, 0, 0, CountConvention::Raw).unwrap();
        let (_, bic_b) = information_criteria(bfit.loglik, bfit.n, tb);
        let (_, bic_v) = information_criteria(vfit.loglik, vfit.n, tv);
        if bic_b < bic_v {
            wins += 1;
        }
    }
    assert!(
        wins * 10 >= reps * 9,
        "bilinear BIC won only {wins}/{reps} replicates"
    );
}

#[test]
fn lrt_is_calibrated_under_the_null() {
    let spec = SimSpec {
        n_list: vec![600],
        reps: 1,
        ..Default::default()
    };
    let (data, _) = gen_sim_dataset(&spec, 600, 77).unwrap();
    let bfit = fit_bilinear(&data, &FitOptions::default()).unwrap();
    let vfit = fit_vector_model(&data).unwrap();
    let (stat, df, p) = lrt_kron(&vfit, &bfit, CountConvention::Raw).unwrap();
    assert_eq!(df, 870);
    // under the null the statistic hovers near its degrees of freedom
    let ratio = stat / df as f64;
    assert!(
        (0.75..=1.25).contains(&ratio),
        "stat/df = {ratio} (stat {stat}, df {df})"
    );
    assert!(p > 0.01, "p-value {p} unexpectedly small on null data");
}

#[test]
fn scalar_envelope_beats_group_mean_difference() {
    let mut rng = ChaCha12Rng::seed_from_u64(606);
    let (r, m) = (6, 5);
    let reps = 50;
    let mut wins = 0;
    for _ in 0..reps {
        let l = SemiOrthoBasis::orthonormalize(&randn(&mut rng, r, 2)).unwrap();
        let rb = SemiOrthoBasis::orthonormalize(&randn(&mut rng, m, 1)).unwrap();
        let eta = randn(&mut rng, 2, 1);
        let beta = l.matrix() * &eta * rb.matrix().transpose();
        let s1 = PdMatrix::new_symmetrized(
            l.projector() * 0.25 + l.complement_projector() * 4.0,
        )
        .unwrap();
        let s2 = PdMatrix::new_symmetrized(
            rb.projector() * 0.25 + rb.complement_projector() * 4.0,
        )
        .unwrap();
        let noise = matreg::matnorm::MatNormal::new(DMatrix::zeros(r, m), &s1, &s2).unwrap();
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for i in 0..120 {
            let x = if i < 60 { 0.0 } else { 1.0 };
            ys.push(&beta * x + noise.sample(&mut rng));
            xs.push(DMatrix::from_element(1, 1, x));
        }
        let data = MatrixDataset::new(ys, xs).unwrap();
        let fit = fit_envelope_scalar_x(&data, 2, 1, &EnvelopeOptions::default()).unwrap();
        let env_err = (&fit.beta - &beta).norm();
        let raw_err = (&fit.baseline - &beta).norm();
        if env_err < raw_err {
            wins += 1;
        }
    }
    assert!(
        wins * 10 >= reps * 8,
        "scalar envelope beat the mean difference only {wins}/{reps} times"
    );
}

#[test]
fn envelope_loglik_nests_in_dimension() {
    let spec = SimSpec {
        r: 4,
        m: 4,
        p1: 2,
        p2: 2,
        u1: 2,
        u2: 2,
        n_list: vec![250],
        reps: 1,
        ..Default::default()
    };
    let (data, _) = gen_sim_dataset(&spec, 250, 9).unwrap();
    let lls: Vec<f64> = [(1usize, 1usize), (2, 2), (3, 3), (4, 4)]
        .iter()
        .map(|&(u1, u2)| {
            fit_envelope(&data, u1, u2, &EnvelopeOptions::default())
                .unwrap()
                .loglik
        })
        .collect();
    for w in lls.windows(2) {
        assert!(
            w[1] >= w[0] - 1e-6,
            "nesting violated: loglik dropped {} -> {}",
            w[0],
            w[1]
        );
    }
}

#[test]
fn location_effects_flag_planted_columns() {
    // signal in 3 of 8 response columns; the envelope-based report should
    // flag at least as many true columns as the unenveloped one in a
    // majority of replicates
    let mut rng = ChaCha12Rng::seed_from_u64(707);
    let (r, m) = (4, 8);
    let reps = 30;
    let mut env_not_worse = 0;
    for rep in 0..reps {
        let l = SemiOrthoBasis::orthonormalize(&randn(&mut rng, r, 1)).unwrap();
        // contrast confined to the first three columns
        let mut rvec = DMatrix::zeros(m, 1);
        for i in 0..3 {
            rvec[(i, 0)] = 1.0;
        }
        let rb = SemiOrthoBasis::orthonormalize(&rvec).unwrap();
        let beta = l.matrix() * DMatrix::from_element(1, 1, 2.0) * rb.matrix().transpose();
        let s1 = PdMatrix::new_symmetrized(
            l.projector() * 0.3 + l.complement_projector() * 3.0,
        )
        .unwrap();
        let s2 = PdMatrix::new_symmetrized(
            rb.projector() * 0.3 + rb.complement_projector() * 3.0,
        )
        .unwrap();
        let noise = matreg::matnorm::MatNormal::new(DMatrix::zeros(r, m), &s1, &s2).unwrap();
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for i in 0..200 {
            let x = if i < 100 { 0.0 } else { 1.0 };
            ys.push(&beta * x + noise.sample(&mut rng));
            xs.push(DMatrix::from_element(1, 1, x));
        }
        let data = MatrixDataset::new(ys, xs).unwrap();

        let flagged_true = |report: &matreg::inference::InferenceReport| -> usize {
            (0..3)
                .filter(|&j| report.pvalues_fdr[j] < 0.05)
                .count()
        };
        let env = location_effect_report(
            &data,
            1,
            1,
            EffectAxis::Rows,
            60,
            1000 + rep,
            &EnvelopeOptions::default(),
        )
        .unwrap();
        let raw = location_effect_report(
            &data,
            r,
            m,
            EffectAxis::Rows,
            60,
            2000 + rep,
            &EnvelopeOptions::default(),
        )
        .unwrap();
        if flagged_true(&env) >= flagged_true(&raw) {
            env_not_worse += 1;
        }
    }
    assert!(
        env_not_worse * 2 > reps,
        "envelope report was competitive only {env_not_worse}/{reps} times"
    );
}

#[test]
fn location_effects_respect_the_null() {
    // no contrast at all: adjusted p-values should rarely cross 0.05
    let mut rng = ChaCha12Rng::seed_from_u64(808);
    let (r, m) = (3, 5);
    let reps = 50;
    let mut flags = 0;
    let mut total = 0;
    for rep in 0..reps {
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for i in 0..80 {
            let x = if i < 40 { 0.0 } else { 1.0 };
            ys.push(randn(&mut rng, r, m));
            xs.push(DMatrix::from_element(1, 1, x));
        }
        let data = MatrixDataset::new(ys, xs).unwrap();
        let report = location_effect_report(
            &data,
            r,
            m,
            EffectAxis::Rows,
            40,
            3000 + rep,
            &EnvelopeOptions::default(),
        )
        .unwrap();
        flags += report.pvalues_fdr.iter().filter(|&&p| p < 0.05).count();
        total += m;
    }
    let rate = flags as f64 / total as f64;
    assert!(rate <= 0.05, "null flag rate {rate} exceeds the FDR level");
}
