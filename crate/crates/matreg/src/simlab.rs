//! Simulation laboratory: data generation under the envelope structure,
//! estimator comparison across the three models, and the standard-error
//! triangulation study, all emitting plot-ready CSV tables.
//!
//! Every replicate draws its RNG from `(seed, n, rep)`, so tables are
//! byte-identical across runs and worker counts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bilinear::{fit_bilinear, fit_vector_model, FitOptions};
use crate::dataset::MatrixDataset;
use crate::envelope::{fit_envelope, EnvelopeOptions};
use crate::error::{Error, Result};
use crate::exec;
use crate::inference::{
    asymptotic_se_kron, avar_gamma_vector, bootstrap_se, AvarModel, ResampleScheme,
};
use crate::linalg::{kron, vec_mat, PdMatrix, SemiOrthoBasis};
use crate::matnorm::MatNormal;

/// Models compared by the studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimModel {
    Vector,
    Bilinear,
    Envelope,
}

impl SimModel {
    pub fn name(&self) -> &'static str {
        match self {
            SimModel::Vector => "vector",
            SimModel::Bilinear => "bilinear",
            SimModel::Envelope => "envelope",
        }
    }
}

/// Configuration of the simulation generator and studies.
#[derive(Debug, Clone)]
pub struct SimSpec {
    pub r: usize,
    pub m: usize,
    pub p1: usize,
    pub p2: usize,
    pub u1: usize,
    pub u2: usize,
    /// Material variance (within the envelope).
    pub sigma_sq: f64,
    /// Immaterial variance (orthogonal complement).
    pub sigma0_sq: f64,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub models: Vec<SimModel>,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            r: 5,
            m: 5,
            p1: 5,
            p2: 5,
            u1: 2,
            u2: 2,
            sigma_sq: 0.5,
            sigma0_sq: 2.5,
            n_list: vec![200, 300, 500, 800, 1000, 1500],
            reps: 50,
            seed: 2016,
            models: vec![SimModel::Vector, SimModel::Bilinear, SimModel::Envelope],
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.u1 > self.r || self.u2 > self.m {
            return Err(Error::DimensionOutOfRange {
                u: if self.u1 > self.r { self.u1 } else { self.u2 },
                max: if self.u1 > self.r { self.r } else { self.m },
            });
        }
        if !(self.sigma_sq > 0.0 && self.sigma0_sq > 0.0) {
            return Err(Error::InvalidArgument(
                "variances must be positive".into(),
            ));
        }
        if self.reps == 0 || self.n_list.is_empty() {
            return Err(Error::InvalidArgument(
                "need at least one replicate and one sample size".into(),
            ));
        }
        Ok(())
    }
}

/// The generating parameters behind a simulated dataset.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub mu: DMatrix<f64>,
    pub beta1: DMatrix<f64>,
    pub beta2: DMatrix<f64>,
    pub sigma1: PdMatrix,
    pub sigma2: PdMatrix,
    pub l: SemiOrthoBasis,
    pub r_basis: SemiOrthoBasis,
}

impl SimTruth {
    pub fn coefficient_product(&self) -> DMatrix<f64> {
        kron(&self.beta2, &self.beta1)
    }
}

fn uniform_basis(rng: &mut impl Rng, dim: usize, u: usize) -> SemiOrthoBasis {
    if u == 0 {
        return SemiOrthoBasis::empty(dim);
    }
    let raw = DMatrix::from_fn(dim, u, |_, _| rng.gen::<f64>());
    SemiOrthoBasis::orthonormalize(&raw).expect("uniform draws have full rank")
}

fn randn(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Generating parameters drawn from an RNG stream: bases from
/// orthogonalized uniform(0,1) matrices, coordinate covariances `sigma_sq I`
/// inside the envelope and `sigma0_sq I` outside, mean and coordinates
/// standard normal.
pub fn gen_sim_truth(spec: &SimSpec, rng: &mut impl Rng) -> Result<SimTruth> {
    spec.validate()?;
    let l = uniform_basis(rng, spec.r, spec.u1);
    let r_basis = uniform_basis(rng, spec.m, spec.u2);
    let eta1 = randn(rng, spec.u1, spec.p1);
    let eta2 = randn(rng, spec.u2, spec.p2);
    let beta1 = l.matrix() * &eta1;
    let beta2 = r_basis.matrix() * &eta2;
    let mu = randn(rng, spec.r, spec.m);
    let sigma1 = PdMatrix::new_symmetrized(
        l.projector() * spec.sigma_sq + l.complement_projector() * spec.sigma0_sq,
    )?;
    let sigma2 = PdMatrix::new_symmetrized(
        r_basis.projector() * spec.sigma_sq + r_basis.complement_projector() * spec.sigma0_sq,
    )?;
    Ok(SimTruth {
        mu,
        beta1,
        beta2,
        sigma1,
        sigma2,
        l,
        r_basis,
    })
}

/// One dataset of size `n` under a fixed truth: standard normal predictor
/// entries, matrix-normal errors.
pub fn gen_sim_dataset_from_truth(
    spec: &SimSpec,
    truth: &SimTruth,
    n: usize,
    rng: &mut impl Rng,
) -> Result<MatrixDataset> {
    let noise = MatNormal::new(
        DMatrix::zeros(spec.r, spec.m),
        &truth.sigma1,
        &truth.sigma2,
    )?;
    let mut ys = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let x = randn(rng, spec.p1, spec.p2);
        let y = &truth.mu + &truth.beta1 * &x * truth.beta2.transpose() + noise.sample(rng);
        ys.push(y);
        xs.push(x);
    }
    MatrixDataset::new(ys, xs)
}

/// One simulated dataset of size `n` plus its generating truth, both drawn
/// from the seed. Deterministic in `(spec, n, seed)`.
pub fn gen_sim_dataset(spec: &SimSpec, n: usize, seed: u64) -> Result<(MatrixDataset, SimTruth)> {
    let mut rng = exec::substream(seed, &[n as u64]);
    let truth = gen_sim_truth(spec, &mut rng)?;
    let data = gen_sim_dataset_from_truth(spec, &truth, n, &mut rng)?;
    Ok((data, truth))
}

/// One row of the estimator-comparison table.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub model: SimModel,
    pub n: usize,
    pub mean_error: f64,
    /// `None` with a single replicate.
    pub sd_error: Option<f64>,
    pub reps: usize,
    pub failures: usize,
}

fn fit_error(
    model: SimModel,
    data: &MatrixDataset,
    truth: &SimTruth,
    spec: &SimSpec,
) -> Result<f64> {
    let target = truth.coefficient_product();
    let est = match model {
        SimModel::Vector => fit_vector_model(data)?.nu,
        SimModel::Bilinear => fit_bilinear(data, &FitOptions::default())?.coefficient_product(),
        SimModel::Envelope => {
            fit_envelope(data, spec.u1, spec.u2, &EnvelopeOptions::default())?
                .coefficient_product()
        }
    };
    Ok((est - target).norm())
}

fn mean_sd(values: &[f64]) -> (f64, Option<f64>) {
    let k = values.len();
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0);
    (mean, Some(var.sqrt()))
}

/// Tag mixed with the spec seed to draw the study-wide truth.
const TRUTH_TAG: u64 = 0x7a_b1e;

/// Estimator comparison: one generating truth per study, then per
/// `(model, n)` the mean and SD of the Frobenius error of the coefficient
/// estimate over the replicates. Cells that fail to fit are recorded and
/// skipped.
pub fn run_comparison(spec: &SimSpec) -> Result<Vec<ComparisonRow>> {
    spec.validate()?;
    let truth = gen_sim_truth(spec, &mut exec::substream(spec.seed, &[TRUTH_TAG]))?;
    let mut rows = Vec::new();
    for &n in &spec.n_list {
        // replicate -> per-model error, fanned out deterministically
        let per_rep: Vec<Vec<Option<f64>>> = exec::map_indexed(spec.reps, |rep| {
            let mut rng = exec::substream(spec.seed, &[n as u64, rep as u64]);
            match gen_sim_dataset_from_truth(spec, &truth, n, &mut rng) {
                Ok(data) => spec
                    .models
                    .iter()
                    .map(|&model| fit_error(model, &data, &truth, spec).ok())
                    .collect(),
                Err(_) => vec![None; spec.models.len()],
            }
        });
        for (mi, &model) in spec.models.iter().enumerate() {
            let errors: Vec<f64> = per_rep.iter().filter_map(|r| r[mi]).collect();
            let failures = spec.reps - errors.len();
            if errors.is_empty() {
                rows.push(ComparisonRow {
                    model,
                    n,
                    mean_error: f64::NAN,
                    sd_error: None,
                    reps: spec.reps,
                    failures,
                });
                continue;
            }
            let (mean, sd) = mean_sd(&errors);
            rows.push(ComparisonRow {
                model,
                n,
                mean_error: mean,
                sd_error: sd,
                reps: spec.reps,
                failures,
            });
        }
    }
    Ok(rows)
}

/// CSV serialization of the comparison table.
pub fn comparison_to_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("model,n,mean_error,sd_error,reps,failures\n");
    for row in rows {
        let sd = row
            .sd_error
            .map(|v| v.to_string())
            .unwrap_or_else(|| "NA".into());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.model.name(),
            row.n,
            row.mean_error,
            sd,
            row.reps,
            row.failures
        ));
    }
    out
}

/// One row of the standard-error triangulation table.
#[derive(Debug, Clone)]
pub struct SeStudyRow {
    pub model: SimModel,
    pub n: usize,
    /// Mean of the per-replicate asymptotic SEs of the chosen element.
    pub asymptotic_se: f64,
    /// Monte Carlo SD of the element estimate over replicates.
    pub actual_sd: f64,
    /// Bootstrap SE from one designated replicate.
    pub bootstrap_se: f64,
    pub reps: usize,
    pub failures: usize,
}

fn element_estimate_and_ase(
    model: SimModel,
    data: &MatrixDataset,
    spec: &SimSpec,
    element: usize,
) -> Result<(f64, f64)> {
    match model {
        SimModel::Vector => {
            let fit = fit_vector_model(data)?;
            let s_x = crate::inference::predictor_scatter(data);
            let avar = avar_gamma_vector(&s_x, &fit.sigma);
            let se = (avar[(element, element)].max(0.0) / data.n() as f64).sqrt();
            Ok((vec_mat(&fit.nu)[element], se))
        }
        SimModel::Bilinear => {
            let fit = fit_bilinear(data, &FitOptions::default())?;
            let report = asymptotic_se_kron(AvarModel::Bilinear(&fit), data)?;
            Ok((report.estimate[element], report.se[element]))
        }
        SimModel::Envelope => {
            let fit = fit_envelope(data, spec.u1, spec.u2, &EnvelopeOptions::default())?;
            let report = asymptotic_se_kron(AvarModel::Envelope(&fit), data)?;
            Ok((report.estimate[element], report.se[element]))
        }
    }
}

fn element_stat(
    model: SimModel,
    data: &MatrixDataset,
    spec: &SimSpec,
    element: usize,
) -> Result<DVector<f64>> {
    let value = match model {
        SimModel::Vector => vec_mat(&fit_vector_model(data)?.nu)[element],
        SimModel::Bilinear => {
            vec_mat(&fit_bilinear(data, &FitOptions::default())?.coefficient_product())[element]
        }
        SimModel::Envelope => vec_mat(
            &fit_envelope(data, spec.u1, spec.u2, &EnvelopeOptions::default())?
                .coefficient_product(),
        )[element],
    };
    Ok(DVector::from_element(1, value))
}

/// Standard-error triangulation: one generating truth per study so the
/// Monte Carlo SD measures sampling error alone, then per `(model, n)` the
/// asymptotic SE (averaged over replicates), the SD of the element estimate
/// over replicates, and a bootstrap SE computed on the first replicate's
/// dataset.
pub fn run_se_study(spec: &SimSpec, element: usize, bootstrap_b: usize) -> Result<Vec<SeStudyRow>> {
    spec.validate()?;
    let q = spec.r * spec.m * spec.p1 * spec.p2;
    if element >= q {
        return Err(Error::InvalidArgument(format!(
            "element index {element} out of range for a coefficient of {q} entries"
        )));
    }
    let truth = gen_sim_truth(spec, &mut exec::substream(spec.seed, &[TRUTH_TAG]))?;
    let mut rows = Vec::new();
    for &n in &spec.n_list {
        let per_rep: Vec<Vec<Option<(f64, f64)>>> = exec::map_indexed(spec.reps, |rep| {
            let mut rng = exec::substream(spec.seed, &[n as u64, rep as u64]);
            match gen_sim_dataset_from_truth(spec, &truth, n, &mut rng) {
                Ok(data) => spec
                    .models
                    .iter()
                    .map(|&model| element_estimate_and_ase(model, &data, spec, element).ok())
                    .collect(),
                Err(_) => vec![None; spec.models.len()],
            }
        });

        // the designated bootstrap replicate
        let boot_data = gen_sim_dataset_from_truth(
            spec,
            &truth,
            n,
            &mut exec::substream(spec.seed, &[n as u64, 0]),
        )?;

        for (mi, &model) in spec.models.iter().enumerate() {
            let pairs: Vec<(f64, f64)> = per_rep.iter().filter_map(|r| r[mi]).collect();
            let failures = spec.reps - pairs.len();
            let estimates: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let (_, actual) = mean_sd(&estimates);
            let asymptotic = if pairs.is_empty() {
                f64::NAN
            } else {
                pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64
            };

            // residual scheme needs fitted means; the bilinear fit supplies
            // them for all three models since the mean structure is shared
            let bootstrap = match fit_bilinear(&boot_data, &FitOptions::default()) {
                Ok(bf) => {
                    let predict = move |x: &DMatrix<f64>| bf.predict(x);
                    bootstrap_se(
                        &boot_data,
                        ResampleScheme::Residual,
                        bootstrap_b,
                        exec::substream(spec.seed, &[n as u64, 0xb0]).gen::<u64>(),
                        &predict,
                        |resampled| element_stat(model, resampled, spec, element),
                    )
                    .map(|rep| rep.se[0])
                    .unwrap_or(f64::NAN)
                }
                Err(_) => f64::NAN,
            };

            rows.push(SeStudyRow {
                model,
                n,
                asymptotic_se: asymptotic,
                actual_sd: actual.unwrap_or(f64::NAN),
                bootstrap_se: bootstrap,
                reps: spec.reps,
                failures,
            });
        }
    }
    Ok(rows)
}

/// CSV serialization of the SE study table.
pub fn se_study_to_csv(rows: &[SeStudyRow]) -> String {
    let mut out = String::from("model,n,asymptotic_se,actual_sd,bootstrap_se,reps,failures\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.model.name(),
            row.n,
            row.asymptotic_se,
            row.actual_sd,
            row.bootstrap_se,
            row.reps,
            row.failures
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SimSpec {
        SimSpec {
            r: 3,
            m: 3,
            p1: 2,
            p2: 2,
            u1: 1,
            u2: 1,
            sigma_sq: 0.5,
            sigma0_sq: 2.5,
            n_list: vec![100],
            reps: 4,
            seed: 7,
            models: vec![SimModel::Vector, SimModel::Bilinear, SimModel::Envelope],
        }
    }

    #[test]
    fn default_spec_matches_reference_dimensions() {
        let spec = SimSpec::default();
        let (data, truth) = gen_sim_dataset(&spec, 20, 1).unwrap();
        assert_eq!((data.r(), data.m()), (5, 5));
        assert_eq!((data.p1(), data.p2()), (5, 5));
        assert_eq!(truth.beta1.shape(), (5, 5));
        // generated product is exactly the kron of the generated factors
        let prod = truth.coefficient_product();
        assert_eq!(prod, kron(&truth.beta2, &truth.beta1));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let (a, _) = gen_sim_dataset(&spec, 50, 99).unwrap();
        let (b, _) = gen_sim_dataset(&spec, 50, 99).unwrap();
        for i in 0..50 {
            assert_eq!(a.ys()[i], b.ys()[i]);
            assert_eq!(a.xs()[i], b.xs()[i]);
        }
    }

    #[test]
    fn error_covariance_has_envelope_structure() {
        let spec = small_spec();
        let (_, truth) = gen_sim_dataset(&spec, 10, 3).unwrap();
        // material directions carry sigma_sq, complement sigma0_sq
        let l = truth.l.matrix();
        let compressed = l.transpose() * truth.sigma1.matrix() * l;
        assert!((compressed[(0, 0)] - spec.sigma_sq).abs() < 1e-10);
        let l0 = truth.l.complete();
        let comp0 = l0.matrix().transpose() * truth.sigma1.matrix() * l0.matrix();
        for i in 0..2 {
            assert!((comp0[(i, i)] - spec.sigma0_sq).abs() < 1e-10);
        }
    }

    #[test]
    fn comparison_table_shape_and_determinism() {
        let spec = small_spec();
        let rows = run_comparison(&spec).unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows {
            assert_eq!(row.failures, 0);
            assert!(row.mean_error.is_finite());
            assert!(row.sd_error.is_some());
        }
        let csv1 = comparison_to_csv(&rows);
        let csv2 = comparison_to_csv(&run_comparison(&spec).unwrap());
        assert_eq!(csv1, csv2, "byte-identical tables");

        let single = SimSpec {
            reps: 1,
            ..small_spec()
        };
        let rows1 = run_comparison(&single).unwrap();
        assert!(rows1[0].sd_error.is_none());
    }

    #[test]
    fn se_study_schema() {
        let spec = SimSpec {
            r: 2,
            m: 2,
            p1: 1,
            p2: 1,
            u1: 1,
            u2: 1,
            n_list: vec![120],
            reps: 3,
            ..small_spec()
        };
        let rows = run_se_study(&spec, 0, 20).unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows {
            assert!(row.asymptotic_se.is_finite());
            assert!(row.actual_sd.is_finite());
            assert!(row.bootstrap_se.is_finite());
        }
        let csv = se_study_to_csv(&rows);
        assert!(csv.starts_with("model,n,asymptotic_se"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn spec_validation() {
        let mut bad = small_spec();
        bad.u1 = 9;
        assert!(bad.validate().is_err());
        let mut bad2 = small_spec();
        bad2.sigma_sq = 0.0;
        assert!(bad2.validate().is_err());
        assert!(run_se_study(&small_spec(), 10_000, 10).is_err());
    }
}
