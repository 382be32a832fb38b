//! Command dispatch: each command reads its inputs, calls the library, and
//! emits a structured JSON result document plus CSV table files.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use matreg::bilinear::{
    count_params, fit_bilinear, fit_vector_model, information_criteria, lrt_kron,
    CountConvention, FitOptions, ModelKind,
};
use matreg::dataset::{read_dataset, MatrixDataset};
use matreg::envelope::{
    fit_envelope, full_grid, select_dims_ic, select_dims_stepwise, Criterion, EnvelopeOptions,
};
use matreg::inference::{
    bootstrap_se, location_effect_report, EffectAxis, ResampleScheme,
};
use matreg::linalg::vec_mat;
use matreg::simlab::{
    comparison_to_csv, run_comparison, run_se_study, se_study_to_csv, SimModel, SimSpec,
};
use matreg::sparse::{
    penalized_bilinear_auto, select_lambda, sparse_envelope, SparseInner, SparseOptions,
};

use crate::config::{Command, RunConfig};

/// A dispatch failure: exit code plus a machine-readable document.
pub struct RunError {
    pub exit_code: i32,
    pub document: Value,
}

impl RunError {
    fn usage(message: String) -> Self {
        RunError {
            exit_code: 2,
            document: json!({"error": {"code": "usage", "message": message}}),
        }
    }

    fn from_lib(err: matreg::Error) -> Self {
        use matreg::Error as E;
        let (exit_code, code) = match &err {
            E::Io(_)
            | E::DatasetParse { .. }
            | E::MissingCell { .. }
            | E::DuplicateCell { .. }
            | E::DimensionMismatch { .. } => (3, "data"),
            E::InvalidArgument(_) | E::DimensionOutOfRange { .. } | E::NonPositiveDimension(_) => {
                (2, "usage")
            }
            _ => (4, "numerical"),
        };
        RunError {
            exit_code,
            document: json!({"error": {"code": code, "message": err.to_string()}}),
        }
    }
}

type RunResult = std::result::Result<Value, RunError>;

fn mat_json(m: &DMatrix<f64>) -> Value {
    let rows: Vec<Value> = (0..m.nrows())
        .map(|i| Value::Array(m.row(i).iter().map(|v| json!(v)).collect()))
        .collect();
    Value::Array(rows)
}

fn vec_json(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|x| json!(x)).collect())
}

fn slice_json(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| json!(x)).collect())
}

fn require_data(config: &RunConfig) -> std::result::Result<MatrixDataset, RunError> {
    let path = config
        .data
        .as_ref()
        .ok_or_else(|| RunError::usage("--data is required for this command".into()))?;
    read_dataset(path).map_err(RunError::from_lib)
}

fn convention(config: &RunConfig) -> CountConvention {
    match config.convention.as_str() {
        "with-constraints" => CountConvention::WithConstraints,
        _ => CountConvention::Raw,
    }
}

fn criterion(config: &RunConfig) -> Criterion {
    match config.criterion.as_str() {
        "aic" => Criterion::Aic,
        _ => Criterion::Bic,
    }
}

fn effective_seed(config: &RunConfig) -> u64 {
    config.seed.unwrap_or_else(|| {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.subsec_nanos() as u64 ^ d.as_secs())
            .unwrap_or(0);
        nanos ^ (std::process::id() as u64) << 32
    })
}

fn fit_options(config: &RunConfig) -> FitOptions {
    FitOptions {
        max_iter: config.max_iter,
        tol: config.tol,
        ..Default::default()
    }
}

fn envelope_options(config: &RunConfig) -> EnvelopeOptions {
    EnvelopeOptions {
        outer_max_iter: config.max_iter,
        outer_tol: config.tol,
        ..Default::default()
    }
}

/// Sibling path for a table file: `--out res.json` puts tables next to it.
fn table_path(config: &RunConfig, default_name: &str) -> PathBuf {
    match &config.out {
        Some(out) => {
            let stem = out
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "result".into());
            out.with_file_name(format!("{stem}.{default_name}"))
        }
        None => PathBuf::from(default_name),
    }
}

fn write_table(path: &Path, contents: &str) -> std::result::Result<(), RunError> {
    std::fs::write(path, contents).map_err(|e| RunError::from_lib(matreg::Error::Io(e)))
}

fn document_skeleton(config: &RunConfig) -> Value {
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": config.command.name(),
    })
}

fn cmd_fit(config: &RunConfig) -> RunResult {
    let data = require_data(config)?;
    let conv = convention(config);
    let fit = fit_bilinear(&data, &fit_options(config)).map_err(RunError::from_lib)?;
    let (r, m, p1, p2) = fit.dims();
    let t = count_params(ModelKind::Bilinear, r, m, p1, p2, 0, 0, conv)
        .map_err(RunError::from_lib)?;
    let (aic, bic) = information_criteria(fit.loglik, fit.n, t);

    let vector = match fit_vector_model(&data) {
        Ok(vfit) => {
            let tv = count_params(ModelKind::Vector, r, m, p1, p2, 0, 0, conv)
                .map_err(RunError::from_lib)?;
            let (vaic, vbic) = information_criteria(vfit.loglik, vfit.n, tv);
            let lrt = lrt_kron(&vfit, &fit, conv).map_err(RunError::from_lib)?;
            json!({
                "loglik": vfit.loglik,
                "param_count": tv,
                "aic": vaic,
                "bic": vbic,
                "lrt": {"stat": lrt.0, "df": lrt.1, "pvalue": lrt.2},
            })
        }
        Err(e) => json!({"unavailable": e.to_string()}),
    };

    let mut doc = document_skeleton(config);
    doc["dims"] = json!({"r": r, "m": m, "p1": p1, "p2": p2, "n": fit.n});
    doc["estimates"] = json!({
        "mu": mat_json(&fit.mu),
        "beta1": mat_json(&fit.beta1),
        "beta2": mat_json(&fit.beta2),
        "sigma1": mat_json(fit.sigma1.matrix()),
        "sigma2": mat_json(fit.sigma2.matrix()),
    });
    doc["loglik"] = json!(fit.loglik);
    doc["iterations"] = json!(fit.iterations);
    doc["converged"] = json!(fit.converged);
    doc["loglik_trace"] = slice_json(&fit.loglik_trace);
    doc["normalized"] = json!(fit.normalized);
    doc["param_count"] = json!(t);
    doc["convention"] = json!(config.convention);
    doc["aic"] = json!(aic);
    doc["bic"] = json!(bic);
    doc["vector_model"] = vector;
    Ok(doc)
}

fn cmd_envelope(config: &RunConfig) -> RunResult {
    let (u1, u2) = match (config.u1, config.u2) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(RunError::usage("--u1 and --u2 are required for envelope".into())),
    };
    let data = require_data(config)?;
    let conv = convention(config);
    let fit =
        fit_envelope(&data, u1, u2, &envelope_options(config)).map_err(RunError::from_lib)?;
    let (r, m, p1, p2) = fit.dims();
    let t = count_params(ModelKind::Envelope, r, m, p1, p2, u1, u2, conv)
        .map_err(RunError::from_lib)?;
    let (aic, bic) = information_criteria(fit.loglik, fit.n, t);

    let mut doc = document_skeleton(config);
    doc["dims"] = json!({"r": r, "m": m, "p1": p1, "p2": p2, "n": fit.n, "u1": u1, "u2": u2});
    doc["estimates"] = json!({
        "mu": mat_json(&fit.mu),
        "l_basis": mat_json(fit.l_basis.matrix()),
        "r_basis": mat_json(fit.r_basis.matrix()),
        "eta1": mat_json(&fit.eta1),
        "eta2": mat_json(&fit.eta2),
        "omega1": mat_json(&fit.omega1),
        "omega10": mat_json(&fit.omega10),
        "omega2": mat_json(&fit.omega2),
        "omega20": mat_json(&fit.omega20),
        "beta1": mat_json(&fit.beta1),
        "beta2": mat_json(&fit.beta2),
        "sigma1": mat_json(fit.sigma1.matrix()),
        "sigma2": mat_json(fit.sigma2.matrix()),
    });
    doc["loglik"] = json!(fit.loglik);
    doc["iterations"] = json!(fit.iterations);
    doc["converged"] = json!(fit.converged);
    doc["loglik_trace"] = slice_json(&fit.loglik_trace);
    doc["optimizer_warning"] = json!(fit.optimizer_warning);
    doc["param_count"] = json!(t);
    doc["convention"] = json!(config.convention);
    doc["aic"] = json!(aic);
    doc["bic"] = json!(bic);
    Ok(doc)
}

fn cmd_sparse(config: &RunConfig) -> RunResult {
    let data = require_data(config)?;
    let opts = SparseOptions {
        gamma: config.gamma,
        bilinear: FitOptions {
            normalize: false,
            ..fit_options(config)
        },
        envelope: envelope_options(config),
        ..Default::default()
    };

    let mut doc = document_skeleton(config);
    let (lambda1, lambda2) = if let Some(grid) = &config.lambda_grid {
        let sel = select_lambda(&data, grid, &opts).map_err(RunError::from_lib)?;
        let mut csv = String::from("lambda1,lambda2,loglik,df,score,active_rows,active_cols,error\n");
        for cell in &sel.table {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                cell.lambda1,
                cell.lambda2,
                cell.loglik.map(|v| v.to_string()).unwrap_or("NA".into()),
                cell.df,
                cell.score.map(|v| v.to_string()).unwrap_or("NA".into()),
                cell.active_rows,
                cell.active_cols,
                cell.error.clone().unwrap_or_default()
            ));
        }
        let path = table_path(config, "lambda_table.csv");
        write_table(&path, &csv)?;
        doc["lambda_table"] = json!(path.display().to_string());
        (sel.lambda1, sel.lambda2)
    } else {
        (config.lambda1.unwrap_or(0.0), config.lambda2.unwrap_or(0.0))
    };

    let fit = match (config.u1, config.u2) {
        (Some(u1), Some(u2)) => {
            sparse_envelope(&data, u1, u2, lambda1, lambda2, &opts).map_err(RunError::from_lib)?
        }
        _ => penalized_bilinear_auto(&data, lambda1, lambda2, &opts).map_err(RunError::from_lib)?,
    };

    doc["lambda1"] = json!(lambda1);
    doc["lambda2"] = json!(lambda2);
    doc["active_rows"] = json!(fit.active_rows.iter().map(|i| i + 1).collect::<Vec<_>>());
    doc["active_cols"] = json!(fit.active_cols.iter().map(|i| i + 1).collect::<Vec<_>>());
    doc["weights1"] = slice_json(&fit.weights.w1);
    doc["weights2"] = slice_json(&fit.weights.w2);
    doc["loglik"] = json!(fit.loglik());
    doc["objective_trace"] = slice_json(&fit.objective_trace);
    doc["estimates"] = match &fit.inner {
        SparseInner::Bilinear(b) => json!({
            "kind": "bilinear",
            "mu": mat_json(&b.mu),
            "beta1": mat_json(&b.beta1),
            "beta2": mat_json(&b.beta2),
            "sigma1": mat_json(b.sigma1.matrix()),
            "sigma2": mat_json(b.sigma2.matrix()),
        }),
        SparseInner::Envelope(e) => json!({
            "kind": "envelope",
            "mu": mat_json(&e.mu),
            "l_basis": mat_json(e.l_basis.matrix()),
            "r_basis": mat_json(e.r_basis.matrix()),
            "beta1": mat_json(&e.beta1),
            "beta2": mat_json(&e.beta2),
            "sigma1": mat_json(e.sigma1.matrix()),
            "sigma2": mat_json(e.sigma2.matrix()),
        }),
    };
    Ok(doc)
}

fn cmd_select(config: &RunConfig) -> RunResult {
    let data = require_data(config)?;
    let conv = convention(config);
    let crit = criterion(config);
    let opts = envelope_options(config);
    let sel = if config.stepwise {
        select_dims_stepwise(&data, crit, &opts, conv).map_err(RunError::from_lib)?
    } else {
        let grid = full_grid(data.r(), data.m());
        select_dims_ic(&data, crit, &grid, &opts, conv).map_err(RunError::from_lib)?
    };

    let mut csv = String::from("u1,u2,loglik,param_count,score,error\n");
    for cell in &sel.table {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.u1,
            cell.u2,
            cell.loglik.map(|v| v.to_string()).unwrap_or("NA".into()),
            cell.param_count,
            cell.score.map(|v| v.to_string()).unwrap_or("NA".into()),
            cell.error.clone().unwrap_or_default()
        ));
    }
    let path = table_path(config, "dimension_table.csv");
    write_table(&path, &csv)?;

    let mut doc = document_skeleton(config);
    doc["criterion"] = json!(config.criterion);
    doc["stepwise"] = json!(config.stepwise);
    doc["u1"] = json!(sel.u1);
    doc["u2"] = json!(sel.u2);
    doc["table"] = json!(path.display().to_string());
    doc["cells_evaluated"] = json!(sel.table.len());
    Ok(doc)
}

fn sim_spec(config: &RunConfig, seed: u64) -> std::result::Result<SimSpec, RunError> {
    let mut spec = SimSpec {
        seed,
        reps: config.reps,
        sigma_sq: config.sigma_sq,
        sigma0_sq: config.sigma0_sq,
        ..Default::default()
    };
    if let Some(r) = config.r {
        spec.r = r;
    }
    if let Some(m) = config.m {
        spec.m = m;
    }
    if let Some(p1) = config.p1 {
        spec.p1 = p1;
    }
    if let Some(p2) = config.p2 {
        spec.p2 = p2;
    }
    if let Some(u1) = config.u1 {
        spec.u1 = u1;
    }
    if let Some(u2) = config.u2 {
        spec.u2 = u2;
    }
    if let Some(n_list) = &config.n_list {
        spec.n_list = n_list.clone();
    }
    if let Some(models) = &config.models {
        spec.models = models
            .iter()
            .map(|m| match m.as_str() {
                "vector" => SimModel::Vector,
                "bilinear" => SimModel::Bilinear,
                _ => SimModel::Envelope,
            })
            .collect();
    }
    spec.validate().map_err(RunError::from_lib)?;
    Ok(spec)
}

fn cmd_simulate(config: &RunConfig) -> RunResult {
    let seed = effective_seed(config);
    let spec = sim_spec(config, seed)?;
    let mut doc = document_skeleton(config);
    doc["seed"] = json!(seed);
    doc["spec"] = json!({
        "r": spec.r, "m": spec.m, "p1": spec.p1, "p2": spec.p2,
        "u1": spec.u1, "u2": spec.u2,
        "sigma_sq": spec.sigma_sq, "sigma0_sq": spec.sigma0_sq,
        "n_list": spec.n_list, "reps": spec.reps,
        "models": spec.models.iter().map(|m| m.name()).collect::<Vec<_>>(),
    });
    match config.study.as_str() {
        "se" => {
            let rows =
                run_se_study(&spec, config.element, config.b).map_err(RunError::from_lib)?;
            let path = table_path(config, "se_study.csv");
            write_table(&path, &se_study_to_csv(&rows))?;
            doc["study"] = json!("se");
            doc["element"] = json!(config.element);
            doc["table"] = json!(path.display().to_string());
        }
        _ => {
            let rows = run_comparison(&spec).map_err(RunError::from_lib)?;
            let path = table_path(config, "comparison.csv");
            write_table(&path, &comparison_to_csv(&rows))?;
            doc["study"] = json!("comparison");
            doc["table"] = json!(path.display().to_string());
        }
    }
    Ok(doc)
}

fn cmd_bootstrap(config: &RunConfig) -> RunResult {
    let data = require_data(config)?;
    let seed = effective_seed(config);
    let scheme = match config.scheme.as_str() {
        "pairs" => ResampleScheme::Pairs,
        _ => ResampleScheme::Residual,
    };

    let report = match (config.u1, config.u2) {
        (Some(u1), Some(u2)) => {
            let opts = envelope_options(config);
            let base = fit_envelope(&data, u1, u2, &opts).map_err(RunError::from_lib)?;
            let predict = {
                let base = base.clone();
                move |x: &DMatrix<f64>| base.predict(x)
            };
            bootstrap_se(&data, scheme, config.b, seed, &predict, |resampled| {
                Ok(vec_mat(
                    &fit_envelope(resampled, u1, u2, &opts)?.coefficient_product(),
                ))
            })
            .map_err(RunError::from_lib)?
        }
        _ => {
            let opts = fit_options(config);
            let base = fit_bilinear(&data, &opts).map_err(RunError::from_lib)?;
            let predict = {
                let base = base.clone();
                move |x: &DMatrix<f64>| base.predict(x)
            };
            bootstrap_se(&data, scheme, config.b, seed, &predict, |resampled| {
                Ok(vec_mat(
                    &fit_bilinear(resampled, &opts)?.coefficient_product(),
                ))
            })
            .map_err(RunError::from_lib)?
        }
    };

    let mut doc = document_skeleton(config);
    doc["seed"] = json!(seed);
    doc["B"] = json!(config.b);
    doc["scheme"] = json!(config.scheme);
    doc["failures"] = json!(report.failures);
    doc["estimate"] = vec_json(&report.estimate);
    doc["se"] = vec_json(&report.se);
    Ok(doc)
}

fn cmd_report(config: &RunConfig) -> RunResult {
    let data = require_data(config)?;
    if data.p1() != 1 || data.p2() != 1 {
        return Err(RunError::usage(
            "report requires a scalar predictor (p1 = p2 = 1)".into(),
        ));
    }
    let seed = effective_seed(config);
    let u1 = config.u1.unwrap_or(data.r());
    let u2 = config.u2.unwrap_or(data.m());
    let axis = match config.axis.as_str() {
        "cols" => EffectAxis::Cols,
        _ => EffectAxis::Rows,
    };
    let report = location_effect_report(
        &data,
        u1,
        u2,
        axis,
        config.b,
        seed,
        &envelope_options(config),
    )
    .map_err(RunError::from_lib)?;

    let mut doc = document_skeleton(config);
    doc["seed"] = json!(seed);
    doc["B"] = json!(config.b);
    doc["u1"] = json!(u1);
    doc["u2"] = json!(u2);
    doc["axis"] = json!(config.axis);
    doc["estimate"] = vec_json(&report.estimate);
    doc["se"] = vec_json(&report.se);
    doc["pvalues"] = slice_json(&report.pvalues);
    doc["pvalues_fdr"] = slice_json(&report.pvalues_fdr);
    doc["neg_log10_fdr"] = slice_json(&report.neg_log10_fdr());
    Ok(doc)
}

/// Runs the configured command and returns the result document.
pub fn dispatch(config: &RunConfig) -> RunResult {
    match config.command {
        Command::Fit => cmd_fit(config),
        Command::Envelope => cmd_envelope(config),
        Command::Sparse => cmd_sparse(config),
        Command::Select => cmd_select(config),
        Command::Simulate => cmd_simulate(config),
        Command::Bootstrap => cmd_bootstrap(config),
        Command::Report => cmd_report(config),
    }
}
