//! End-to-end tests of the binary: exit codes, document contents, and
//! byte-identity with direct library calls.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use matreg::bilinear::{fit_bilinear, FitOptions};
use matreg::dataset::{write_dataset, MatrixDataset};
use matreg::simlab::{comparison_to_csv, run_comparison, SimModel, SimSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_matreg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json_of(output: &Output) -> serde_json::Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "invalid JSON ({e}): {}",
            String::from_utf8_lossy(&output.stdout)
        )
    })
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("matreg_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn toy_dataset() -> MatrixDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let beta1 = DMatrix::from_fn(2, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta2 = DMatrix::from_fn(2, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    for _ in 0..40 {
        let x = DMatrix::from_fn(1, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal)) * 0.4;
        ys.push(&beta1 * &x * beta2.transpose() + noise);
        xs.push(x);
    }
    MatrixDataset::new(ys, xs).unwrap()
}

fn write_toy(dir: &Path) -> PathBuf {
    let path = dir.join("toy.csv");
    write_dataset(&toy_dataset(), &path).unwrap();
    path
}

#[test]
fn fit_document_matches_library_call() {
    let dir = temp_dir("fit");
    let data_path = write_toy(&dir);
    let out = run(&["--command", "fit", "--data", data_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json_of(&out);

    let fit = fit_bilinear(&toy_dataset(), &FitOptions::default()).unwrap();
    assert_eq!(doc["loglik"].as_f64().unwrap(), fit.loglik);
    assert_eq!(doc["converged"].as_bool().unwrap(), fit.converged);
    assert_eq!(doc["dims"]["n"].as_u64().unwrap(), 40);
    // vector model block present with the LRT
    assert!(doc["vector_model"]["lrt"]["pvalue"].is_f64());
}

#[test]
fn missing_cell_gives_data_exit_code() {
    let dir = temp_dir("missing");
    let data_path = write_toy(&dir);
    let text = std::fs::read_to_string(&data_path).unwrap();
    let truncated: Vec<&str> = text.lines().filter(|l| !l.starts_with("3,Y,2,1")).collect();
    let bad_path = dir.join("bad.csv");
    std::fs::write(&bad_path, truncated.join("\n")).unwrap();

    let out = run(&["--command", "fit", "--data", bad_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let doc = json_of(&out);
    assert_eq!(doc["error"]["code"], "data");
    let message = doc["error"]["message"].as_str().unwrap();
    assert!(message.contains("unit=3"), "message: {message}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["--command", "dance"]).status.code(), Some(2));
    assert_eq!(run(&["--command", "fit", "--wat", "1"]).status.code(), Some(2));
    assert_eq!(run(&["--command", "envelope", "--data", "x"]).status.code(), Some(2));
    // out-of-range envelope dimension is a usage error
    let dir = temp_dir("usage");
    let data_path = write_toy(&dir);
    let out = run(&[
        "--command",
        "envelope",
        "--data",
        data_path.to_str().unwrap(),
        "--u1",
        "9",
        "--u2",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_table_matches_library_bytes() {
    let dir = temp_dir("sim");
    let doc_path = dir.join("sim.json");
    let out = run(&[
        "--command", "simulate", "--r", "2", "--m", "2", "--p1", "1", "--p2", "1", "--u1", "1",
        "--u2", "1", "--n-list", "80", "--reps", "4", "--seed", "31", "--out",
        doc_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let table = std::fs::read_to_string(dir.join("sim.comparison.csv")).unwrap();

    let spec = SimSpec {
        r: 2,
        m: 2,
        p1: 1,
        p2: 1,
        u1: 1,
        u2: 1,
        n_list: vec![80],
        reps: 4,
        seed: 31,
        models: vec![SimModel::Vector, SimModel::Bilinear, SimModel::Envelope],
        ..Default::default()
    };
    let expected = comparison_to_csv(&run_comparison(&spec).unwrap());
    assert_eq!(table, expected, "CLI table must match the library byte for byte");

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&doc_path).unwrap()).unwrap();
    assert_eq!(doc["seed"].as_u64().unwrap(), 31);
}

#[test]
fn config_file_flags_with_cli_override() {
    let dir = temp_dir("conf");
    let data_path = write_toy(&dir);
    let conf = dir.join("run.conf");
    std::fs::write(
        &conf,
        format!(
            "command = fit\ndata = {}\ntol = 1e-8\n",
            data_path.display()
        ),
    )
    .unwrap();
    let out = run(&["--config", conf.to_str().unwrap()]);
    assert!(out.status.success());

    // unknown config key is a strict error
    std::fs::write(&conf, "command = fit\nmystery = 1\n").unwrap();
    assert_eq!(run(&["--config", conf.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bootstrap_is_reproducible_and_seed_recorded() {
    let dir = temp_dir("boot");
    let data_path = write_toy(&dir);
    let args = [
        "--command",
        "bootstrap",
        "--data",
        data_path.to_str().unwrap(),
        "--B",
        "12",
        "--seed",
        "77",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout, "same seed, same bytes");
    let doc = json_of(&a);
    assert_eq!(doc["seed"].as_u64().unwrap(), 77);
    assert_eq!(doc["se"].as_array().unwrap().len(), 4);

    // without --seed the generated seed must be recorded
    let c = run(&args[..args.len() - 2]);
    assert!(c.status.success());
    assert!(json_of(&c)["seed"].is_u64());
}

#[test]
fn report_on_two_group_data() {
    let dir = temp_dir("report");
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let beta = DMatrix::from_fn(2, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    for i in 0..50 {
        let x = if i < 25 { 0.0 } else { 1.0 };
        let noise = DMatrix::from_fn(2, 3, |_, _| rng.sample::<f64, _>(StandardNormal)) * 0.5;
        ys.push(&beta * x + noise);
        xs.push(DMatrix::from_element(1, 1, x));
    }
    let data = MatrixDataset::new(ys, xs).unwrap();
    let path = dir.join("groups.csv");
    write_dataset(&data, &path).unwrap();

    let out = run(&[
        "--command",
        "report",
        "--data",
        path.to_str().unwrap(),
        "--u1",
        "1",
        "--u2",
        "1",
        "--B",
        "15",
        "--seed",
        "5",
        "--axis",
        "rows",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let doc = json_of(&out);
    assert_eq!(doc["estimate"].as_array().unwrap().len(), 3);
    let p = doc["pvalues_fdr"].as_array().unwrap();
    for v in p {
        let v = v.as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}
