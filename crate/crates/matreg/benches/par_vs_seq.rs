//! Benchmarks of the replicate-parallel workloads.
//!
//! The same suite compiles in both execution modes; bench IDs carry the mode
//! so results are comparable across runs:
//!
//! ```text
//! cargo bench -p matreg                          # rayon pool
//! cargo bench -p matreg --no-default-features    # sequential fallback
//! ```

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use matreg::dataset::MatrixDataset;
use matreg::inference::{bootstrap_se, ResampleScheme};
use matreg::linalg::vec_mat;
use matreg::simlab::{gen_sim_dataset, run_comparison, SimModel, SimSpec};

#[cfg(feature = "parallel")]
const MODE: &str = "parallel";
#[cfg(not(feature = "parallel"))]
const MODE: &str = "sequential";

fn small_spec(reps: usize) -> SimSpec {
    SimSpec {
        r: 3,
        m: 3,
        p1: 2,
        p2: 2,
        u1: 1,
        u2: 1,
        n_list: vec![100],
        reps,
        seed: 42,
        models: vec![SimModel::Vector, SimModel::Bilinear, SimModel::Envelope],
        ..Default::default()
    }
}

fn bench_comparison_study(c: &mut Criterion) {
    let mut group = c.benchmark_group("comparison_study");
    group.sample_size(10);
    for reps in [8usize, 32] {
        let spec = small_spec(reps);
        group.bench_with_input(
            BenchmarkId::new(format!("{MODE}/reps"), reps),
            &spec,
            |b, spec| b.iter(|| run_comparison(spec).unwrap()),
        );
    }
    group.finish();
}

fn bench_bootstrap(c: &mut Criterion) {
    let spec = small_spec(1);
    let (data, _) = gen_sim_dataset(&spec, 150, 7).unwrap();
    let base = matreg::bilinear::fit_bilinear(&data, &Default::default()).unwrap();

    let mut group = c.benchmark_group("bootstrap");
    group.sample_size(10);
    for b_reps in [50usize, 200] {
        group.bench_with_input(
            BenchmarkId::new(format!("{MODE}/B"), b_reps),
            &b_reps,
            |bench, &b_reps| {
                bench.iter(|| {
                    let predict = |x: &nalgebra::DMatrix<f64>| base.predict(x);
                    bootstrap_se(
                        &data,
                        ResampleScheme::Residual,
                        b_reps,
                        11,
                        &predict,
                        |resampled: &MatrixDataset| {
                            Ok(vec_mat(
                                &matreg::bilinear::fit_bilinear(resampled, &Default::default())?
                                    .coefficient_product(),
                            ))
                        },
                    )
                    .unwrap()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_comparison_study, bench_bootstrap);
criterion_main!(benches);
