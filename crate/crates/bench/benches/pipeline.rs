use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gridjac_bench::{operating_point, state_matrix, trajectory};
use gridjac_core::analytic::solve_lyapunov;
use gridjac_core::estimator::{estimate_jacobian, sample_covariance};
use gridjac_core::modal::eigen_decompose;
use gridjac_core::prony::{prony_fit, PronyConfig};
use gridjac_core::swingsim::simulate;
use gridjac_core::{ContingencySchedule, SimConfig};

fn simulation(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for case in ["wscc9", "ieee39"] {
        let (model, eq) = operating_point(case);
        let x0 = eq.state(&model);
        let cfg = SimConfig { dt: 1e-3, t_end: 10.0, record_every: 10, seed: 1 };
        g.bench_function(format!("{case} 10 s"), |b| {
            b.iter(|| simulate(&model, &ContingencySchedule::empty(), black_box(&x0), &cfg).unwrap())
        });
    }
    g.finish();
}

fn lyapunov(c: &mut Criterion) {
    for case in ["wscc9", "ieee39"] {
        let (a, b) = state_matrix(case);
        c.bench_function(&format!("lyapunov {case}"), |bch| bch.iter(|| solve_lyapunov(black_box(&a.a), &b.b).unwrap()));
    }
}

fn eigen(c: &mut Criterion) {
    let (a, _) = state_matrix("ieee39");
    c.bench_function("eigen ieee39", |b| b.iter(|| eigen_decompose(black_box(&a.a)).unwrap()));
}

fn estimate(c: &mut Criterion) {
    let (model, _) = operating_point("ieee39");
    let traj = trajectory("ieee39", 100.0);
    let m = model.m_indep();
    c.bench_function("estimate ieee39 100 s window", |b| {
        b.iter(|| {
            let cov = sample_covariance(black_box(&traj), 0.0, 100.0).unwrap();
            estimate_jacobian(&m, &cov).unwrap()
        })
    });
    let col = traj.column_index("dtilde_4").unwrap();
    let x: Vec<f64> = traj.window_rows(20.0, 40.0).unwrap().map(|i| traj.row(i)[col]).collect();
    let cfg = PronyConfig::new(19).with_decimation(5);
    c.bench_function("prony order 19", |b| b.iter(|| prony_fit(black_box(&x), traj.sample_period(), &cfg).unwrap()));
}

criterion_group!(benches, simulation, lyapunov, eigen, estimate);
criterion_main!(benches);
