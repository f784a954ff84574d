use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kmeflow::flow::{assemble_gram, flow_step, FlowConfig, KernelTables};
use kmeflow::models::{Gaussian, PriorSpec};
use kmeflow::{ensemble_covariance, Ensemble, Exec, KernelSpec};
use std::hint::black_box;

fn ensemble(n: usize, d: usize) -> Ensemble {
    let prior = PriorSpec::Gaussian(Gaussian::isotropic(d, 0.0, 1.0).unwrap());
    Ensemble::new(prior.sample_sobol(n, 0).unwrap()).unwrap()
}

fn modes() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::sequential()), ("parallel", Exec::parallel())]
}

fn gram(c: &mut Criterion) {
    let mut group = c.benchmark_group("gram");
    group.sample_size(10);
    let k = KernelSpec::Rbf { bandwidth: 2.0 };
    for (n, d) in [(250, 3), (500, 3), (500, 20)] {
        let e = ensemble(n, d);
        let cov = ensemble_covariance(&e).unwrap();
        for (name, exec) in modes() {
            group.bench_with_input(BenchmarkId::new(name, format!("n{n}_d{d}")), &e, |b, e| {
                b.iter(|| KernelTables::new(e, &k, &exec).unwrap().gram(&cov).unwrap())
            });
        }
    }
    let small = ensemble(200, 2);
    let cov = ensemble_covariance(&small).unwrap();
    group.bench_function("default_n200_d2", |b| b.iter(|| assemble_gram(black_box(&small), &k, &cov).unwrap()));
    group.finish();
}

fn step(c: &mut Criterion) {
    let mut group = c.benchmark_group("flow_step");
    group.sample_size(10);
    let k = KernelSpec::Rbf { bandwidth: 5.0 };
    let h = |x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>();
    for n in [250, 500] {
        let e = ensemble(n, 3);
        for (name, exec) in modes() {
            let cfg = FlowConfig::new(50, 1e-9).with_exec(exec);
            group.bench_with_input(BenchmarkId::new(name, n), &e, |b, e| {
                b.iter(|| flow_step(e, &k, &cfg, &h, 0.02).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, gram, step);
criterion_main!(benches);
