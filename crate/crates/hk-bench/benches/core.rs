use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hk_core::{
    certify, hopf_lax_forward, solve_let, Atom, DensityFunction, DiscreteMeasure, GridFunction, GridSpec, SolverOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> DiscreteMeasure {
    let atoms = (0..n)
        .map(|_| {
            Atom::new(
                vec![rng.random::<f64>(), rng.random::<f64>()],
                rng.random_range(0.1..2.0),
            )
        })
        .collect();
    DiscreteMeasure::new(2, atoms).unwrap()
}

fn bench_solve_let(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_let");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [4, 16, 64] {
        let (a, b) = (random_measure(&mut rng, n), random_measure(&mut rng, n));
        let opts = SolverOptions::with_tolerance(1e-9);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| solve_let(black_box(&a), black_box(&b), &opts).unwrap())
        });
    }
    group.finish();
}

fn bench_hopf_lax(c: &mut Criterion) {
    let mut group = c.benchmark_group("hopf_lax_forward");
    for n in [201, 1001, 4001] {
        let grid = GridSpec::uniform_1d(-3.0, 3.0, n).unwrap();
        let xi0 = GridFunction::from_fn(grid, |x| 0.2 * x[0] * x[0]).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| hopf_lax_forward(black_box(&xi0), 0.5).unwrap())
        });
    }
    group.finish();
}

fn bench_certify(c: &mut Criterion) {
    let e = DensityFunction::Sum(vec![DensityFunction::Power(2.0), DensityFunction::NegativePower(0.4)]);
    c.bench_function("certify", |bench| {
        bench.iter(|| certify(black_box(&e), 1, 0.6, None).unwrap())
    });
}

criterion_group!(benches, bench_solve_let, bench_hopf_lax, bench_certify);
criterion_main!(benches);
