//! Sequential versus rayon-parallel Monte-Carlo sweeps on a reduced setup.
//! Without the `parallel` feature both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use vbchan::harness::{run_monte_carlo, Algorithm, BcdStop, Execution, ExperimentConfig, ViStop};

fn config(execution: Execution) -> ExperimentConfig {
    ExperimentConfig {
        dims: [6, 6, 6],
        users: 3,
        paths: 2,
        rank_bounds: vec![4],
        algorithms: vec![Algorithm::Ls, Algorithm::BcdGenie, Algorithm::Vi],
        trials: 8,
        bcd: BcdStop {
            max_iters: 100,
            ..Default::default()
        },
        vi: ViStop {
            max_iters: 50,
            ..Default::default()
        },
        execution,
        ..Default::default()
    }
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for (name, exec) in [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel),
    ] {
        let cfg = config(exec);
        group.bench_function(name, |b| {
            b.iter(|| run_monte_carlo(black_box(&cfg)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
