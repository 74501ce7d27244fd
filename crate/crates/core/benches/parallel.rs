use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use qoct_core::config::{parse_config, preset_text, ResolvedRun};
use qoct_core::oracle::{c_tau_oracle_batch, QuadratureGrid, QuadratureScheme};
use qoct_core::sweeps::{run_sweep, SweepRange, SweepSpec, SweepVariable};
use qoct_core::Execution;

const STRATEGIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn resolved(name: &str) -> ResolvedRun {
    parse_config(preset_text(name).unwrap())
        .unwrap()
        .resolve()
        .unwrap()
}

fn interferogram(c: &mut Criterion) {
    let run = resolved("paper-2mm");
    let engine = run.scenario.engine().unwrap();
    let mut group = c.benchmark_group("interferogram_slab_2mm");
    group.sample_size(10);
    for (label, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| {
                engine
                    .interferogram(black_box(&run.tau_grid), exec)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let s = resolved("desk-oracle").scenario;
    let grid = QuadratureGrid::new(6.0, 513, QuadratureScheme::Simpson).unwrap();
    let taus: Vec<f64> = (0..16).map(|i| -1.0 + 0.5 * i as f64).collect();
    let mut group = c.benchmark_group("oracle_desk");
    group.sample_size(10);
    for (label, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| {
                c_tau_oracle_batch(
                    &s.spectrum,
                    &s.arm1,
                    &s.arm2,
                    &s.stack,
                    black_box(&taus),
                    &grid,
                    exec,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let s = resolved("paper-2mm").scenario;
    let spec = SweepSpec::new(
        SweepVariable::BetaBoth,
        SweepRange {
            start: 0.0,
            stop: 5.4,
            count: 55,
        },
        s,
    )
    .unwrap();
    let mut group = c.benchmark_group("beta_sweep_slab_2mm");
    group.sample_size(10);
    for (label, exec) in STRATEGIES {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| run_sweep(black_box(&spec), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, interferogram, oracle, sweep);
criterion_main!(benches);
