//! Throughput of the three hot paths: half-day window simulation, a full
//! train-and-evaluate run, and a multi-run sweep through the scheduler.
//!
//! The sweep bench is the one that exercises the worker scheduler, so run
//! it under both builds to compare them:
//!
//! ```text
//! cargo bench --bench throughput                        # parallel scheduler
//! cargo bench --bench throughput --no-default-features  # sequential fallback
//! ```

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rebal_core::city::{build_scenario, Period, ScenarioConfig};
use rebal_core::sim::{init_states, run_window};
use rebal_core::stochastic::RandomSource;
use rebal_core::sweep::{run_sweep, train_and_evaluate, SweepSpec};

/// A deliberately short horizon: the bench shape (areas, epochs, updates)
/// matches real runs while a single iteration stays in the tens of
/// milliseconds.
fn short_scenario(class_count: usize, train_days: u64) -> ScenarioConfig {
    let mut scenario = build_scenario(class_count).expect("built-in");
    scenario.train_days = train_days;
    scenario.eval_days = 20;
    scenario
}

fn bench_window(c: &mut Criterion) {
    let scenario = build_scenario(5).expect("built-in");
    c.bench_function("window_simulation_160_areas", |b| {
        let mut states = init_states(&scenario);
        let mut rng = RandomSource::new(17);
        let mut period = Period::Morning;
        b.iter(|| {
            let outcomes = run_window(&mut states, &scenario, period, &mut rng);
            period = period.other();
            outcomes
        });
    });
}

fn bench_train_evaluate(c: &mut Criterion) {
    let scenario = short_scenario(2, 200);
    c.bench_function("train_evaluate_70_areas_200_days", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            train_and_evaluate(&scenario, seed).expect("run")
        });
    });
}

fn bench_sweep(c: &mut Criterion) {
    let scenario = short_scenario(2, 100);
    c.bench_function("sweep_six_runs", |b| {
        b.iter_batched(
            || {
                let dir = tempfile::tempdir().expect("tempdir");
                let mut spec = SweepSpec::new(
                    vec![scenario.clone()],
                    vec![0.0, 0.5, 1.0],
                    vec![0, 1],
                    dir.path().to_path_buf(),
                );
                spec.workers = 0;
                (dir, spec)
            },
            |(dir, spec)| {
                let summary = run_sweep(&spec).expect("sweep");
                // The tempdir must outlive the sweep, then drop with it.
                drop(dir);
                summary
            },
            BatchSize::PerIteration,
        );
    });
}

criterion_group!(
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_window, bench_train_evaluate, bench_sweep
);
criterion_main!(benches);
