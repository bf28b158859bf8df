use std::hint::black_box;

use agp_bench::{clustered_posterior, scenario};
use agp_core::agp;
use agp_core::experiment::{run_single, Algorithm};
use agp_core::gp::Observation;
use agp_core::kernels::KernelSpec;
use agp_core::regret::info_gain_greedy;
use agp_core::solver::BoxDomain;
use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};

fn gp(c: &mut Criterion) {
    let mut group = c.benchmark_group("gp");
    for n in [100, 500, 2000] {
        let post = clustered_posterior(n);
        group.bench_with_input(BenchmarkId::new("update", n), &post, |b, post| {
            b.iter_batched(
                || post.clone(),
                |mut p| p.update(&Observation::new(vec![0.71], 0.5)).unwrap(),
                BatchSize::LargeInput,
            )
        });
        group.bench_with_input(BenchmarkId::new("local", n), &post, |b, post| {
            b.iter(|| post.local(black_box(&[0.42])).unwrap())
        });
    }
    group.finish();
}

fn loop_step(c: &mut Criterion) {
    let sc = scenario(400, 0.4);
    let setup = sc.setup();
    let mut state = setup.initial_state(0).unwrap();
    for _ in 0..300 {
        agp::step(&mut state, &setup).unwrap();
    }
    c.bench_function("agp_step_after_300", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| agp::step(&mut s, &setup).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("run");
    group.sample_size(10);
    let sc = scenario(500, 0.4);
    for alg in [Algorithm::AgpUcb, Algorithm::Synthetic, Algorithm::Zero4] {
        group.bench_function(alg.label(), |b| b.iter(|| run_single(&sc, 0, alg).unwrap()));
    }
    group.finish();
}

fn oracle_and_gain(c: &mut Criterion) {
    let mut group = c.benchmark_group("setup");
    group.sample_size(10);
    group.bench_function("scenario_2000_vanishing", |b| {
        b.iter(|| {
            let mut cfg = agp_core::experiment::ExperimentConfig::default();
            cfg.objective.trajectory = agp_core::Trajectory::Vanishing;
            cfg.objective.omega = 0.4;
            agp_core::experiment::Scenario::new(cfg).unwrap()
        })
    });
    group.bench_function("info_gain_501", |b| {
        b.iter(|| info_gain_greedy(&KernelSpec::default(), &BoxDomain::unit(1), 501, 500, 0.1).unwrap())
    });
    group.finish();
}

criterion_group!(benches, gp, loop_step, runs, oracle_and_gain);
criterion_main!(benches);
