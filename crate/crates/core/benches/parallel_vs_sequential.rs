use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use preflab::exec::Execution;
use preflab::harness::{pairwise_counts, RewardFunction};
use preflab::models::{PolicyModel, RewardModel};
use preflab::numerics::Prng;
use preflab::trainers::{dpo_loss, reward_nll_loss};
use preflab::world::{build_dataset_with, World, WorldSpec};

fn modes() -> Vec<(&'static str, Execution)> {
    vec![
        ("sequential", Execution::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Execution::Parallel),
    ]
}

fn bench(c: &mut Criterion) {
    let world = World::new(WorldSpec::default()).unwrap();
    let arch = world.spec().arch.clone();
    let batch = build_dataset_with(Execution::Sequential, &world, 64, &Prng::new(1)).unwrap().pairs;
    let eval = build_dataset_with(Execution::Sequential, &world, 500, &Prng::new(2)).unwrap();
    let rm = RewardModel::random(arch.clone(), 0.5, &mut Prng::new(3)).unwrap();
    let policy = PolicyModel::init(arch.clone(), 0.5, &mut Prng::new(4)).unwrap();
    let reference = PolicyModel::init(arch, 0.5, &mut Prng::new(5)).unwrap();
    let scorer = RewardFunction::Explicit(rm.clone());

    let mut g = c.benchmark_group("parallel_vs_sequential");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::new("reward_nll_grad_b64", name), &exec, |b, &e| {
            b.iter(|| reward_nll_loss(e, &rm, &batch).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("dpo_grad_b64", name), &exec, |b, &e| {
            b.iter(|| dpo_loss(e, &policy, &reference, &batch, 0.1).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("build_dataset_1000", name), &exec, |b, &e| {
            b.iter(|| build_dataset_with(e, &world, 1000, &Prng::new(6)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("pairwise_counts_500", name), &exec, |b, &e| {
            b.iter(|| pairwise_counts(e, &scorer, &eval).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
