use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use egfn_core::agent::sample_trajectories;
use egfn_core::evolution::next_generation;
use egfn_core::losses::batch_loss;
use egfn_core::{
    Environment, EvoConfig, GfnAgent, HypergridEnv, MlpSpec, ObjectiveKind, Population, ReplayBuffer, ReplayConfig,
};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid() -> HypergridEnv {
    HypergridEnv::with_r0(4, 8, 1e-4).unwrap()
}

fn mlp(c: &mut Criterion) {
    let env = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let agent = GfnAgent::init(ObjectiveKind::Db, &env, &[256, 256], &mut rng).unwrap();
    let inputs = Array2::from_shape_fn((64, env.encoding_dim()), |(r, c)| ((r * 7 + c) % 3) as f64 / 2.0);
    c.bench_function("mlp_forward_64x256x256", |b| {
        b.iter(|| agent.spec.forward_batch(&agent.params, black_box(inputs.view())).unwrap())
    });
    let (out, cache) = agent.spec.forward_cached(&agent.params, inputs.clone()).unwrap();
    let upstream = Array2::ones(out.raw_dim());
    c.bench_function("mlp_backward_64x256x256", |b| {
        b.iter(|| agent.spec.backward(&agent.params, &cache, black_box(upstream.view())).unwrap())
    });
}

fn losses(c: &mut Criterion) {
    let env = grid();
    for kind in [ObjectiveKind::Fm, ObjectiveKind::Db, ObjectiveKind::Tb] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let agent = GfnAgent::init(kind, &env, &[256, 256], &mut rng).unwrap();
        let batch = sample_trajectories(&agent, &env, 16, &mut rng, 0.0).unwrap();
        c.bench_function(&format!("batch_loss_{kind}_16"), |b| {
            b.iter(|| batch_loss(&agent, &env, black_box(&batch)).unwrap())
        });
    }
}

fn sampling(c: &mut Criterion) {
    let env = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let agent = GfnAgent::init(ObjectiveKind::Tb, &env, &[256, 256], &mut rng).unwrap();
    c.bench_function("sample_trajectories_16", |b| {
        b.iter(|| sample_trajectories(&agent, &env, 16, &mut rng, 0.0).unwrap())
    });
}

fn replay(c: &mut Criterion) {
    let env = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let agent = GfnAgent::init(ObjectiveKind::Tb, &env, &[32], &mut rng).unwrap();
    let mut buffer = ReplayBuffer::new(ReplayConfig::default()).unwrap();
    while buffer.len() < ReplayConfig::default().capacity {
        for tau in sample_trajectories(&agent, &env, 64, &mut rng, 0.5).unwrap() {
            buffer.insert(tau);
        }
    }
    c.bench_function("replay_sample_indices_16", |b| {
        b.iter(|| buffer.sample_indices(black_box(16), &mut rng).unwrap())
    });
    let extra = sample_trajectories(&agent, &env, 1, &mut rng, 0.5).unwrap().remove(0);
    c.bench_function("replay_insert_full", |b| {
        b.iter_batched(|| (buffer.clone(), extra.clone()), |(mut buf, tau)| buf.insert(tau), BatchSize::LargeInput)
    });
}

fn evolution(c: &mut Criterion) {
    let spec = MlpSpec::new(36, vec![256, 256], 17).unwrap();
    let cfg = EvoConfig::default();
    let mut pop = Population::init(&spec, cfg.population_size, 5);
    pop.fitness = (0..pop.len()).map(|i| i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    c.bench_function("next_generation_k5", |b| {
        b.iter(|| next_generation(black_box(&pop), &cfg, &mut rng, None).unwrap())
    });
}

criterion_group!(benches, mlp, losses, sampling, replay, evolution);
criterion_main!(benches);
