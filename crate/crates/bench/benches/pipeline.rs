use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use guifl_bench::{updates, Fixture, FEATURE_DIM};
use guifl_core::eval::toy_predictions;
use guifl_core::fl::{aggregate, run_round, server_step, RunOptions, Weighting};
use guifl_core::local_train::local_train;
use guifl_core::{
    evaluate, partition, AlgoConfig, Algorithm, Axis, Episode, ParamVector, PartitionSpec, RoundConfig, Scheme,
    ServerState, SpacePolicy, ToyModel, ToyTrainer, TrainSpec,
};
use std::hint::black_box;

fn server(c: &mut Criterion) {
    let ups = updates(15);
    c.bench_function("aggregate_15", |b| b.iter(|| aggregate(black_box(&ups), Weighting::BySamples).unwrap()));
    let delta = aggregate(&ups, Weighting::BySamples).unwrap();
    let dim = delta.dim();
    c.bench_function("server_step_fedyogi", |b| {
        b.iter_batched(
            || ServerState::new(ParamVector::zeros(dim), AlgoConfig::new(Algorithm::FedYogi)),
            |mut s| server_step(&mut s, black_box(&delta)).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn training(c: &mut Criterion) {
    let fx = Fixture::new(200, 15);
    let sample: Vec<&Episode> = fx.episodes.iter().take(40).collect();
    let global = ToyModel::zeros(FEATURE_DIM).params;
    let spec = TrainSpec { local_epochs: 3, client_lr: 0.05, ..TrainSpec::default() };
    c.bench_function("local_train_40_episodes", |b| b.iter(|| local_train(&global, black_box(&sample), &spec).unwrap()));

    let index = fx.index();
    let trainer = ToyTrainer { feature_dim: FEATURE_DIM, local_epochs: 1, batch_size: 4, client_lr: 0.05 };
    let rc = RoundConfig::default();
    c.bench_function("run_round_fedavg", |b| {
        b.iter_batched(
            || ServerState::new(ToyModel::zeros(FEATURE_DIM).params, AlgoConfig::new(Algorithm::FedAvg)),
            |mut s| run_round(&mut s, &fx.manifest, &index, &trainer, &rc, &RunOptions::default()).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn data(c: &mut Criterion) {
    let fx = Fixture::new(1000, 15);
    c.bench_function("partition_nonuniform_3000", |b| {
        let spec = PartitionSpec::new(Axis::Platform, Scheme::NonUniform, 15, 3);
        b.iter(|| partition(black_box(&fx.episodes), &spec).unwrap())
    });
    let preds = toy_predictions(&ToyModel::zeros(FEATURE_DIM), &fx.episodes);
    c.bench_function("evaluate_3000", |b| {
        b.iter(|| evaluate(black_box(&preds), &fx.episodes, SpacePolicy::default()).unwrap())
    });
}

criterion_group!(benches, server, training, data);
criterion_main!(benches);
