use criterion::{black_box, criterion_group, criterion_main, Criterion};

use czsl_bench::bench_dataset;
use czsl_core::config::RunConfig;
use czsl_core::continual::{
    build_schedule, generate_replay, train_task, AblationFlags, ReplaySet, Setting, TaskData,
};
use czsl_core::eval::ausuc;
use czsl_core::model::{classify, CGZSLModel};
use czsl_core::nn::{AdamState, Rng, Stream};

/// One epoch of discriminator/generator steps on the first task of the
/// fixture dataset, replay pool included.
fn bench_train_epoch(c: &mut Criterion) {
    let dataset = bench_dataset();
    let schedule = build_schedule(12, Setting::Dynamic, 2).unwrap();
    let mut run = RunConfig::default();
    run.train.epochs = 1;
    run.train.seed = 3;
    let mc = run.model_config(dataset.features.cols(), dataset.attributes.cols());
    let mut init = Rng::derive(3, Stream::Init);
    let model = CGZSLModel::new(mc, &mut init).unwrap();
    let spec = schedule.task(1).unwrap();
    let mut registered = model.clone();
    registered
        .register_task(&spec.new_seen, &schedule.registration_unseen_at(1).unwrap(), &[], &dataset.attributes)
        .unwrap();
    let trainable: Vec<usize> = schedule.train_classes_at(1).unwrap();
    let rows: Vec<usize> = dataset
        .train_idx
        .iter()
        .copied()
        .filter(|&i| trainable.contains(&dataset.labels[i]))
        .collect();
    let data = TaskData {
        features: dataset.features.select_rows(&rows).unwrap(),
        labels: rows.iter().map(|&i| dataset.labels[i]).collect(),
        source_rows: rows,
    };
    let replay = ReplaySet::empty(registered.config.d_x);
    let ablation = AblationFlags::default();

    c.bench_function("train_epoch", |b| {
        b.iter(|| {
            let mut m = registered.clone();
            let mut og = AdamState::new(run.train.optimizer, &m.generator.param_shapes());
            let mut od = AdamState::new(run.train.optimizer, &m.discriminator.param_shapes());
            train_task(&mut m, &mut og, &mut od, &data, &replay, &run.train, &ablation, 1)
                .unwrap()
        })
    });
}

/// Cosine classification of the full test split against a registered model.
fn bench_classify(c: &mut Criterion) {
    let dataset = bench_dataset();
    let mut init = Rng::derive(7, Stream::Init);
    let run = RunConfig::default();
    let mc = run.model_config(dataset.features.cols(), dataset.attributes.cols());
    let mut model = CGZSLModel::new(mc, &mut init).unwrap();
    let all: Vec<usize> = (0..12).collect();
    model.register_task(&all[..8], &all[8..], &[], &dataset.attributes).unwrap();
    let projections = model.projections().unwrap();
    let feats = dataset.features.select_rows(&dataset.test_idx).unwrap();

    c.bench_function("classify_test_split", |b| {
        b.iter(|| classify(black_box(&feats), black_box(&projections)).unwrap())
    });
}

/// Replay generation with the self-filter for eight classes.
fn bench_replay(c: &mut Criterion) {
    let dataset = bench_dataset();
    let mut init = Rng::derive(11, Stream::Init);
    let run = RunConfig::default();
    let mc = run.model_config(dataset.features.cols(), dataset.attributes.cols());
    let mut model = CGZSLModel::new(mc, &mut init).unwrap();
    let all: Vec<usize> = (0..12).collect();
    model.register_task(&all[..8], &all[8..], &[], &dataset.attributes).unwrap();
    let classes: Vec<usize> = (0..8).collect();

    c.bench_function("generate_replay", |b| {
        b.iter(|| {
            let mut rng = Rng::derive(11, Stream::Replay(2));
            generate_replay(black_box(&model), &classes, 32, &mut rng).unwrap()
        })
    });
}

/// Exact area under the seen/unseen curve on a 600-row score table.
fn bench_ausuc(c: &mut Criterion) {
    let mut rng = Rng::derive(13, Stream::Synth);
    let classes: Vec<usize> = (0..12).collect();
    let labels: Vec<usize> = (0..600).map(|i| i % 12).collect();
    let scores = rng.normal_matrix(600, 12);

    c.bench_function("ausuc_600_rows", |b| {
        b.iter(|| {
            ausuc(
                black_box(&scores),
                black_box(&labels),
                &classes,
                &classes[..8],
                &classes[8..],
            )
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_train_epoch,
    bench_classify,
    bench_replay,
    bench_ausuc
);
criterion_main!(benches);
