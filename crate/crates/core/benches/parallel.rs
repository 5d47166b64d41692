//! Data-parallel paths on rayon's default pool against a one-thread pool.
//! Build with `--no-default-features` to time the plain sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdnn_kws::training::{word_batch, Net, Segment};
use tdnn_kws::{batch_forward, FeatureFrame, SkipMode, TdnnModel};

fn frames(n: usize, seed: u64) -> Vec<FeatureFrame> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| FeatureFrame::new(i, (0..41).map(|_| r.gen_range(-2.0..2.0)).collect()))
        .collect()
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("1-thread", one), ("default", all)]
}

fn bench_forward(c: &mut Criterion) {
    let model = TdnnModel::build_default(2, 0).unwrap();
    let feats = frames(1000, 1);
    let mut group = c.benchmark_group("batch_forward_10s");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| batch_forward(&model, &feats, SkipMode::None).unwrap()))
        });
    }
    group.finish();
}

fn bench_word_batch(c: &mut Criterion) {
    let model = TdnnModel::build_default(2, 0).unwrap();
    let net = Net::<f32>::from_model(&model, SkipMode::None).unwrap();
    let len = net.geometry.receptive_field() + 31;
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let segments: Vec<Segment<f32>> = (0..64)
        .map(|_| Segment {
            frames: Array2::from_shape_fn((len, 41), |_| r.gen_range(-2.0..2.0)),
            labels: (0..32).map(|_| r.gen_range(0..3)).collect(),
        })
        .collect();
    let mut group = c.benchmark_group("word_batch_64x32");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| word_batch(&net, &segments, false, true).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_forward, bench_word_batch);
criterion_main!(benches);
