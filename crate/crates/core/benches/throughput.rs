//! Single-thread vs. full-pool throughput of the data-parallel hot paths.
//! Built without the `parallel` feature both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use emoblend::dataio::{canonical_names, one_hot, BlendshapeDataset, BlendshapeFrame, LabeledSample, SourceLabel, Split};
use emoblend::featsel::{count_activations, FeatureMask};
use emoblend::lossmetrics::Loss;
use emoblend::nn::{Model, DEFAULT_LAYER_UNITS};
use emoblend::optim::{batch_gradient, evaluate};
use emoblend::par;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(n: usize) -> BlendshapeDataset {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let samples = (0..n)
        .map(|i| {
            let scores = (0..52).map(|_| r.random_range(0.0..=1.0)).collect();
            let src = SourceLabel::ALL[r.random_range(0..7)];
            LabeledSample::from_source(BlendshapeFrame::new(scores, Some(i as u64)).unwrap(), src)
        })
        .collect();
    BlendshapeDataset::new(Split::Test, samples)
}

fn mask27() -> FeatureMask {
    FeatureMask::new((0..27).map(|i| i * 52 / 27).collect(), canonical_names()).unwrap()
}

const THREADS: [(&str, usize); 2] = [("1-thread", 1), ("pool", 0)];

fn bench_gradient(c: &mut Criterion) {
    let model = Model::init(&DEFAULT_LAYER_UNITS, mask27(), 0).unwrap();
    let ds = dataset(128);
    let examples: Vec<(Vec<f64>, Vec<f64>)> = ds
        .samples
        .iter()
        .map(|s| (model.features(&s.frame.scores).unwrap(), one_hot(s.label3, 3).unwrap()))
        .collect();
    let batch: Vec<(&[f64], &[f64])> = examples.iter().map(|(x, y)| (x.as_slice(), y.as_slice())).collect();
    let mut g = c.benchmark_group("batch_gradient_128");
    g.throughput(Throughput::Elements(batch.len() as u64));
    for (name, threads) in THREADS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::with_threads(threads, || b.iter(|| black_box(batch_gradient(&model.params, &batch, &Loss::Cce).unwrap())))
        });
    }
    g.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let model = Model::init(&DEFAULT_LAYER_UNITS, mask27(), 0).unwrap();
    let ds = dataset(2000);
    let mut g = c.benchmark_group("evaluate_2000");
    g.throughput(Throughput::Elements(ds.len() as u64));
    for (name, threads) in THREADS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::with_threads(threads, || b.iter(|| black_box(evaluate(&model, &ds).unwrap())))
        });
    }
    g.finish();
}

fn bench_counts(c: &mut Criterion) {
    let ds = dataset(20_000);
    let mut g = c.benchmark_group("count_activations_20000");
    g.throughput(Throughput::Elements(ds.len() as u64));
    for (name, threads) in THREADS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::with_threads(threads, || b.iter(|| black_box(count_activations(&ds, 0.4).unwrap())))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_gradient, bench_evaluate, bench_counts);
criterion_main!(benches);
