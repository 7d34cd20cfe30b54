//! Parallel vs sequential throughput of the data-parallel stages.
//!
//! With the `parallel` feature each workload runs twice: on the global rayon
//! pool and inside a one-thread pool. Without it only the sequential path is
//! measured, so `cargo bench --no-default-features` gives the fallback's
//! numbers.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use featcodec::boosting::{rank_dexels, synth_planted_pairs, DexelRanking, PlantedPairsConfig};
use featcodec::bovw::{build_global, learn_dictionary, ClusterMethod, DictionaryConfig};
use featcodec::entropy::DexelStats;
use featcodec::feature::{synth_stream, BinaryDescriptor, SynthConfig};
use featcodec::local::{encode_local_stream, train_local_codebook, EncoderConfig, LocalCodec, LocalTrainingConfig};

fn backends() -> Vec<&'static str> {
    if featcodec::par::is_parallel() {
        vec!["parallel", "sequential"]
    } else {
        vec!["sequential"]
    }
}

fn on_backend<R>(backend: &str, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    #[cfg(feature = "parallel")]
    if backend == "sequential" {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
        return pool.install(f);
    }
    let _ = backend;
    f()
}

fn stream(seed: u64) -> featcodec::feature::FeatureStream {
    synth_stream(&SynthConfig { seed, ..SynthConfig::default() }).expect("synth")
}

fn dexel_stats(c: &mut Criterion) {
    let s = stream(1);
    let descriptors: Vec<BinaryDescriptor> = s.descriptors().cloned().collect();
    let mut group = c.benchmark_group("dexel_stats");
    group.throughput(Throughput::Elements(descriptors.len() as u64));
    for backend in backends() {
        group.bench_function(BenchmarkId::from_parameter(backend), |b| {
            b.iter(|| on_backend(backend, || DexelStats::estimate(&descriptors).unwrap()))
        });
    }
    group.finish();
}

fn local_encode(c: &mut Criterion) {
    let k = 64;
    let train = stream(2);
    let book = Arc::new(
        train_local_codebook(&[train], &LocalTrainingConfig::new(k, DexelRanking::identity(512))).unwrap(),
    );
    let codec = LocalCodec::new(book, EncoderConfig::new(k)).unwrap();
    let test = stream(3);
    let mut group = c.benchmark_group("local_encode_auto");
    group.sample_size(20);
    group.throughput(Throughput::Elements(test.feature_count() as u64));
    for backend in backends() {
        group.bench_function(BenchmarkId::from_parameter(backend), |b| {
            b.iter(|| on_backend(backend, || encode_local_stream(&codec, &test).unwrap()))
        });
    }
    group.finish();
}

fn bovw_assign(c: &mut Criterion) {
    let s = stream(4);
    let sample: Vec<BinaryDescriptor> = s.descriptors().cloned().collect();
    let cfg = DictionaryConfig {
        max_iterations: 5,
        ..DictionaryConfig::new(256, ClusterMethod::KMedians, 0)
    };
    let dict = learn_dictionary(&sample, &cfg).unwrap().dictionary;
    let mut group = c.benchmark_group("bovw_global_build");
    group.throughput(Throughput::Elements(s.feature_count() as u64));
    for backend in backends() {
        group.bench_function(BenchmarkId::from_parameter(backend), |b| {
            b.iter(|| {
                on_backend(backend, || {
                    s.frames.iter().map(|f| build_global(f.descriptors(), &dict).unwrap()).collect::<Vec<_>>()
                })
            })
        });
    }
    group.finish();
}

fn boosting(c: &mut Criterion) {
    let (pairs, _) = synth_planted_pairs(&PlantedPairsConfig {
        descriptor_length: 256,
        pairs: 2000,
        ..PlantedPairsConfig::default()
    })
    .unwrap();
    let mut group = c.benchmark_group("rank_dexels_32_rounds");
    group.sample_size(20);
    for backend in backends() {
        group.bench_function(BenchmarkId::from_parameter(backend), |b| {
            b.iter(|| on_backend(backend, || rank_dexels(&pairs, 32, 2.0).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, dexel_stats, local_encode, bovw_assign, boosting);
criterion_main!(benches);
