//! Sequential against rayon execution for the three data-parallel hot spots.
//! On a single core the two should be close; the gap grows with cores.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use omnitraj::data::Point;
use omnitraj::encoders::{EncoderConfig, Encoders, Modality, Model};
use omnitraj::measures::{DistanceMatrix, Measure};
use omnitraj::pipeline::{build_corpus, CorpusSpec};
use omnitraj::retrieval::{topk_batch, EmbeddingStore};
use omnitraj::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, w: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn scan(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows = unit_rows(&mut rng, 20_000, 64);
    let data: Vec<f32> = rows.iter().flatten().map(|&v| v as f32).collect();
    let store = EmbeddingStore::new(Modality::Traj, 64, [0; 16], (0..20_000).collect(), data).unwrap();
    let queries = unit_rows(&mut rng, 128, 64);
    let mut group = c.benchmark_group("scan_20k_x128");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| topk_batch(&store, &queries, 10, exec).unwrap())
        });
    }
    group.finish();
}

fn distances(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let walks: Vec<Vec<Point>> = (0..60)
        .map(|_| (0..40).map(|_| Point::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0))).collect())
        .collect();
    let refs: Vec<&[Point]> = walks.iter().map(Vec::as_slice).collect();
    let mut group = c.benchmark_group("dtw_60x60");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| DistanceMatrix::compute(&refs, &refs, Measure::Dtw, exec).unwrap())
        });
    }
    group.finish();
}

fn encoding(c: &mut Criterion) {
    let corpus = build_corpus(&CorpusSpec {
        count: 64,
        ..CorpusSpec::toy(3)
    })
    .unwrap();
    let cfg = EncoderConfig::toy(corpus.road_vocab(), corpus.frame);
    let (model, params) = Model::init(&cfg, 0).unwrap();
    let enc = Encoders::new(model, params, [0; 16]);
    let recs = &corpus.dataset.records;
    let mut group = c.benchmark_group("encode_64_traj");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| enc.embed_records(recs, Modality::Traj, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scan, distances, encoding);
criterion_main!(benches);
