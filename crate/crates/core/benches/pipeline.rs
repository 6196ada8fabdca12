//! Whole extraction runs over an on-disk dataset: load, search, decode and
//! write, with one worker against the rayon pool.

use attnex::bundle::{write_bundle, Dataset, DatasetMeta, TaskKind};
use attnex::fixture::random_bundle;
use attnex::pipeline::{run_extract, ConfigLayer, EngineConfig};
use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SENTENCES: usize = 128;

fn dataset(root: &std::path::Path) {
    Dataset::write_meta(
        root,
        &DatasetMeta {
            task: TaskKind::Oie,
            dictionary: None,
            task_map: None,
            null_label: None,
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..SENTENCES {
        let b = random_bundle(&format!("s{i:04}"), 30, 4, &mut rng);
        write_bundle(&b, root.join(&b.sentence_id)).unwrap();
    }
}

fn extract(c: &mut Criterion) {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    dataset(&root);
    let ds = Dataset::open(&root).unwrap();
    let mut group = c.benchmark_group("extract");
    group.throughput(Throughput::Elements(SENTENCES as u64));
    group.sample_size(20);
    for (name, workers) in [("Sequential", 1), ("Parallel", 0)] {
        let layer = ConfigLayer {
            dataset: Some(root.clone()),
            output: Some(tmp.path().join(format!("{name}.jsonl"))),
            top_n: Some(3),
            no_ranking: Some(true),
            workers: Some(workers),
            ..ConfigLayer::default()
        };
        let config = EngineConfig::resolve(layer, &ds).unwrap();
        group.bench_function(name, |b| b.iter(|| run_extract(&config).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, extract);
criterion_main!(benches);
