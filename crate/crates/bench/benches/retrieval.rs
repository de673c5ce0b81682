use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bitext_core::loss::{self, LossConfig};
use bitext_core::synthetic::{self, CipherConfig};
use bitext_core::vocab::{self, VocabConfig};
use bitext_core::{linalg, IndexConfig, Matrix, VectorIndex};

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    linalg::normalize_rows(&Matrix::from_vec(rows, cols, data).unwrap()).unwrap().0
}

fn bench_loss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let config = LossConfig::default();
    let mut group = c.benchmark_group("loss_grad");
    for n in [16, 64, 256] {
        let x = unit_rows(&mut rng, n, 32);
        let y = unit_rows(&mut rng, n, 32);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| loss::loss_grad(black_box(&x), black_box(&y), &config).unwrap())
        });
    }
    group.finish();
}

fn bench_search(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pool = unit_rows(&mut rng, 10_000, 32);
    let queries = unit_rows(&mut rng, 64, 32);
    let ids: Vec<String> = (0..pool.rows()).map(|i| i.to_string()).collect();
    let exact = VectorIndex::build(pool.clone(), ids.clone(), &IndexConfig::exact()).unwrap();
    let ivf = VectorIndex::build(pool, ids, &IndexConfig::partitioned(64, 16)).unwrap();
    let mut group = c.benchmark_group("search_10k");
    for (name, idx) in [("exact", &exact), ("c64_p16", &ivf)] {
        group.bench_function(name, |b| {
            b.iter(|| {
                for q in queries.iter_rows() {
                    black_box(idx.search(q, 10).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn bench_tokenize(c: &mut Criterion) {
    let corpus = synthetic::cipher_corpus(&CipherConfig::default()).unwrap();
    let by_lang = bitext_core::corpus::group_by_language(&corpus.mono);
    let v = vocab::build_vocab(&by_lang, &VocabConfig::default()).unwrap();
    let texts: Vec<&str> = corpus.test.iter().map(|p| p.src.text.as_str()).collect();
    c.bench_function("tokenize_1000", |b| {
        b.iter(|| {
            for t in &texts {
                black_box(v.tokenize(t, 64).unwrap());
            }
        })
    });
}

criterion_group!(benches, bench_loss, bench_search, bench_tokenize);
criterion_main!(benches);
