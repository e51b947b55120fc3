use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use compattn::costmodel::{sweep_to_csv, CostConfig};
use compattn::layers::{decoder_stack, embed_tokens, projector_forward, Mode, Model, ModelConfig};
use compattn::tensor::{matmul_seq, Prng};
use compattn::verify::verify_all;

fn matmul_kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    let mut rng = Prng::new(0);
    for n in [64usize, 256, 512] {
        let a = rng.uniform_matrix(n, n, -1.0, 1.0);
        let b = rng.uniform_matrix(n, n, -1.0, 1.0);
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |bch, _| {
            bch.iter(|| matmul_seq(black_box(&a), black_box(&b)).unwrap())
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |bch, _| {
            bch.iter(|| compattn::tensor::matmul_par(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn decoder_prefill(c: &mut Criterion) {
    let mut group = c.benchmark_group("decoder_stack");
    group.sample_size(10);
    let cfg = ModelConfig {
        layers: 2,
        hidden: 64,
        heads: 4,
        vocab: 64,
        feat_dim: 16,
        mode: Mode::Baseline,
    };
    let model = Model::new(cfg, 0).unwrap();
    let mut rng = Prng::new(1);
    let features = rng.uniform_matrix(576, 16, -1.0, 1.0);
    let ids: Vec<usize> = (0..32).map(|_| rng.below(64)).collect();
    let visual = projector_forward(&features, &model).unwrap();
    let text = embed_tokens(&model, &ids).unwrap();
    for mode in [Mode::Baseline, Mode::Composite] {
        let m = model.with_mode(mode);
        group.bench_function(BenchmarkId::new("V576_T32", mode), |bch| {
            bch.iter(|| decoder_stack(black_box(&m), &visual, &text).unwrap())
        });
    }
    group.finish();
}

fn embarrassingly_parallel(c: &mut Criterion) {
    let mut group = c.benchmark_group("suites");
    group.sample_size(10);
    group.bench_function("verify_all_20", |bch| bch.iter(|| verify_all(black_box(0), 20)));
    let grid: Vec<CostConfig> = (1..=2000)
        .map(|i| CostConfig::new(i, 7 * i, 4096, 32).unwrap())
        .collect();
    group.bench_function("sweep_2000", |bch| bch.iter(|| sweep_to_csv(black_box(&grid)).unwrap()));
    group.finish();
}

criterion_group!(benches, matmul_kernels, decoder_prefill, embarrassingly_parallel);
criterion_main!(benches);
