//! Criterion benchmarks for the hot numeric kernels: dense matmul, a full
//! PGD attack, and the DFT used for frequency analysis.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use superlab_core::attacks::{pgd, AttackConfig, AttackNorm};
use superlab_core::numerics::{dft_energies, Matrix, Rng, Vector};
use superlab_core::synthgen::{generate_unambiguous, CorrelationMode, SynthConfig};
use superlab_core::toymodel::{train, TrainConfig, Variant};

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data.iter_mut() {
        *v = rng.normal();
    }
    m
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    let mut rng = Rng::new(7);
    for &n in &[32usize, 128, 256] {
        let a = random_matrix(n, n, &mut rng);
        let b = random_matrix(n, n, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| a.matmul(&b).unwrap());
        });
    }
    group.finish();
}

fn bench_pgd(c: &mut Criterion) {
    let synth_cfg = SynthConfig {
        k: 6,
        p: 3,
        density: 0.1,
        correlation_mode: CorrelationMode::Uncorrelated,
        seed: 0,
    };
    let mut train_cfg = TrainConfig::defaults(Variant::CeLinear, 2, 0);
    train_cfg.max_steps = 2_000;
    train_cfg.plateau_steps = 2_000;
    let model = train(&train_cfg, &synth_cfg).expect("training failed");
    let batch = generate_unambiguous(&synth_cfg, 8).expect("synth failed");
    let x = Vector::from(batch.inputs.row(0).to_vec());
    let mut cfg = AttackConfig::toy_defaults(AttackNorm::L2, 0.75);
    cfg.max_iters = 100;
    cfg.stop_on_success = false;
    c.bench_function("pgd_l2_100_iters", |bench| {
        bench.iter(|| pgd(&model, &x, &cfg).unwrap());
    });
}

fn bench_dft(c: &mut Criterion) {
    let mut rng = Rng::new(7);
    let signal = Vector::from((0..113).map(|_| rng.normal()).collect::<Vec<_>>());
    c.bench_function("dft_energies_113", |bench| {
        bench.iter(|| dft_energies(&signal).unwrap());
    });
}

criterion_group!(benches, bench_matmul, bench_pgd, bench_dft);
criterion_main!(benches);
