use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylematch::data::{synth_generate, SynthConfig};
use stylematch::model::init_model;
use stylematch::trainer::{critic_step, CriticOptState, Trainer};
use stylematch::transport::{cost_matrix, exact_emd_costs, median_cost, sinkhorn_costs, Ground};
use stylematch::{Matrix, TrainConfig};

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (x, g) = (random(30, 128, &mut rng), random(64, 128, &mut rng));
    c.bench_function("matmul_t 30x128 by 64x128", |b| b.iter(|| black_box(&x).matmul_t(black_box(&g)).unwrap()));
    let (a, m) = (random(128, 128, &mut rng), random(128, 128, &mut rng));
    c.bench_function("matmul 128x128", |b| b.iter(|| black_box(&a).matmul(black_box(&m)).unwrap()));
}

fn transport(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cost = cost_matrix(&random(64, 16, &mut rng), &random(64, 16, &mut rng), Ground::Euclidean).unwrap();
    c.bench_function("hungarian 64x64", |b| b.iter(|| exact_emd_costs(black_box(&cost)).unwrap()));
    let reg = 0.05 * median_cost(&cost);
    c.bench_function("sinkhorn 64x64 reg 0.05", |b| b.iter(|| sinkhorn_costs(black_box(&cost), reg, 2000, 1e-6).unwrap()));
}

fn critic(c: &mut Criterion) {
    let cfg = TrainConfig { style_dim: 64, ..TrainConfig::default() };
    let (_, critic) = init_model(&cfg, &["a".into()], 64, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (si, sj) = (random(30, 64, &mut rng), random(30, 64, &mut rng));
    c.bench_function("critic step batch 30", |b| {
        b.iter_batched(
            || (critic.clone(), CriticOptState::new(&critic, cfg.rmsprop())),
            |(mut cr, mut st)| critic_step(&si, &sj, &mut cr, &mut st).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn iteration(c: &mut Criterion) {
    let mut ds = synth_generate(&SynthConfig::default()).unwrap();
    ds.apply_split(15.0, 0.2, 0).unwrap();
    let cfg = TrainConfig { eval_every: 0, max_iterations: usize::MAX, ..TrainConfig::default() };
    let mut trainer = Trainer::new(&ds, cfg).unwrap();
    // five iterations cover one generator step
    c.bench_function("training iterations x5", |b| {
        b.iter(|| {
            for _ in 0..5 {
                trainer.step().unwrap();
            }
        })
    });
}

criterion_group!(benches, matmul, transport, critic, iteration);
criterion_main!(benches);
