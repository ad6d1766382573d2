use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use depthforge_core::cues::{extract_cues, CueMask};
use depthforge_core::geometry::{estimate_fundamental, reconstruct_pair, FramePair, SfmConfig};
use depthforge_core::qanet::{Arch, QaModel, TrainConfig, TrainPair, Trainer, Widths};
use depthforge_core::synth::{generate_scene, SceneSpec};

fn scene(n_points: usize, outlier_frac: f64, seed: u64) -> FramePair {
    let spec = SceneSpec { n_points, noise_px: 0.5, outlier_frac, seed, ..SceneSpec::default() };
    generate_scene(&spec).unwrap().0
}

fn model() -> QaModel {
    let arch = Arch::new(CueMask::full(), &Widths::default()).unwrap();
    QaModel::init(arch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

fn geometry(c: &mut Criterion) {
    let cfg = SfmConfig::default();
    let pair = scene(300, 0.2, 1);
    c.bench_function("estimate_fundamental/300pts_20pct_outliers", |b| {
        b.iter(|| estimate_fundamental(black_box(&pair.matches), &cfg.ransac, 7).unwrap())
    });
    c.bench_function("reconstruct_pair/300pts", |b| b.iter(|| reconstruct_pair(black_box(&pair), &cfg).unwrap()));
}

fn qanet(c: &mut Criterion) {
    let cfg = SfmConfig::default();
    let cues: Vec<_> = (0..32)
        .map(|s| extract_cues(&reconstruct_pair(&scene(200, 0.1, 100 + s), &cfg).unwrap()).unwrap())
        .collect();
    let m = model();
    c.bench_function("score/200pts", |b| b.iter(|| m.score(black_box(&cues[0])).unwrap()));

    let pairs: Vec<TrainPair> = (0..32)
        .map(|i| TrainPair { cue_a: &cues[i], cue_b: &cues[(i + 1) % 32], s1: i as f64, s2: i as f64 + 0.5 })
        .collect();
    let tcfg = TrainConfig::default();
    c.bench_function("grad_step/batch32", |b| {
        b.iter_batched(|| Trainer::new(m.clone(), &tcfg), |mut t| t.grad_step(&pairs).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = geometry, qanet
}
criterion_main!(benches);
