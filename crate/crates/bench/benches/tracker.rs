use beamtrack_bench::{propagated_prior, reference_codebook};
use beamtrack_core::{
    build_markov, posterior, propagate_prior, sensing_matrix, simulate_observation, BeamMatrix,
    ChannelState, Noise,
};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_tracker(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cb = reference_codebook().unwrap();
    let model = build_markov(64, 0.6, 5).unwrap();
    let beams = BeamMatrix::from_codewords(&cb, &[1, 62]).unwrap();
    let s = sensing_matrix(&beams, &cb).unwrap();
    let prior = propagated_prior(0.6, 0).unwrap();
    let state = ChannelState::initial(1, &mut rng);
    let obs = simulate_observation(&state, &s, 10.0, Noise::Awgn, &mut rng).unwrap();
    let post = posterior(&prior, &obs, &s).unwrap();

    c.bench_function("sensing_matrix", |b| b.iter(|| sensing_matrix(black_box(&beams), &cb)));
    c.bench_function("propagate_full_support", |b| b.iter(|| propagate_prior(black_box(&post), &model)));
    c.bench_function("posterior", |b| b.iter(|| posterior(black_box(&prior), &obs, &s)));
}

criterion_group!(benches, bench_tracker);
criterion_main!(benches);
