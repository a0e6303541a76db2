//! Seeded fixtures shared by the benchmarks.

use emma_core::emma::{EmmaModel, EncDecStates, HeadConfig, HeadParams, Readout};
use emma_core::policy::StreamInstance;
use emma_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stepwise probabilities strictly inside (0, 1).
pub fn probabilities(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(0.01..0.99))
}

/// Raw attention energies in [-3, 3).
pub fn energies(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-3.0..3.0))
}

/// Two-head model with random encoder and decoder states.
pub fn objective_fixture(d: usize, src: usize, tgt: usize, vocab: usize) -> (EmmaModel, EncDecStates, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let config = HeadConfig::new(d);
    let heads = (0..2).map(|_| HeadParams::random(&config, &mut rng).unwrap()).collect();
    let model = EmmaModel {
        heads,
        readout: Readout::random(d, vocab, 1.0, &mut rng),
    };
    let mut states = |rows: usize| Matrix::from_fn(rows, d, |_, _| rng.random_range(-1.0..1.0));
    let h = states(src);
    let s = states(tgt);
    let v = states(src);
    let states = EncDecStates::new(h, s, v).unwrap();
    let targets = (0..tgt).map(|i| i % vocab).collect();
    (model, states, targets)
}

/// `n` copy-task instances of `len` half-second chunks.
pub fn corpus(n: usize, len: u32) -> Vec<StreamInstance> {
    (0..n as u32)
        .map(|i| {
            let payloads: Vec<u32> = (0..len).map(|t| t + i).collect();
            StreamInstance::uniform(format!("b{i:04}"), &payloads, 0.5, payloads.clone()).unwrap()
        })
        .collect()
}
