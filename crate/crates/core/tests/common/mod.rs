#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsim::tensor::{DenseTensor, Dims3};
use sparsim::{LayerSpec, Variant};

pub const SPARSE_VARIANTS: [Variant; 7] = [
    Variant::OneSided,
    Variant::Sparten,
    Variant::Synchronous,
    Variant::BaristaNoOpts,
    Variant::Barista,
    Variant::UnlimitedBuffer,
    Variant::Ideal,
];

/// A small random layer: h, w, d, n <= 16, densities on the 0.1 grid.
pub fn random_layer(seed: u64) -> LayerSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(1..=16);
    let w = rng.random_range(1..=16);
    let k = rng.random_range(1..=h.min(w).min(5));
    let d = rng.random_range(1..=16);
    let n = rng.random_range(1..=16);
    let dens = |rng: &mut ChaCha8Rng| rng.random_range(1..=10) as f64 / 10.0;
    let mut l = LayerSpec::new(h, w, d, k, n).with_densities(dens(&mut rng), dens(&mut rng));
    l.stride = rng.random_range(1..=2);
    l.batch = rng.random_range(1..=2);
    l.filter_spread = 0.5 * rng.random::<f64>();
    l.seed = seed;
    l.name = format!("rand{seed}");
    l
}

pub fn dense_from(dims: Dims3, values: Vec<i8>) -> DenseTensor {
    DenseTensor::from_values(dims, values).unwrap()
}
