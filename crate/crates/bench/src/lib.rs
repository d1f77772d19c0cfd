//! Shared fixtures for the criterion benchmarks.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use twoweight_core::dyadic::{build_tree, generate_weight, DyadicTree, Side, WeightFamily,
    WeightPair};
use twoweight_core::haar::WeightedFunction;

pub fn fixture(depth: u8, seed: u64) -> (WeightPair, DyadicTree) {
    let tree = build_tree(depth).unwrap();
    let sigma = generate_weight(&WeightFamily::RandomMasses, &tree, seed, Side::Sigma).unwrap();
    let w = generate_weight(&WeightFamily::RandomMasses, &tree, seed + 10_000, Side::W).unwrap();
    (WeightPair::new(sigma, w).unwrap(), tree)
}

pub fn random_function(len: usize, seed: u64) -> WeightedFunction {
    let mut rng = StdRng::seed_from_u64(seed);
    WeightedFunction {
        values: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}
