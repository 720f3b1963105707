//! Shared inputs for the criterion benches.

use condcl_core::encoder::hash_encode;
use condcl_core::hypernet::init_params;
use condcl_core::{HyperNetParams, Mode, Vector};

pub struct Fixture {
    pub full: HyperNetParams,
    pub lowrank: HyperNetParams,
    pub conditions: Vec<Vector>,
    pub sentences: Vec<Vector>,
}

/// Params for both hyper modes plus hashed condition and sentence vectors.
pub fn fixture(nh: usize, nk: usize, n: usize, seed: u64) -> Fixture {
    let embed = |prefix: &str, i: usize| hash_encode(&format!("{prefix} {i} token{}", i % 7), nh, seed).expect("nh > 0");
    Fixture {
        full: init_params(Mode::Full, nh, nk, seed).expect("valid shape"),
        lowrank: init_params(Mode::Lowrank, nh, nk, seed).expect("valid shape"),
        conditions: (0..n).map(|i| embed("condition", i)).collect(),
        sentences: (0..n).map(|i| embed("sentence", i)).collect(),
    }
}

/// `n_sentences × n_conditions` request texts, sentence-major.
pub fn requests(n_sentences: usize, n_conditions: usize) -> Vec<(String, String)> {
    condcl_core::cache::cross_stream(n_sentences, n_conditions)
}
