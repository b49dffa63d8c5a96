#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zian_tensor::{Result, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(y ⊙ r)` with a fixed random `r`, so every output element gets a distinct weight.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let r = tape.constant(r);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

pub const SEEDS: std::ops::Range<u64> = 0..20;
pub const TOL: f64 = 1e-4;
