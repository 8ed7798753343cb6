//! Parameter initialisers.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::numcore::rng::Rng;
use crate::numcore::Tensor;

/// Kaiming-uniform for ReLU networks: `U(−√(6/fan_in), √(6/fan_in))`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}

pub fn gaussian(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let normal = Normal::new(0.0, std).expect("valid std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data).expect("init shape")
}
