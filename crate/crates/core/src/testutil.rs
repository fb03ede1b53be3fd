use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::seeded;
use crate::tensor::{Scalar, Shape, Tensor};

pub fn random_vec<T: Scalar>(n: usize, seed: u64) -> Vec<T> {
    let mut rng = seeded(seed);
    (0..n).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect()
}

pub fn random_tensor<T: Scalar>(shape: Shape, seed: u64) -> Tensor<T> {
    Tensor::from_vec(shape, random_vec(shape.len(), seed)).unwrap()
}
