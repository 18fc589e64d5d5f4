use crate::nn::{Real, RngState, Tensor};

/// Kaiming-uniform (fan-in) initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.range(-bound, bound))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}
