use crate::nn::{Mode, Real, RngState};

/// Inverted dropout. Returns the output and the per-element scale that was
/// applied (`None` when the op is the identity).
pub fn dropout<T: Real>(x: &[T], rate: f64, mode: Mode, rng: &mut RngState) -> (Vec<T>, Option<Vec<T>>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if mode == Mode::Eval || rate == 0.0 {
        return (x.to_vec(), None);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
        .collect();
    let y = x.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
    (y, Some(mask))
}

pub fn dropout_backward<T: Real>(dy: &[T], mask: Option<&[T]>) -> Vec<T> {
    match mask {
        None => dy.to_vec(),
        Some(m) => dy.iter().zip(m).map(|(&a, &b)| a * b).collect(),
    }
}
