use num_complex::Complex32;

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};
use crate::signal::{ComplexSpectrogram, StftConfig};

/// Stack real and imaginary planes as `[2M, T, F]`: channel `2m` holds the
/// real part of microphone `m`, channel `2m + 1` the imaginary part.
pub fn pack_input<T: Real>(spec: &ComplexSpectrogram) -> Tensor<T> {
    let (m, t, f) = (spec.channels(), spec.frames(), spec.bins());
    let mut data = Vec::with_capacity(2 * m * t * f);
    for c in 0..m {
        let plane = spec.channel(c);
        data.extend(plane.iter().map(|z| T::lit(z.re as f64)));
        data.extend(plane.iter().map(|z| T::lit(z.im as f64)));
    }
    Tensor::from_vec(&[2 * m, t, f], data).expect("packed size")
}

/// Inverse of [`pack_input`] for a `[2I, T, F]` grid.
pub fn unpack_output<T: Real>(grid: &Tensor<T>, config: StftConfig, sample_rate: u32) -> Result<ComplexSpectrogram> {
    let s = grid.shape();
    if s.len() != 3 || s[0] % 2 != 0 || s[0] == 0 || s[2] != config.bins() {
        return Err(Error::shape(
            "unpack_output",
            format!("expected [2I, T, {}], got {s:?}", config.bins()),
        ));
    }
    let (i, t, f) = (s[0] / 2, s[1], s[2]);
    let plane = t * f;
    let d = grid.data();
    let mut data = Vec::with_capacity(i * plane);
    for c in 0..i {
        let (re, im) = (&d[2 * c * plane..(2 * c + 1) * plane], &d[(2 * c + 1) * plane..(2 * c + 2) * plane]);
        data.extend(re.iter().zip(im).map(|(&a, &b)| Complex32::new(a.f64() as f32, b.f64() as f32)));
    }
    ComplexSpectrogram::new(data, i, t, config, sample_rate)
}
