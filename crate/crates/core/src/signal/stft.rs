use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::nn::Real;
use crate::signal::{ComplexSpectrogram, MultichannelWaveform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5·cos(2πn/N)`.
    Hann,
    Rectangular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop_len: usize,
    pub window: WindowKind,
}

/// Tolerance on the overlap-add constancy check.
const COLA_TOL: f64 = 1e-6;

impl StftConfig {
    /// Hann analysis with frame and hop given in milliseconds.
    pub fn from_ms(sample_rate: u32, frame_ms: f64, hop_ms: f64) -> Self {
        StftConfig {
            frame_len: (sample_rate as f64 * frame_ms / 1000.0).round() as usize,
            hop_len: (sample_rate as f64 * hop_ms / 1000.0).round() as usize,
            window: WindowKind::Hann,
        }
    }

    /// 32 ms frames with a 16 ms shift.
    pub fn standard(sample_rate: u32) -> Self {
        Self::from_ms(sample_rate, 32.0, 16.0)
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn window_values(&self) -> Vec<f64> {
        let n = self.frame_len;
        match self.window {
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }

    /// Number of frames for a signal of `len` samples, zero-padding the tail
    /// so that the last partial frame is kept.
    pub fn frames_for(&self, len: usize) -> usize {
        if len <= self.frame_len {
            1
        } else {
            (len - self.frame_len).div_ceil(self.hop_len) + 1
        }
    }

    /// `Σ_k w(n − kH)` over one hop period in the steady state.
    pub fn overlap_sum(&self, squared: bool) -> Vec<f64> {
        let w = self.window_values();
        (0..self.hop_len)
            .map(|n| {
                (n..self.frame_len)
                    .step_by(self.hop_len)
                    .map(|i| if squared { w[i] * w[i] } else { w[i] })
                    .sum()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || self.frame_len % 2 != 0 {
            return Err(Error::Config(format!("frame_len must be even and >= 2, got {}", self.frame_len)));
        }
        if self.hop_len == 0 || self.hop_len > self.frame_len {
            return Err(Error::Config(format!(
                "hop_len must be in 1..={}, got {}",
                self.frame_len, self.hop_len
            )));
        }
        if self.frame_len % self.hop_len != 0 {
            return Err(Error::Config("frame_len must be a multiple of hop_len".into()));
        }
        let s = self.overlap_sum(false);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        if s.iter().any(|v| (v - mean).abs() > COLA_TOL * mean.abs()) {
            return Err(Error::Config(format!(
                "{:?} window is not constant-overlap-add at hop {}",
                self.window, self.hop_len
            )));
        }
        Ok(())
    }
}

/// Precomputed FFTs and window for one configuration, in precision `T`.
///
/// Synthesis is weighted overlap-add with the analysis window, normalized by
/// `Σ_k w²(n − kH)`; the normalizer is floored at 1% of its steady-state peak
/// so the first and last few samples (covered by a single tapering frame)
/// stay bounded.
pub struct StftPlan<T: Real> {
    cfg: StftConfig,
    window: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    floor: T,
}

impl<T: Real> StftPlan<T> {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        let peak = cfg.overlap_sum(true).into_iter().fold(0.0, f64::max);
        Ok(StftPlan {
            window: cfg.window_values().into_iter().map(T::lit).collect(),
            forward: planner.plan_fft_forward(cfg.frame_len),
            inverse: planner.plan_fft_inverse(cfg.frame_len),
            floor: T::lit(1e-2 * peak),
            cfg,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn bins(&self) -> usize {
        self.cfg.bins()
    }

    /// Frames of `x` as a `frames × bins` row-major grid.
    pub fn analyze(&self, x: &[T]) -> (usize, Vec<Complex<T>>) {
        let (n, hop, bins) = (self.cfg.frame_len, self.cfg.hop_len, self.bins());
        let frames = self.cfg.frames_for(x.len());
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                let v = x.get(t * hop + i).copied().unwrap_or(T::zero());
                *b = Complex::new(v * self.window[i], T::zero());
            }
            self.forward.process(&mut buf);
            out.extend_from_slice(&buf[..bins]);
        }
        (frames, out)
    }

    fn overlap_norm(&self, frames: usize, len: usize) -> Vec<T> {
        let (n, hop) = (self.cfg.frame_len, self.cfg.hop_len);
        let mut den = vec![T::zero(); len];
        for t in 0..frames {
            for i in 0..n {
                if let Some(d) = den.get_mut(t * hop + i) {
                    *d = *d + self.window[i] * self.window[i];
                }
            }
        }
        den.iter_mut().for_each(|d| *d = d.max(self.floor));
        den
    }

    /// Inverse of [`analyze`](Self::analyze) for a `frames × bins` grid,
    /// producing `len` samples. Imaginary parts of the DC and Nyquist bins are
    /// ignored.
    pub fn synthesize(&self, spec: &[Complex<T>], frames: usize, len: usize) -> Vec<T> {
        let (n, hop, bins) = (self.cfg.frame_len, self.cfg.hop_len, self.bins());
        assert_eq!(spec.len(), frames * bins, "spectrogram size");
        let scale = T::lit(1.0 / n as f64);
        let mut out = vec![T::zero(); len];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..frames {
            let row = &spec[t * bins..(t + 1) * bins];
            hermitian_fill(row, &mut buf);
            self.inverse.process(&mut buf);
            for i in 0..n {
                if let Some(o) = out.get_mut(t * hop + i) {
                    *o = *o + buf[i].re * scale * self.window[i];
                }
            }
        }
        let den = self.overlap_norm(frames, len);
        out.iter_mut().zip(&den).for_each(|(o, &d)| *o = *o / d);
        out
    }

    /// Gradient of a scalar loss with respect to the real and imaginary parts
    /// of the grid passed to [`synthesize`](Self::synthesize), given the
    /// gradient with respect to its output samples.
    pub fn synthesize_adjoint(&self, grad: &[T], frames: usize) -> Vec<Complex<T>> {
        let (n, hop, bins) = (self.cfg.frame_len, self.cfg.hop_len, self.bins());
        let len = grad.len();
        let den = self.overlap_norm(frames, len);
        let scaled: Vec<T> = grad.iter().zip(&den).map(|(&g, &d)| g / d).collect();
        let inv_n = T::lit(1.0 / n as f64);
        let two = T::lit(2.0);
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                let g = scaled.get(t * hop + i).copied().unwrap_or(T::zero());
                *b = Complex::new(g * self.window[i], T::zero());
            }
            self.forward.process(&mut buf);
            for (k, &z) in buf[..bins].iter().enumerate() {
                if k == 0 || k == n / 2 {
                    out.push(Complex::new(z.re * inv_n, T::zero()));
                } else {
                    out.push(z * (two * inv_n));
                }
            }
        }
        out
    }
}

/// Expand a one-sided spectrum to the full Hermitian-symmetric spectrum.
fn hermitian_fill<T: Real>(half: &[Complex<T>], full: &mut [Complex<T>]) {
    let n = full.len();
    full[0] = Complex::new(half[0].re, T::zero());
    full[n / 2] = Complex::new(half[n / 2].re, T::zero());
    for k in 1..n / 2 {
        full[k] = half[k];
        full[n - k] = half[k].conj();
    }
}

/// Short-time Fourier transform of every channel.
pub fn stft(wave: &MultichannelWaveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let plan = StftPlan::<f64>::new(*cfg)?;
    let len = wave.len();
    if len < cfg.frame_len {
        return Err(Error::TooShort {
            len,
            needed: cfg.frame_len,
        });
    }
    wave.check_finite()?;
    let per_channel = exec::map_indices(wave.channels(), |c| {
        let x: Vec<f64> = wave.channel(c).iter().map(|&v| v as f64).collect();
        plan.analyze(&x)
    });
    let frames = per_channel[0].0;
    let data = per_channel
        .into_iter()
        .flat_map(|(_, s)| s.into_iter().map(|z| Complex::new(z.re as f32, z.im as f32)))
        .collect();
    ComplexSpectrogram::new(data, wave.channels(), frames, *cfg, wave.sample_rate())
}

/// Weighted overlap-add inverse; output length is the padded frame span.
pub fn istft(spec: &ComplexSpectrogram) -> Result<MultichannelWaveform> {
    let cfg = spec.config();
    if spec.bins() != cfg.bins() {
        return Err(Error::shape(
            "istft",
            format!("{} bins inconsistent with frame_len {}", spec.bins(), cfg.frame_len),
        ));
    }
    let plan = StftPlan::<f64>::new(*cfg)?;
    let len = (spec.frames() - 1) * cfg.hop_len + cfg.frame_len;
    let channels = exec::map_indices(spec.channels(), |c| {
        let grid: Vec<Complex<f64>> = spec
            .channel(c)
            .iter()
            .map(|z| Complex::new(z.re as f64, z.im as f64))
            .collect();
        plan.synthesize(&grid, spec.frames(), len)
            .into_iter()
            .map(|v| v as f32)
            .collect()
    });
    MultichannelWaveform::new(channels, spec.sample_rate())
}
