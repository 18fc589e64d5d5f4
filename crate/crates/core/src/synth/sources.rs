//! Synthetic source signals, each confined to its own frequency band group.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::nn::RngState;
use crate::synth::{SceneConfig, SourceKind};

/// Gap left free on each side of a band group, in Hz.
pub const GUARD_HZ: f64 = 100.0;
const PEAK: f64 = 0.9;
const RAMP_S: f64 = 0.01;

/// Frequency range `[lo, hi]` in Hz assigned to source `i` of `count`.
pub fn band(i: usize, count: usize, sample_rate: u32) -> (f64, f64) {
    let w = sample_rate as f64 / 2.0 / count as f64;
    (i as f64 * w + GUARD_HZ, (i + 1) as f64 * w - GUARD_HZ)
}

/// Keep only spectral content inside `[lo, hi]` Hz (circular, whole-signal FFT).
pub fn band_limit(x: &mut [f64], lo: f64, hi: f64, sample_rate: u32) {
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let hz = bin as f64 * sample_rate as f64 / n as f64;
        if hz < lo || hz > hi {
            *z = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for (v, z) in x.iter_mut().zip(&buf) {
        *v = z.re / n as f64;
    }
}

/// Alternating on/off segments of 0.15–0.5 s with raised-cosine ramps.
pub fn on_off_envelope(n: usize, sample_rate: u32, rng: &mut RngState) -> Vec<f64> {
    let mut env = vec![0.0; n];
    let ramp = (RAMP_S * sample_rate as f64) as usize;
    let mut pos = 0;
    let mut on = rng.uniform() < 0.5;
    while pos < n {
        let dur = ((rng.range(0.15, 0.5) * sample_rate as f64) as usize).max(1);
        let len = dur.min(n - pos);
        if on {
            let r = ramp.min(len / 2);
            for k in 0..len {
                let edge = k.min(len - 1 - k);
                env[pos + k] = if edge < r { 0.5 - 0.5 * (PI * edge as f64 / r as f64).cos() } else { 1.0 };
            }
        }
        pos += dur;
        on = !on;
    }
    // never leave a source completely silent
    if env.iter().all(|&v| v == 0.0) {
        env.iter_mut().for_each(|v| *v = 1.0);
    }
    env
}

fn normalize(x: &mut [f64]) {
    let p = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if p > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / p);
    }
}

fn band_noise(n: usize, lo: f64, hi: f64, cfg: &SceneConfig, rng: &mut RngState) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    band_limit(&mut x, lo, hi, cfg.sample_rate);
    let env = on_off_envelope(n, cfg.sample_rate, rng);
    x.iter_mut().zip(&env).for_each(|(v, e)| *v *= e);
    x
}

fn multitone(n: usize, lo: f64, hi: f64, cfg: &SceneConfig, rng: &mut RngState) -> Vec<f64> {
    let sr = cfg.sample_rate as f64;
    let f0 = rng.range((hi - lo) / 12.0, (hi - lo) / 6.0);
    let first = (lo / f0).ceil().max(1.0) as usize;
    let last = (hi / f0).floor() as usize;
    let partials: Vec<(f64, f64, f64)> = (first..=last)
        .map(|k| (k as f64 * f0, rng.range(0.3, 1.0), rng.range(0.0, 2.0 * PI)))
        .collect();
    let env = on_off_envelope(n, cfg.sample_rate, rng);
    (0..n)
        .map(|t| {
            let s: f64 = partials.iter().map(|&(f, a, ph)| a * (2.0 * PI * f * t as f64 / sr + ph).sin()).sum();
            s * env[t]
        })
        .collect()
}

fn am_chirp(n: usize, lo: f64, hi: f64, cfg: &SceneConfig, rng: &mut RngState) -> Vec<f64> {
    let sr = cfg.sample_rate as f64;
    let dur = n as f64 / sr;
    // sweep stays inside the band even with the modulation sidebands
    let (a, b) = (lo + 20.0, hi - 20.0);
    let (f1, f2) = if rng.uniform() < 0.5 { (a, b) } else { (b, a) };
    let rate = rng.range(2.0, 6.0);
    let ph0 = rng.range(0.0, 2.0 * PI);
    (0..n)
        .map(|t| {
            let s = t as f64 / sr;
            let phase = 2.0 * PI * (f1 * s + (f2 - f1) * s * s / (2.0 * dur)) + ph0;
            let am = 0.5 + 0.5 * (2.0 * PI * rate * s).sin();
            am * phase.sin()
        })
        .collect()
}

/// One waveform per source, peak-normalized to 0.9.
pub fn gen_sources(cfg: &SceneConfig, rng: &mut RngState) -> Vec<Vec<f64>> {
    let n = cfg.samples();
    (0..cfg.sources)
        .map(|i| {
            let (lo, hi) = band(i, cfg.sources, cfg.sample_rate);
            let mut x = match cfg.source_kind {
                SourceKind::BandDisjointNoise => band_noise(n, lo, hi, cfg, rng),
                SourceKind::Multitone => multitone(n, lo, hi, cfg, rng),
                SourceKind::AmChirp => am_chirp(n, lo, hi, cfg, rng),
            };
            normalize(&mut x);
            x
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_at_8k() {
        assert_eq!(band(0, 2, 8000), (100.0, 1900.0));
        assert_eq!(band(1, 2, 8000), (2100.0, 3900.0));
    }

    #[test]
    fn band_limit_removes_out_of_band_tone() {
        let n = 800;
        let mut x: Vec<f64> = (0..n)
            .map(|t| (2.0 * PI * 500.0 * t as f64 / 8000.0).sin() + (2.0 * PI * 3000.0 * t as f64 / 8000.0).sin())
            .collect();
        band_limit(&mut x, 100.0, 1900.0, 8000);
        for (t, v) in x.iter().enumerate() {
            assert!((v - (2.0 * PI * 500.0 * t as f64 / 8000.0).sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn envelope_in_unit_range() {
        let mut rng = RngState::new(3);
        let e = on_off_envelope(16000, 8000, &mut rng);
        assert!(e.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(e.iter().any(|&v| v == 1.0));
    }
}
