//! Synthetic convolutive mixtures: band-separated sources, sparse
//! exponentially decaying room filters, and time-domain mixing at every
//! microphone.

pub mod dataset;
pub mod sources;

pub use dataset::{build_dataset, Dataset, DatasetManifest, Example, ManifestRecord, SplitCounts};
pub use sources::gen_sources;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::RngState;
use crate::signal::{istft, stft, ComplexSpectrogram, MultichannelWaveform, StftConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    BandDisjointNoise,
    Multitone,
    AmChirp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub sources: usize,
    pub mics: usize,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    /// Room filter length in samples.
    pub rir_len: usize,
    /// Per-sample exponential decay of reflection amplitudes, drawn uniformly.
    pub decay_range: [f64; 2],
    /// Direct-path delay of the first microphone, drawn from `0..max_base_delay`.
    pub max_base_delay: usize,
    /// Extra direct-path delay of other microphones, drawn from `-d..=d`.
    pub max_mic_offset: usize,
    /// Probability that a tap after the direct path carries a reflection.
    pub reflection_density: f64,
    pub reflection_gain: f64,
    pub source_kind: SourceKind,
    pub seed: u64,
    /// Use dry sources as targets instead of the reference-microphone images.
    pub dry_target: bool,
    /// Add white noise at an SNR drawn from this range (dB), relative to the
    /// reference-microphone mixture.
    pub noise_snr_db: Option<[f64; 2]>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            sources: 2,
            mics: 2,
            sample_rate: 8000,
            clip_seconds: 2.0,
            rir_len: 512,
            decay_range: [0.004, 0.012],
            max_base_delay: 16,
            max_mic_offset: 4,
            reflection_density: 0.08,
            reflection_gain: 0.8,
            source_kind: SourceKind::BandDisjointNoise,
            seed: 0,
            dry_target: false,
            noise_snr_db: None,
        }
    }
}

impl SceneConfig {
    pub fn samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.sources == 0 || self.mics == 0 {
            return fail("sources and mics must be positive".into());
        }
        let frame = StftConfig::standard(self.sample_rate).frame_len;
        if self.samples() <= frame {
            return fail(format!("clip of {} samples is not longer than one {frame}-sample frame", self.samples()));
        }
        if self.rir_len == 0 || self.max_base_delay + self.max_mic_offset >= self.rir_len {
            return fail("rir_len must exceed the largest direct-path delay".into());
        }
        let [a, b] = self.decay_range;
        if !(0.0 <= a && a <= b) {
            return fail(format!("decay_range {:?} must satisfy 0 <= lo <= hi", self.decay_range));
        }
        if !(0.0..=1.0).contains(&self.reflection_density) || !(0.0..=1.0).contains(&self.reflection_gain) {
            return fail("reflection density and gain must be in [0, 1]".into());
        }
        if let Some([lo, hi]) = self.noise_snr_db {
            if lo > hi {
                return fail("noise_snr_db must be ordered".into());
            }
        }
        Ok(())
    }
}

/// FIR filters `taps[i][m]` from source `i` to microphone `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomFilterSet {
    pub taps: Vec<Vec<Vec<f64>>>,
    pub direct_delay: Vec<Vec<usize>>,
    pub decay_rate: Vec<f64>,
}

/// Unit direct tap plus sparse reflections bounded by
/// `|tap[d + l]| <= exp(-decay·l)` after the direct delay `d`.
pub fn gen_filters(cfg: &SceneConfig, rng: &mut RngState) -> RoomFilterSet {
    let mut set = RoomFilterSet {
        taps: Vec::new(),
        direct_delay: Vec::new(),
        decay_rate: Vec::new(),
    };
    for _ in 0..cfg.sources {
        let base = rng.below(cfg.max_base_delay.max(1));
        let decay = rng.range(cfg.decay_range[0], cfg.decay_range[1]);
        let (mut hs, mut ds) = (Vec::new(), Vec::new());
        for m in 0..cfg.mics {
            let off = if m == 0 || cfg.max_mic_offset == 0 {
                0
            } else {
                rng.below(2 * cfg.max_mic_offset + 1) as isize - cfg.max_mic_offset as isize
            };
            let d = (base as isize + off).max(0) as usize;
            let mut h = vec![0.0; cfg.rir_len];
            h[d] = 1.0;
            for (l, tap) in h.iter_mut().enumerate().skip(d + 1) {
                if rng.uniform() < cfg.reflection_density {
                    *tap = rng.range(-1.0, 1.0) * cfg.reflection_gain * (-decay * (l - d) as f64).exp();
                }
            }
            hs.push(h);
            ds.push(d);
        }
        set.taps.push(hs);
        set.direct_delay.push(ds);
        set.decay_rate.push(decay);
    }
    set
}

/// `(x * h)[..x.len()]`, skipping zero taps.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (l, &c) in h.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for (o, &v) in y[l.min(x.len())..].iter_mut().zip(x) {
            *o += c * v;
        }
    }
    y
}

/// A generated mixture with its targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub mixture: MultichannelWaveform,
    /// One target per source.
    pub targets: Vec<Vec<f32>>,
    /// Applied global scale (1 unless the mixture would clip).
    pub scale: f64,
}

const CLIP_PEAK: f64 = 0.99;

/// Convolve, sum at each microphone, and rescale everything if the mixture
/// would exceed ±0.99. Images are rounded to `f32` before summation, so the
/// reference-microphone mixture equals the sum of the targets exactly.
pub fn mix(sources: &[Vec<f64>], filters: &RoomFilterSet, sample_rate: u32) -> Result<Mixture> {
    mix_with(sources, filters, sample_rate, false, None)
}

fn mix_with(
    sources: &[Vec<f64>],
    filters: &RoomFilterSet,
    sample_rate: u32,
    dry_target: bool,
    noise: Option<&[Vec<f64>]>,
) -> Result<Mixture> {
    if sources.len() != filters.taps.len() || sources.is_empty() {
        return Err(Error::shape("mix", format!("{} sources for {} filter sets", sources.len(), filters.taps.len())));
    }
    let n = sources[0].len();
    let mics = filters.taps[0].len();
    let images: Vec<Vec<Vec<f64>>> = sources
        .iter()
        .zip(&filters.taps)
        .map(|(s, hs)| hs.iter().map(|h| convolve_truncated(s, h)).collect())
        .collect();
    let mut peak = 0.0f64;
    for m in 0..mics {
        for t in 0..n {
            let mut y: f64 = images.iter().map(|im| im[m][t]).sum();
            if let Some(nz) = noise {
                y += nz[m][t];
            }
            if !y.is_finite() {
                return Err(Error::NonFinite(format!("mixture at mic {m}, sample {t}")));
            }
            peak = peak.max(y.abs());
        }
    }
    let scale = if peak > CLIP_PEAK { CLIP_PEAK / peak } else { 1.0 };
    let q = |v: f64| (v * scale) as f32;
    let mut chans = vec![vec![0.0f32; n]; mics];
    for (m, ch) in chans.iter_mut().enumerate() {
        for im in &images {
            for (o, &v) in ch.iter_mut().zip(&im[m]) {
                *o += q(v);
            }
        }
        if let Some(nz) = noise {
            for (o, &v) in ch.iter_mut().zip(&nz[m]) {
                *o += q(v);
            }
        }
    }
    let targets = if dry_target {
        sources.iter().map(|s| s.iter().map(|&v| q(v)).collect()).collect()
    } else {
        images.iter().map(|im| im[0].iter().map(|&v| q(v)).collect()).collect()
    };
    Ok(Mixture {
        mixture: MultichannelWaveform::new(chans, sample_rate)?,
        targets,
        scale,
    })
}

/// Generate one scene from its seed: sources, filters, optional noise, mixing.
pub fn gen_clip(cfg: &SceneConfig, seed: u64) -> Result<(Mixture, RoomFilterSet)> {
    cfg.validate()?;
    let rng = RngState::new(seed);
    let sources = gen_sources(cfg, &mut rng.fork(1));
    let filters = gen_filters(cfg, &mut rng.fork(2));
    let noise = cfg.noise_snr_db.map(|[lo, hi]| {
        let mut r = rng.fork(3);
        let snr = r.range(lo, hi);
        let mut reference = vec![0.0; cfg.samples()];
        for (s, hs) in sources.iter().zip(&filters.taps) {
            reference.iter_mut().zip(convolve_truncated(s, &hs[0])).for_each(|(a, b)| *a += b);
        }
        let power = reference.iter().map(|v| v * v).sum::<f64>() / reference.len() as f64;
        let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
        (0..cfg.mics)
            .map(|_| (0..cfg.samples()).map(|_| sigma * r.normal()).collect::<Vec<f64>>())
            .collect::<Vec<_>>()
    });
    let m = mix_with(&sources, &filters, cfg.sample_rate, cfg.dry_target, noise.as_deref())?;
    Ok((m, filters))
}

/// Separate with an ideal binary mask derived from the true targets: each
/// time-frequency cell of the reference-microphone mixture goes to the
/// loudest target.
pub fn ideal_binary_mask(mixture: &[f32], targets: &[Vec<f32>], sample_rate: u32) -> Result<Vec<Vec<f32>>> {
    let cfg = StftConfig::standard(sample_rate);
    let n = mixture.len();
    let spec = |x: &[f32]| stft(&MultichannelWaveform::new(vec![x.to_vec()], sample_rate)?, &cfg);
    let y = spec(mixture)?;
    let ts: Vec<ComplexSpectrogram> = targets.iter().map(|t| spec(t)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(targets.len());
    for i in 0..targets.len() {
        let data = y
            .data()
            .iter()
            .enumerate()
            .map(|(k, &z)| {
                let mine = ts[i].data()[k].norm_sqr();
                let wins = ts.iter().enumerate().all(|(j, t)| j == i || t.data()[k].norm_sqr() < mine);
                if wins {
                    z
                } else {
                    num_complex::Complex32::new(0.0, 0.0)
                }
            })
            .collect();
        let masked = ComplexSpectrogram::new(data, 1, y.frames(), cfg, sample_rate)?;
        out.push(istft(&masked)?.resized(n).into_channels().remove(0));
    }
    Ok(out)
}
