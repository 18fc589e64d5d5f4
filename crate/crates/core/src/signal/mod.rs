//! Waveforms, spectrograms and the conversions between them.

pub mod pack;
pub mod stft;
pub mod wav;

pub use pack::{pack_input, unpack_output};
pub use stft::{istft, stft, StftConfig, StftPlan, WindowKind};
pub use wav::{read_wav, write_wav, SampleFormat};

use num_complex::Complex32;

use crate::error::{Error, Result};

/// `channels × samples` audio at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct MultichannelWaveform {
    samples: Vec<Vec<f32>>,
    sample_rate: u32,
}

impl MultichannelWaveform {
    /// All channels must be non-empty, equally long, and finite.
    pub fn new(samples: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self> {
        let w = Self::new_unchecked(samples, sample_rate);
        w.validate_shape()?;
        w.check_finite()?;
        Ok(w)
    }

    /// Equal channel lengths are still required; finiteness is not checked.
    pub fn new_unchecked(samples: Vec<Vec<f32>>, sample_rate: u32) -> Self {
        MultichannelWaveform { samples, sample_rate }
    }

    fn validate_shape(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::shape("waveform", "no channels"));
        }
        let n = self.samples[0].len();
        if let Some(c) = self.samples.iter().position(|ch| ch.len() != n) {
            return Err(Error::shape(
                "waveform",
                format!("channel {c} has {} samples, channel 0 has {n}", self.samples[c].len()),
            ));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (c, ch) in self.samples.iter().enumerate() {
            if let Some(i) = ch.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("waveform channel {c}, sample {i}")));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.samples[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        &mut self.samples[c]
    }

    pub fn into_channels(self) -> Vec<Vec<f32>> {
        self.samples
    }

    /// Keep the first `len` samples of every channel, zero-padding if shorter.
    pub fn resized(&self, len: usize) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|ch| {
                let mut v = ch.clone();
                v.resize(len, 0.0);
                v
            })
            .collect();
        MultichannelWaveform::new_unchecked(samples, self.sample_rate)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().flatten().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Complex time-frequency grid, `channels × frames × bins`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<Complex32>,
    channels: usize,
    frames: usize,
    config: StftConfig,
    sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn new(data: Vec<Complex32>, channels: usize, frames: usize, config: StftConfig, sample_rate: u32) -> Result<Self> {
        let want = channels * frames * config.bins();
        if data.len() != want || channels == 0 || frames == 0 {
            return Err(Error::shape(
                "spectrogram",
                format!("{} values for {channels}×{frames}×{}", data.len(), config.bins()),
            ));
        }
        Ok(ComplexSpectrogram {
            data,
            channels,
            frames,
            config,
            sample_rate,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.config.bins()
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[Complex32] {
        let n = self.frames * self.bins();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, t: usize, f: usize) -> Complex32 {
        self.data[(c * self.frames + t) * self.bins() + f]
    }
}
