//! Waveform-in, waveform-out separation around the network.

use std::path::Path;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::model::{AttentionCapture, AttentionRecord, DasFormer, ModelConfig};
use crate::nn::checkpoint::Archive;
use crate::nn::{ParamStore, Real, RngState, Tensor};
use crate::signal::{MultichannelWaveform, StftPlan};

/// Analyze each microphone signal of one clip into a `[2M, T, F]` block of
/// `out`, which must be sized `[B, 2M, T, F]`.
pub fn encode_mixture<T: Real>(plan: &StftPlan<T>, mics: &[&[T]], out: &mut [T]) {
    let mut off = 0;
    for x in mics {
        let (_, spec) = plan.analyze(x);
        let n = spec.len();
        for (i, z) in spec.iter().enumerate() {
            out[off + i] = z.re;
            out[off + n + i] = z.im;
        }
        off += 2 * n;
    }
}

/// Synthesize `len` samples of every source from one clip's `[2I, T, F]` output.
pub fn decode_sources<T: Real>(plan: &StftPlan<T>, grid: &[T], frames: usize, len: usize) -> Vec<Vec<T>> {
    let plane = frames * plan.bins();
    grid.chunks_exact(2 * plane)
        .map(|c| {
            let spec: Vec<Complex<T>> = c[..plane].iter().zip(&c[plane..]).map(|(&re, &im)| Complex::new(re, im)).collect();
            plan.synthesize(&spec, frames, len)
        })
        .collect()
}

/// Gradient of [`decode_sources`] with respect to `grid`, given per-source
/// waveform gradients.
pub fn decode_sources_adjoint<T: Real>(plan: &StftPlan<T>, grads: &[Vec<T>], frames: usize, out: &mut [T]) {
    let plane = frames * plan.bins();
    for (g, c) in grads.iter().zip(out.chunks_exact_mut(2 * plane)) {
        let adj = plan.synthesize_adjoint(g, frames);
        let (re, im) = c.split_at_mut(plane);
        for ((r, i), z) in re.iter_mut().zip(im.iter_mut()).zip(&adj) {
            *r = z.re;
            *i = z.im;
        }
    }
}

/// A network with its weights and the matching STFT.
pub struct Separator<T: Real> {
    pub model: DasFormer,
    pub store: ParamStore<T>,
    plan: StftPlan<T>,
}

impl<T: Real> Separator<T> {
    pub fn new(model: DasFormer, store: ParamStore<T>) -> Result<Self> {
        let plan = StftPlan::new(model.config.stft)?;
        Ok(Separator { model, store, plan })
    }

    /// Load the `params` section of a model or training checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let ar = Archive::load(path)?;
        let cfg: ModelConfig = serde_json::from_value(ar.meta["config"].clone())
            .map_err(|e| Error::Checkpoint(format!("{}: model config: {e}", path.display())))?;
        let (model, mut store) = DasFormer::build(&cfg, &mut RngState::new(0))?;
        ar.load_store("params", &mut store)?;
        Separator::new(model, store)
    }

    pub fn plan(&self) -> &StftPlan<T> {
        &self.plan
    }

    fn check(&self, mix: &MultichannelWaveform) -> Result<()> {
        let cfg = &self.model.config;
        if mix.channels() != cfg.mics {
            return Err(Error::shape(
                "separate",
                format!("model expects {} microphones, mixture has {}", cfg.mics, mix.channels()),
            ));
        }
        if mix.sample_rate() != cfg.sample_rate {
            return Err(Error::Config(format!(
                "mixture sample rate {} differs from model rate {}",
                mix.sample_rate(),
                cfg.sample_rate
            )));
        }
        if mix.len() < cfg.stft.frame_len {
            return Err(Error::TooShort {
                len: mix.len(),
                needed: cfg.stft.frame_len,
            });
        }
        mix.check_finite()
    }

    /// Estimated source waveforms, same length as the mixture.
    pub fn separate(&self, mix: &MultichannelWaveform) -> Result<MultichannelWaveform> {
        Ok(self.run(mix, None)?.0)
    }

    pub fn separate_with_attention(
        &self,
        mix: &MultichannelWaveform,
        capture: &AttentionCapture,
    ) -> Result<(MultichannelWaveform, Vec<AttentionRecord>)> {
        self.run(mix, Some(capture))
    }

    fn run(&self, mix: &MultichannelWaveform, capture: Option<&AttentionCapture>) -> Result<(MultichannelWaveform, Vec<AttentionRecord>)> {
        self.check(mix)?;
        let cfg = &self.model.config;
        let frames = cfg.stft.frames_for(mix.len());
        let chans: Vec<Vec<T>> = (0..mix.channels())
            .map(|c| mix.channel(c).iter().map(|&v| T::lit(v as f64)).collect())
            .collect();
        let refs: Vec<&[T]> = chans.iter().map(Vec::as_slice).collect();
        let mut x = Tensor::zeros(&[1, 2 * cfg.mics, frames, cfg.stft.bins()]);
        encode_mixture(&self.plan, &refs, x.data_mut());
        let (y, records) = self.model.infer(&self.store, &x, capture)?;
        y.check_finite("separation output")?;
        let sources = decode_sources(&self.plan, y.data(), frames, mix.len())
            .into_iter()
            .map(|s| s.into_iter().map(|v| v.f64() as f32).collect())
            .collect();
        Ok((MultichannelWaveform::new(sources, mix.sample_rate())?, records))
    }
}

/// Separate one mixture with the given network and weights.
pub fn separate<T: Real>(model: &DasFormer, store: &ParamStore<T>, mix: &MultichannelWaveform) -> Result<MultichannelWaveform> {
    Separator::new(model.clone(), store.clone())?.separate(mix)
}
