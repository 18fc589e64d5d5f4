//! The separation network: a 3×3 encoder, a stack of alternating blocks
//! (inverted bottleneck, frequency attention, inverted bottleneck, time
//! attention), and a 3×3 decoder that maps directly to the real and imaginary
//! parts of every source spectrogram.

pub mod blocks;
pub mod config;
pub mod dump;
pub mod separate;
pub mod verify;

pub use blocks::{Axis, AxisAttention, MbConv};
pub use config::{count_params, DwKind, ModelConfig, PRESETS};
pub use separate::{separate, Separator};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvKind, Mode, ParamStore, Real, RngState, Tensor};
use blocks::{AxisCache, MbCache};

#[derive(Clone, Debug)]
pub struct AsBlock {
    pub mb1: MbConv,
    pub freq: AxisAttention,
    pub mb2: MbConv,
    pub time: AxisAttention,
}

#[derive(Clone, Debug)]
pub struct DasFormer {
    pub config: ModelConfig,
    pub encoder: Conv2d,
    pub blocks: Vec<AsBlock>,
    pub decoder: Conv2d,
}

struct BlockTape<T> {
    mb1: MbCache<T>,
    freq: AxisCache<T>,
    mb2: MbCache<T>,
    time: AxisCache<T>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Tape<T> {
    input: Tensor<T>,
    blocks: Vec<BlockTape<T>>,
    decoder_input: Tensor<T>,
}

/// Attention weights of one head on one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub block: usize,
    pub axis: Axis,
    /// Frame index for frequency attention, bin index for time attention.
    pub index: usize,
    pub head: usize,
    pub len: usize,
    /// Row-major `len × len`, rows sum to one.
    pub weights: Vec<f32>,
}

/// Which attention maps to keep during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct AttentionCapture {
    /// Frame (for frequency attention) or bin (for time attention) indices to
    /// keep; empty keeps all.
    pub indices: Vec<usize>,
}

impl DasFormer {
    /// Build the network and its parameters with Kaiming-uniform weights and
    /// zero biases.
    pub fn build<T: Real>(config: &ModelConfig, rng: &mut RngState) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let (d, h, s) = (config.dim, config.hidden(), config.se_hidden());
        let encoder = Conv2d::build(&mut store, "encoder", ConvKind::Full3x3, 2 * config.mics, d, rng)?;
        let mut blocks = Vec::with_capacity(config.blocks);
        for i in 0..config.blocks {
            let p = format!("block{i}");
            let mb = |store: &mut ParamStore<T>, k: usize, rng: &mut RngState| {
                let se = config.use_se.then_some(s);
                MbConv::build(store, &format!("{p}.mbconv{k}"), d, h, config.dw_kind.conv(), se, rng)
            };
            let mb1 = mb(&mut store, 1, rng)?;
            let freq = AxisAttention::build(&mut store, &format!("{p}.fsa"), Axis::Frequency, d, config.heads, rng)?;
            let mb2 = mb(&mut store, 2, rng)?;
            let time = AxisAttention::build(&mut store, &format!("{p}.bta"), Axis::Time, d, config.heads, rng)?;
            blocks.push(AsBlock { mb1, freq, mb2, time });
        }
        let decoder = Conv2d::build(&mut store, "decoder", ConvKind::Full3x3, d, 2 * config.sources, rng)?;
        Ok((
            DasFormer {
                config: config.clone(),
                encoder,
                blocks,
                decoder,
            },
            store,
        ))
    }

    fn check_input<T: Real>(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 2 * self.config.mics || s[3] != self.config.stft.bins() {
            return Err(Error::shape(
                "model input",
                format!("expected [B, {}, T, {}], got {s:?}", 2 * self.config.mics, self.config.stft.bins()),
            ));
        }
        x.check_finite("model input")
    }

    /// Forward pass keeping the tape for [`backward`](Self::backward).
    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(x)?;
        let w = store.values();
        let rate = if mode == Mode::Train { self.config.dropout } else { 0.0 };
        let mut e = self.encoder.forward(w, x)?;
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (y, mb1) = blk.mb1.forward(w, &e, mode)?;
            let (y, freq) = blk.freq.forward(w, &y, mode, rate, rng);
            let (y, mb2) = blk.mb2.forward(w, &y, mode)?;
            let (y, time) = blk.time.forward(w, &y, mode, rate, rng);
            tapes.push(BlockTape { mb1, freq, mb2, time });
            e = y;
        }
        let out = self.decoder.forward(w, &e)?;
        Ok((
            out,
            Tape {
                input: x.clone(),
                blocks: tapes,
                decoder_input: e,
            },
        ))
    }

    /// Forward pass without a tape. Attention weights are returned when
    /// `capture` is given.
    pub fn infer<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        capture: Option<&AttentionCapture>,
    ) -> Result<(Tensor<T>, Vec<AttentionRecord>)> {
        self.check_input(x)?;
        let w = store.values();
        let mut rng = RngState::new(0);
        let mut records = Vec::new();
        let (_, _, frames, bins) = x.dims4();
        let mut e = self.encoder.forward(w, x)?;
        for (bi, blk) in self.blocks.iter().enumerate() {
            let (y, _) = blk.mb1.forward(w, &e, Mode::Eval)?;
            let (y, c) = blk.freq.forward(w, &y, Mode::Eval, 0.0, &mut rng);
            if let Some(cap) = capture {
                collect(&mut records, bi, Axis::Frequency, frames, c.attention(), cap);
            }
            drop(c);
            let (y, _) = blk.mb2.forward(w, &y, Mode::Eval)?;
            let (y, c) = blk.time.forward(w, &y, Mode::Eval, 0.0, &mut rng);
            if let Some(cap) = capture {
                collect(&mut records, bi, Axis::Time, bins, c.attention(), cap);
            }
            e = y;
        }
        Ok((self.decoder.forward(w, &e)?, records))
    }

    /// Fold the batch statistics of a training pass into the running
    /// statistics of every batch-norm layer.
    pub fn update_running_stats<T: Real>(&self, store: &mut ParamStore<T>, tape: &Tape<T>) {
        for (blk, t) in self.blocks.iter().zip(&tape.blocks) {
            blk.mb1.norm.update_running(store, t.mb1.bn());
            blk.mb2.norm.update_running(store, t.mb2.bn());
        }
    }

    /// Accumulate parameter gradients for output gradient `dy`; returns the
    /// gradient with respect to the input.
    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, tape: &Tape<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (w, g) = store.split_mut();
        let mut de = self.decoder.backward(w, g, &tape.decoder_input, dy);
        for (blk, t) in self.blocks.iter().zip(&tape.blocks).rev() {
            de = blk.time.backward(w, g, &t.time, &de);
            de = blk.mb2.backward(w, g, &t.mb2, &de);
            de = blk.freq.backward(w, g, &t.freq, &de);
            de = blk.mb1.backward(w, g, &t.mb1, &de);
        }
        self.encoder.backward(w, g, &tape.input, &de)
    }
}

/// Sequences are ordered (batch item, index); only the first item is kept.
fn collect<T: Real>(
    out: &mut Vec<AttentionRecord>,
    block: usize,
    axis: Axis,
    per_item: usize,
    cache: &crate::nn::AttnCache<T>,
    cap: &AttentionCapture,
) {
    let heads = cache.heads();
    let len = cache.seq_len();
    for index in 0..per_item {
        if !cap.indices.is_empty() && !cap.indices.contains(&index) {
            continue;
        }
        for head in 0..heads {
            out.push(AttentionRecord {
                block,
                axis,
                index,
                head,
                len,
                weights: cache.probs(index, head).iter().map(|v| v.f64() as f32).collect(),
            });
        }
    }
}
