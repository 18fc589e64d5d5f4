use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvKind, LayerNorm, Linear, MultiHeadAttention};
use crate::signal::StftConfig;

/// Spatial kernel of the inverted-bottleneck depthwise stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DwKind {
    K3x3,
    /// One scalar weight per channel.
    Pointwise,
}

impl DwKind {
    pub fn conv(self) -> ConvKind {
        match self {
            DwKind::K3x3 => ConvKind::Depthwise3x3,
            DwKind::Pointwise => ConvKind::Depthwise1x1,
        }
    }
}

/// Hyper-parameters of the separation network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input microphones `M`.
    pub mics: usize,
    /// Output sources `I`.
    pub sources: usize,
    /// Embedding width `D`.
    pub dim: usize,
    pub heads: usize,
    /// Number of alternating blocks `L`.
    pub blocks: usize,
    /// Channel expansion inside the inverted bottleneck.
    pub expansion: usize,
    pub use_se: bool,
    /// Squeeze width as a fraction of the expanded width.
    pub se_shrink: f64,
    pub dw_kind: DwKind,
    pub dropout: f64,
    pub sample_rate: u32,
    pub stft: StftConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mics: 4,
            sources: 2,
            dim: 64,
            heads: 4,
            blocks: 12,
            expansion: 4,
            use_se: true,
            se_shrink: 0.25,
            dw_kind: DwKind::K3x3,
            dropout: 0.1,
            sample_rate: 8000,
            stft: StftConfig::standard(8000),
        }
    }
}

pub const PRESETS: &[&str] = &["dasformer-base", "dasformer-plus", "dasformer-micro"];

impl ModelConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "dasformer-base" => Ok(ModelConfig::default()),
            // Single-microphone variant with wider embeddings and more blocks.
            "dasformer-plus" => Ok(ModelConfig {
                mics: 1,
                dim: 96,
                blocks: 16,
                ..ModelConfig::default()
            }),
            "dasformer-micro" => Ok(ModelConfig::tiny(2, 2)),
            _ => Err(Error::Config(format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")))),
        }
    }

    /// Reduced network used by tests and quick experiments.
    pub fn tiny(mics: usize, sources: usize) -> Self {
        ModelConfig {
            mics,
            sources,
            dim: 16,
            heads: 2,
            blocks: 2,
            ..ModelConfig::default()
        }
    }

    pub fn hidden(&self) -> usize {
        self.expansion * self.dim
    }

    pub fn se_hidden(&self) -> usize {
        ((self.hidden() as f64 * self.se_shrink).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.mics == 0 || self.sources < 2 {
            return fail(format!("need mics >= 1 and sources >= 2, got {} and {}", self.mics, self.sources));
        }
        if self.dim < 2 || self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!("dim {} must be >= 2 and divisible by heads {}", self.dim, self.heads));
        }
        if self.blocks == 0 || self.expansion == 0 {
            return fail("blocks and expansion must be positive".into());
        }
        if !(self.se_shrink > 0.0 && self.se_shrink <= 1.0) {
            return fail(format!("se_shrink {} outside (0, 1]", self.se_shrink));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.sample_rate == 0 {
            return fail("sample_rate must be positive".into());
        }
        self.stft.validate()
    }
}

/// Trainable parameter count, in closed form.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let (d, h, s) = (cfg.dim, cfg.hidden(), cfg.se_hidden());
    let se = if cfg.use_se {
        Linear::param_count(h, s) + Linear::param_count(s, h)
    } else {
        0
    };
    let mbconv = 2 * d
        + ConvKind::Pointwise.param_count(d, h)
        + cfg.dw_kind.conv().param_count(h, h)
        + se
        + ConvKind::Pointwise.param_count(h, d);
    let attn = LayerNorm::param_count(d) + MultiHeadAttention::param_count(d);
    ConvKind::Full3x3.param_count(2 * cfg.mics, d)
        + cfg.blocks * 2 * (mbconv + attn)
        + ConvKind::Full3x3.param_count(d, 2 * cfg.sources)
}
