//! Differentiable building blocks with hand-written backward passes.
//!
//! Every layer follows the same contract: `forward` reads weights from a
//! [`Slots`] view and returns its output plus whatever it needs for the
//! backward pass; `backward` accumulates parameter gradients into a second
//! [`Slots`] view and returns the gradient with respect to its input.

pub mod attention;
pub mod checkpoint;
pub mod conv;
pub mod dropout;
pub mod gradcheck;
pub mod init;
pub mod linear;
pub mod norm;
pub mod params;
pub mod real;
pub mod rng;
pub mod se;
pub mod tensor;

pub use attention::{AttnCache, MultiHeadAttention};
pub use conv::{Conv2d, ConvKind};
pub use gradcheck::{check_layer, check_layer_with, grad_check, GradCheckOptions, GradReport};
pub use linear::Linear;
pub use norm::{BatchNorm2d, LayerNorm};
pub use params::{ParamId, ParamStore, Slots};
pub use real::Real;
pub use rng::{RngSnapshot, RngState};
pub use se::SqueezeExcite;
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};

/// Training mode uses batch statistics and active dropout; evaluation uses
/// running statistics and no dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}
