//! Finite-difference check of the whole network in double precision.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::separate::{decode_sources, decode_sources_adjoint};
use crate::model::{DasFormer, ModelConfig};
use crate::nn::{grad_check, GradCheckOptions, GradReport, Mode, ParamStore, RngState, Tensor};
use crate::objective::{pit_loss, SdrOptions};
use crate::signal::StftPlan;

/// Scalar the check differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckLoss {
    /// `Σ r ⊙ output` for a fixed random `r`.
    Projection,
    /// Permutation-invariant negative SI-SDR of the synthesized waveforms
    /// against random references.
    Waveform,
}

/// Micro configuration used for the end-to-end check: D=8, H=2, L=2, M=2,
/// I=2 with a 16-sample frame (9 bins).
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        mics: 2,
        sources: 2,
        dim: 8,
        heads: 2,
        blocks: 2,
        dropout: 0.0,
        stft: crate::signal::StftConfig {
            frame_len: 16,
            hop_len: 8,
            window: crate::signal::WindowKind::Hann,
        },
        ..ModelConfig::default()
    }
}

fn randn(shape: &[usize], scale: f64, rng: &mut RngState) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| scale * rng.normal()).collect()).expect("sized")
}

/// Perturb every tensor so that no bias, norm affine or running statistic
/// sits at a trivial value.
fn perturb(store: &mut ParamStore<f64>, rng: &mut RngState) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        for v in store.value_mut(id).data_mut() {
            if name.ends_with("running_var") {
                *v = rng.range(0.5, 2.0);
            } else if name.ends_with("running_mean") || name.ends_with("bias") {
                *v += 0.1 * rng.normal();
            } else if name.ends_with("norm.weight") {
                *v = rng.range(0.5, 1.5);
            }
        }
    }
}

/// Compare analytic and numeric gradients of `loss` for the network built
/// from `cfg` on a random `[1, 2M, frames, F]` input, with batch norm in
/// evaluation mode and dropout off.
pub fn check_model(cfg: &ModelConfig, frames: usize, loss: CheckLoss, seed: u64, opts: GradCheckOptions) -> Result<GradReport> {
    let cfg = ModelConfig {
        dropout: 0.0,
        ..cfg.clone()
    };
    let mut rng = RngState::new(seed);
    let (model, mut store) = DasFormer::build::<f64>(&cfg, &mut rng)?;
    perturb(&mut store, &mut rng);
    let bins = cfg.stft.bins();
    let x = randn(&[1, 2 * cfg.mics, frames, bins], 1.0, &mut rng);
    let out_shape = [1, 2 * cfg.sources, frames, bins];
    let plan = StftPlan::<f64>::new(cfg.stft)?;
    let len = (frames - 1) * cfg.stft.hop_len + cfg.stft.frame_len;
    let r = randn(&out_shape, 1.0, &mut rng);
    let refs: Vec<Vec<f64>> = (0..cfg.sources).map(|_| randn(&[len], 1.0, &mut rng).into_data()).collect();

    let scalar = |y: &Tensor<f64>| -> (f64, Tensor<f64>) {
        match loss {
            CheckLoss::Projection => (y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum(), r.clone()),
            CheckLoss::Waveform => {
                let est = decode_sources(&plan, y.data(), frames, len);
                let pit = pit_loss(&est, &refs, SdrOptions::default()).expect("valid shapes");
                let mut dy = Tensor::zeros(y.shape());
                decode_sources_adjoint(&plan, &pit.grads, frames, dy.data_mut());
                (pit.loss, dy)
            }
        }
    };
    let forward = |s: &ParamStore<f64>, x: &Tensor<f64>| model.forward(s, x, Mode::Eval, &mut RngState::new(0)).expect("valid input");
    Ok(grad_check(
        &mut store,
        &x,
        |s, x| scalar(&forward(s, x).0).0,
        |s, x| {
            let (y, tape) = forward(s, x);
            let (_, dy) = scalar(&y);
            model.backward(s, &tape, &dy)
        },
        opts,
    ))
}
