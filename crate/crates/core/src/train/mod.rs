//! Training loop: shuffled mini-batches, waveform-domain permutation-invariant
//! SI-SDR loss, global-norm clipping, Adam, and a reduce-on-plateau schedule
//! driven by the validation loss.
//!
//! A run directory holds `last.ckpt` (written after every epoch), `best.ckpt`
//! (lowest validation loss so far) and `metrics.jsonl` (one line per epoch).
//! Both checkpoints carry the full run state, so either can be resumed.

pub mod optim;
pub mod schedule;

pub use optim::{clip_gradients, grad_norm, Adam, AdamConfig};
pub use schedule::{PlateauSchedule, Step};

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::model::separate::{decode_sources, decode_sources_adjoint, encode_mixture};
use crate::model::{DasFormer, ModelConfig, Separator};
use crate::nn::checkpoint::Archive;
use crate::nn::{Mode, ParamStore, RngSnapshot, RngState, Tensor};
use crate::objective::{pit_loss, score_utterance, EvalReport, SdrOptions};
use crate::signal::StftPlan;
use crate::synth::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub plateau_patience: usize,
    pub stop_patience: usize,
    pub lr_factor: f64,
    pub clip_norm: f64,
    /// Clips per forward pass.
    pub batch_size: usize,
    /// Forward passes accumulated into one optimizer step.
    pub grad_accum: usize,
    /// Total epoch budget, counted from the start of the run.
    pub max_epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Stop as soon as validation SI-SDRi reaches this many dB.
    pub stop_at_si_sdri: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            plateau_patience: 7,
            stop_patience: 15,
            lr_factor: 0.5,
            clip_norm: 5.0,
            batch_size: 4,
            grad_accum: 1,
            max_epochs: 100,
            seed: 0,
            adam: AdamConfig::default(),
            stop_at_si_sdri: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.clip_norm > 0.0) {
            return fail("lr and clip_norm must be positive");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return fail("lr_factor must be in (0, 1)");
        }
        if self.plateau_patience == 0 || self.stop_patience < self.plateau_patience {
            return fail("need 0 < plateau_patience <= stop_patience");
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return fail("batch_size and grad_accum must be positive");
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return fail("adam betas must be in [0, 1) and eps positive");
        }
        Ok(())
    }
}

/// Everything besides tensors needed to continue a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer updates applied.
    pub step: u64,
    pub schedule: PlateauSchedule,
    pub rng_seed: u64,
    /// Stream position, as a decimal string (it is a 128-bit counter).
    pub rng_word_pos: String,
    pub best_epoch: Option<usize>,
    pub best_val_si_sdri: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_si_sdri: f64,
    pub wall_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    TargetReached,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub reason: StopReason,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub best_val_si_sdri: Option<f64>,
}

/// One clip with its analyzed mixture cached.
#[derive(Clone, Debug)]
pub struct PreparedClip {
    pub id: String,
    /// `[2M, T, F]`.
    pub input: Vec<f32>,
    pub frames: usize,
    pub targets: Vec<Vec<f32>>,
    /// Reference-microphone mixture.
    pub mixture: Vec<f32>,
}

impl PreparedClip {
    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }
}

pub struct Trainer {
    pub model: DasFormer,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub config: TrainConfig,
    pub state: RunState,
    rng: RngState,
    plan: StftPlan<f32>,
}

const CHECKPOINT_KIND: &str = "dasformer-train";

impl Trainer {
    /// Fresh run: weights drawn from `seed`, training stream forked from it.
    pub fn new(model_cfg: &ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let base = RngState::new(config.seed);
        let (model, store) = DasFormer::build::<f32>(model_cfg, &mut base.fork(0))?;
        let rng = base.fork(1);
        let snap = rng.snapshot();
        let state = RunState {
            epoch: 0,
            step: 0,
            schedule: PlateauSchedule::new(config.lr, config.lr_factor, config.plateau_patience, config.stop_patience),
            rng_seed: snap.seed,
            rng_word_pos: snap.counter.to_string(),
            best_epoch: None,
            best_val_si_sdri: None,
        };
        Trainer::assemble(model, store, config, state, rng)
    }

    fn assemble(model: DasFormer, store: ParamStore<f32>, config: TrainConfig, state: RunState, rng: RngState) -> Result<Self> {
        let plan = StftPlan::new(model.config.stft)?;
        let adam = Adam::new(config.adam, &store);
        Ok(Trainer {
            model,
            store,
            adam,
            config,
            state,
            rng,
            plan,
        })
    }

    /// Continue from a checkpoint written by [`save`](Self::save). The model
    /// comes from the checkpoint; `config` supplies the epoch budget and the
    /// other loop settings, while the learning rate and patience counters are
    /// taken from the saved schedule.
    pub fn resume(path: &Path, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let ar = Archive::load(path)?;
        if ar.meta["kind"] != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("{} is not a training checkpoint", path.display())));
        }
        let bad = |what: &str, e: serde_json::Error| Error::Checkpoint(format!("{}: {what}: {e}", path.display()));
        let model_cfg: ModelConfig = serde_json::from_value(ar.meta["config"].clone()).map_err(|e| bad("config", e))?;
        let state: RunState = serde_json::from_value(ar.meta["state"].clone()).map_err(|e| bad("state", e))?;
        let counter: u128 = state
            .rng_word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng position `{}`", state.rng_word_pos)))?;
        let rng = RngState::restore(RngSnapshot {
            seed: state.rng_seed,
            counter,
        });
        let (model, mut store) = DasFormer::build::<f32>(&model_cfg, &mut RngState::new(0))?;
        ar.load_store("params", &mut store)?;
        let step = state.step;
        let mut t = Trainer::assemble(model, store, config, state, rng)?;
        t.adam.load(&t.store, &ar, step)?;
        Ok(t)
    }

    pub fn archive(&self) -> Archive {
        let mut ar = Archive::new(serde_json::json!({
            "kind": CHECKPOINT_KIND,
            "config": self.model.config,
            "train": self.config,
            "state": self.state,
        }));
        ar.push_store("params", &self.store);
        self.adam.save(&self.store, &mut ar);
        ar
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.archive().save(path)
    }

    pub fn separator(&self) -> Result<Separator<f32>> {
        Separator::new(self.model.clone(), self.store.clone())
    }

    /// Analyze every clip of `data` once.
    pub fn prepare(&self, data: &Dataset) -> Result<Vec<PreparedClip>> {
        let cfg = &self.model.config;
        let bins = cfg.stft.bins();
        let mut out = Vec::with_capacity(data.len());
        for ex in &data.examples {
            let m = &ex.mixture;
            if m.channels() != cfg.mics || ex.targets.len() != cfg.sources {
                return Err(Error::shape(
                    &ex.id,
                    format!(
                        "{} mics and {} targets, model has {} and {}",
                        m.channels(),
                        ex.targets.len(),
                        cfg.mics,
                        cfg.sources
                    ),
                ));
            }
            if m.sample_rate() != cfg.sample_rate {
                return Err(Error::Config(format!("{}: sample rate {} differs from model rate {}", ex.id, m.sample_rate(), cfg.sample_rate)));
            }
            if m.len() < cfg.stft.frame_len {
                return Err(Error::TooShort {
                    len: m.len(),
                    needed: cfg.stft.frame_len,
                });
            }
            let frames = cfg.stft.frames_for(m.len());
            let mut input = vec![0.0f32; 2 * cfg.mics * frames * bins];
            let chans: Vec<&[f32]> = (0..m.channels()).map(|c| m.channel(c)).collect();
            encode_mixture(&self.plan, &chans, &mut input);
            out.push(PreparedClip {
                id: ex.id.clone(),
                input,
                frames,
                targets: ex.targets.clone(),
                mixture: m.channel(0).to_vec(),
            });
        }
        Ok(out)
    }

    /// One pass over `clips`; returns the mean training loss.
    pub fn train_epoch(&mut self, clips: &[PreparedClip]) -> Result<f64> {
        if clips.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let epoch = self.state.epoch + 1;
        let mut order: Vec<usize> = (0..clips.len()).collect();
        self.rng.shuffle(&mut order);
        let batches: Vec<&[usize]> = order.chunks(self.config.batch_size).collect();
        let lr = self.state.schedule.lr;
        let mut total = 0.0;
        self.store.zero_grads();
        for group in batches.chunks(self.config.grad_accum) {
            let n: usize = group.iter().map(|b| b.len()).sum();
            for batch in group {
                let sum = self.batch_step(clips, batch, 1.0 / n as f64)?;
                if !sum.is_finite() {
                    return Err(Error::Diverged { epoch, loss: sum });
                }
                total += sum;
            }
            clip_gradients(&mut self.store, self.config.clip_norm)?;
            self.adam.update(&mut self.store, lr);
            self.store.zero_grads();
        }
        Ok(total / clips.len() as f64)
    }

    /// Forward and backward for one batch, gradients scaled by `weight`.
    /// Returns the summed per-clip loss.
    fn batch_step(&mut self, clips: &[PreparedClip], batch: &[usize], weight: f64) -> Result<f64> {
        let cfg = &self.model.config;
        let first = &clips[batch[0]];
        let (frames, len) = (first.frames, first.len());
        if batch.iter().any(|&i| clips[i].len() != len) {
            return Err(Error::shape("batch", "clips in one batch must have equal length"));
        }
        let per = first.input.len();
        let mut x = Tensor::zeros(&[batch.len(), 2 * cfg.mics, frames, cfg.stft.bins()]);
        for (chunk, &i) in x.data_mut().chunks_exact_mut(per).zip(batch) {
            chunk.copy_from_slice(&clips[i].input);
        }
        let (y, tape) = self.model.forward(&self.store, &x, Mode::Train, &mut self.rng)?;
        let out_per = y.len() / batch.len();
        let plan = &self.plan;
        let results: Vec<Result<(f64, Vec<Vec<f32>>)>> = exec::map_indices(batch.len(), |b| {
            let est = decode_sources(plan, &y.data()[b * out_per..(b + 1) * out_per], frames, len);
            let pit = pit_loss(&est, &clips[batch[b]].targets, SdrOptions::default())?;
            let w = weight as f32;
            let grads = pit.grads.into_iter().map(|g| g.into_iter().map(|v| v * w).collect()).collect();
            Ok((pit.loss, grads))
        });
        let mut dy = Tensor::zeros(y.shape());
        let mut sum = 0.0;
        for (b, r) in results.into_iter().enumerate() {
            let (loss, grads) = r?;
            sum += loss;
            decode_sources_adjoint(plan, &grads, frames, &mut dy.data_mut()[b * out_per..(b + 1) * out_per]);
        }
        self.model.backward(&mut self.store, &tape, &dy);
        self.model.update_running_stats(&mut self.store, &tape);
        Ok(sum)
    }

    /// Mean validation loss and mean SI-SDRi, in evaluation mode.
    pub fn validate(&self, clips: &[PreparedClip]) -> Result<(f64, f64)> {
        if clips.is_empty() {
            return Err(Error::Config("validation set is empty".into()));
        }
        let cfg = &self.model.config;
        let scores: Vec<Result<(f64, f64)>> = exec::map_indices(clips.len(), |i| {
            let c = &clips[i];
            let x = Tensor::from_vec(&[1, 2 * cfg.mics, c.frames, cfg.stft.bins()], c.input.clone())?;
            let (y, _) = self.model.infer(&self.store, &x, None)?;
            y.check_finite("validation output")?;
            let est = decode_sources(&self.plan, y.data(), c.frames, c.len());
            let s = score_utterance(&c.id, &est, &c.targets, &c.mixture, SdrOptions::default())?;
            let loss = -s.si_sdr.iter().sum::<f64>() / s.si_sdr.len() as f64;
            Ok((loss, s.mean_si_sdri()))
        });
        let (mut loss, mut imp) = (0.0, 0.0);
        for r in scores {
            let (l, s) = r?;
            loss += l;
            imp += s;
        }
        Ok((loss / clips.len() as f64, imp / clips.len() as f64))
    }

    /// Train until the epoch budget, the patience limit or the target
    /// improvement is reached, writing checkpoints and metrics under `dir`.
    pub fn fit(
        &mut self,
        train: &[PreparedClip],
        val: &[PreparedClip],
        dir: &Path,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<TrainOutcome> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join("metrics.jsonl");
        let mut log = fs::OpenOptions::new()
            .create(true)
            .append(self.state.epoch > 0)
            .write(true)
            .truncate(self.state.epoch == 0)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let mut history = Vec::new();
        let mut reason = StopReason::MaxEpochs;
        if self.state.schedule.since_improvement >= self.config.stop_patience {
            reason = StopReason::Patience;
        }
        while reason == StopReason::MaxEpochs && self.state.epoch < self.config.max_epochs {
            let start = Instant::now();
            let lr = self.state.schedule.lr;
            let train_loss = self.train_epoch(train)?;
            let (val_loss, val_si_sdri) = self.validate(val)?;
            if !val_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: self.state.epoch + 1,
                    loss: val_loss,
                });
            }
            let step = self.state.schedule.observe(val_loss);
            self.state.epoch += 1;
            self.state.step = self.adam.step;
            let snap = self.rng.snapshot();
            self.state.rng_seed = snap.seed;
            self.state.rng_word_pos = snap.counter.to_string();
            if step.improved {
                self.state.best_epoch = Some(self.state.epoch);
                self.state.best_val_si_sdri = Some(val_si_sdri);
            }
            let ar = self.archive();
            ar.save(&dir.join("last.ckpt"))?;
            if step.improved {
                ar.save(&dir.join("best.ckpt"))?;
            }
            let m = EpochMetrics {
                epoch: self.state.epoch,
                lr,
                train_loss,
                val_loss,
                val_si_sdri,
                wall_time: start.elapsed().as_secs_f64(),
            };
            writeln!(log, "{}", serde_json::to_string(&m).expect("metrics serialize")).map_err(|e| Error::io(&log_path, e))?;
            on_epoch(&m);
            history.push(m);
            if step.stop {
                reason = StopReason::Patience;
            } else if self.config.stop_at_si_sdri.is_some_and(|t| val_si_sdri >= t) {
                reason = StopReason::TargetReached;
            }
        }
        Ok(TrainOutcome {
            reason,
            history,
            best_epoch: self.state.best_epoch,
            best_val_loss: self.state.schedule.best,
            best_val_si_sdri: self.state.best_val_si_sdri,
        })
    }
}

/// Separate and score every example of `data`.
pub fn evaluate(sep: &Separator<f32>, data: &Dataset) -> Result<EvalReport> {
    let scores: Vec<Result<_>> = exec::map_indices(data.len(), |i| {
        let ex = &data.examples[i];
        let est = sep.separate(&ex.mixture)?.into_channels();
        score_utterance(&ex.id, &est, &ex.targets, ex.mixture.channel(0), SdrOptions::default())
    });
    Ok(EvalReport {
        utterances: scores.into_iter().collect::<Result<_>>()?,
    })
}
