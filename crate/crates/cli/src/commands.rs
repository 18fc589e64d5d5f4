use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dasformer::model::verify::{check_model, micro_config, CheckLoss};
use dasformer::model::dump::{write_dump, DumpFilter};
use dasformer::model::{count_params, AttentionCapture, Axis, DasFormer, ModelConfig, Separator};
use dasformer::nn::{GradCheckOptions, RngState};
use dasformer::objective::{score_utterance, EvalReport, SdrOptions};
use dasformer::signal::{read_wav, write_wav, MultichannelWaveform, SampleFormat, StftConfig};
use dasformer::synth::{build_dataset, Dataset, DatasetManifest, SceneConfig, SplitCounts};
use dasformer::train::{evaluate, TrainConfig, Trainer};

use crate::{
    Command, CountParamsArgs, DumpAttnArgs, EvalArgs, GenDataArgs, GradCheckArgs, LossArg, ModelArgs, ModuleArg, SeparateArgs,
    TrainArgs,
};

/// Contents of a `--config` file. Every section is optional.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub scene: SceneConfig,
    pub counts: SplitCounts,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    /// Model from `--preset`, else the file, else `fallback`, then flag overrides.
    fn model(&self, args: &ModelArgs, fallback: impl FnOnce() -> ModelConfig) -> Result<ModelConfig> {
        let mut m = match &args.preset {
            Some(p) => ModelConfig::preset(p)?,
            None => self.model.clone().unwrap_or_else(fallback),
        };
        if let Some(v) = args.mics {
            m.mics = v;
        }
        if let Some(v) = args.sources {
            m.sources = v;
        }
        if let Some(v) = args.dim {
            m.dim = v;
        }
        if let Some(v) = args.heads {
            m.heads = v;
        }
        if let Some(v) = args.blocks {
            m.blocks = v;
        }
        if args.no_se {
            m.use_se = false;
        }
        if let Some(v) = args.dw_kind {
            m.dw_kind = v.into();
        }
        if let Some(v) = args.dropout {
            m.dropout = v;
        }
        m.validate()?;
        Ok(m)
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Separate(a) => separate(a),
        Command::Eval(a) => eval(a),
        Command::CountParams(a) => count(a),
        Command::DumpAttn(a) => dump_attn(a),
        Command::GradCheck(a) => grad_check(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let rc = RunConfig::load(a.common.config.as_deref())?;
    let mut scene = rc.scene;
    let mut counts = rc.counts;
    if let Some(v) = a.common.seed {
        scene.seed = v;
    }
    for (dst, src) in [(&mut counts.train, a.train), (&mut counts.val, a.val), (&mut counts.test, a.test)] {
        if let Some(v) = src {
            *dst = v;
        }
    }
    if let Some(v) = a.mics {
        scene.mics = v;
    }
    if let Some(v) = a.sources {
        scene.sources = v;
    }
    if let Some(v) = a.sample_rate {
        scene.sample_rate = v;
    }
    if let Some(v) = a.clip_seconds {
        scene.clip_seconds = v;
    }
    if let Some(v) = a.source_kind {
        scene.source_kind = v.into();
    }
    let start = Instant::now();
    let m = build_dataset(&scene, counts, &a.out)?;
    println!(
        "wrote {} clips ({} train, {} val, {} test) to {} in {:.2} s",
        m.records.len(),
        counts.train,
        counts.val,
        counts.test,
        a.out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let rc = RunConfig::load(a.common.config.as_deref())?;
    let mut tc = rc.train.clone();
    if let Some(v) = a.common.seed {
        tc.seed = v;
    }
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.grad_accum {
        tc.grad_accum = v;
    }
    if let Some(v) = a.max_epochs {
        tc.max_epochs = v;
    }
    if let Some(v) = a.clip_norm {
        tc.clip_norm = v;
    }
    if a.stop_at_si_sdri.is_some() {
        tc.stop_at_si_sdri = a.stop_at_si_sdri;
    }
    let manifest = DatasetManifest::load(&a.data)?;
    let mut trainer = match &a.resume {
        Some(ckpt) => Trainer::resume(ckpt, tc)?,
        None => {
            let mcfg = rc.model(&a.model, ModelConfig::default)?;
            Trainer::new(&mcfg, tc)?
        }
    };
    let train_set = trainer.prepare(&Dataset::load(&manifest, "train")?)?;
    let val_set = trainer.prepare(&Dataset::load(&manifest, "val")?)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let run = serde_json::json!({"model": trainer.model.config, "train": trainer.config});
    fs::write(a.out.join("run.json"), serde_json::to_string_pretty(&run)?)?;
    if !a.quiet {
        println!(
            "training {} parameters on {} clips, validating on {}",
            count_params(&trainer.model.config),
            train_set.len(),
            val_set.len()
        );
    }
    let quiet = a.quiet;
    let outcome = trainer.fit(&train_set, &val_set, &a.out, |m| {
        if !quiet {
            println!(
                "epoch {:3}  lr {:.2e}  train {:8.3}  val {:8.3}  si-sdri {:7.3} dB  {:6.1} s",
                m.epoch, m.lr, m.train_loss, m.val_loss, m.val_si_sdri, m.wall_time
            );
        }
    })?;
    println!(
        "stopped ({:?}) after epoch {}; best epoch {} with validation SI-SDRi {:.3} dB",
        outcome.reason,
        trainer.state.epoch,
        outcome.best_epoch.map_or("-".into(), |e| e.to_string()),
        outcome.best_val_si_sdri.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn separate(a: SeparateArgs) -> Result<()> {
    let _ = RunConfig::load(a.common.config.as_deref())?;
    let sep = Separator::<f32>::load(&a.checkpoint)?;
    let mix = read_wav(&a.input)?;
    let out = sep.separate(&mix)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("mix");
    for (i, s) in out.into_channels().into_iter().enumerate() {
        let p = a.out.join(format!("{stem}_s{i}.wav"));
        write_wav(&p, &MultichannelWaveform::new(vec![s], mix.sample_rate())?, SampleFormat::Float32)?;
        println!("{}", p.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let _ = RunConfig::load(a.common.config.as_deref())?;
    let manifest = DatasetManifest::load(&a.data)?;
    let data = Dataset::load(&manifest, &a.split)?;
    if data.is_empty() {
        bail!("split `{}` of {} is empty", a.split, a.data.display());
    }
    let report = match (&a.checkpoint, &a.estimates) {
        (Some(ckpt), _) => evaluate(&Separator::<f32>::load(ckpt)?, &data)?,
        (None, Some(dir)) => evaluate_files(dir, &data)?,
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let csv = report.to_csv();
    match &a.csv {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    eprintln!(
        "{} utterances: mean SI-SDRi {:.4} dB, mean SDRi {:.4} dB",
        report.utterances.len(),
        report.mean_si_sdri(),
        report.mean_sdri()
    );
    Ok(())
}

fn evaluate_files(dir: &Path, data: &Dataset) -> Result<EvalReport> {
    let mut utterances = Vec::new();
    for ex in &data.examples {
        let mut est = Vec::new();
        for i in 0..ex.targets.len() {
            let p = dir.join(format!("{}_s{i}.wav", ex.id));
            let w = read_wav(&p)?;
            if w.channels() != 1 || w.len() != ex.mixture.len() {
                bail!("{}: expected a mono file of {} samples", p.display(), ex.mixture.len());
            }
            est.push(w.into_channels().remove(0));
        }
        utterances.push(score_utterance(&ex.id, &est, &ex.targets, ex.mixture.channel(0), SdrOptions::default())?);
    }
    Ok(EvalReport { utterances })
}

fn count(a: CountParamsArgs) -> Result<()> {
    let rc = RunConfig::load(a.common.config.as_deref())?;
    let cfg = rc.model(&a.model, ModelConfig::default)?;
    let (_, store) = DasFormer::build::<f32>(&cfg, &mut RngState::new(a.common.seed.unwrap_or(0)))?;
    let total = store.count_trainable();
    debug_assert_eq!(total, count_params(&cfg));
    if let Some(p) = &a.model.preset {
        println!("preset {p}");
    }
    println!(
        "D={} H={} L={} M={} I={} se={} dw={:?}",
        cfg.dim, cfg.heads, cfg.blocks, cfg.mics, cfg.sources, cfg.use_se, cfg.dw_kind
    );
    for (name, n) in store.breakdown(a.depth.max(1)) {
        println!("{name:<32} {n:>10}");
    }
    println!("{:<32} {total:>10}  ({:.2}M)", "total", total as f64 / 1e6);
    Ok(())
}

fn dump_attn(a: DumpAttnArgs) -> Result<()> {
    let _ = RunConfig::load(a.common.config.as_deref())?;
    let sep = Separator::<f32>::load(&a.checkpoint)?;
    let mix = read_wav(&a.input)?;
    let cap = AttentionCapture {
        indices: a.slices.clone(),
    };
    let (_, records) = sep.separate_with_attention(&mix, &cap)?;
    let filter = DumpFilter {
        layers: a.layers,
        heads: a.heads,
        axes: match a.module {
            ModuleArg::Both => vec![],
            ModuleArg::Fsa => vec![Axis::Frequency],
            ModuleArg::Bta => vec![Axis::Time],
        },
    };
    let index = write_dump(&records, &filter, &a.out)?;
    if index.is_empty() {
        bail!("no attention matrix matched the requested layers, heads and slices");
    }
    let worst = index.iter().map(|e| e.max_row_sum_error).fold(0.0, f64::max);
    println!("wrote {} matrices to {} (max |row sum - 1| = {worst:.2e})", index.len(), a.out.display());
    Ok(())
}

fn grad_check(a: GradCheckArgs) -> Result<()> {
    let rc = RunConfig::load(a.common.config.as_deref())?;
    let mut cfg = rc.model(&a.model, micro_config)?;
    if let Some(fl) = a.frame_len {
        cfg.stft = StftConfig {
            frame_len: fl,
            hop_len: fl / 2,
            ..cfg.stft
        };
        cfg.validate()?;
    }
    let loss = match a.loss {
        LossArg::Projection => CheckLoss::Projection,
        LossArg::Waveform => CheckLoss::Waveform,
    };
    let opts = GradCheckOptions {
        tolerance: a.tolerance,
        max_entries: a.max_entries,
        ..GradCheckOptions::default()
    };
    let start = Instant::now();
    let report = check_model(&cfg, a.frames, loss, a.common.seed.unwrap_or(0), opts)?;
    print!("{report}");
    println!(
        "max relative error {:.3e} over {} tensors in {:.1} s",
        report.max_error(),
        report.tensors.len(),
        start.elapsed().as_secs_f64()
    );
    if !report.passed() {
        bail!("{} tensors exceed tolerance {:e}", report.failures().len(), a.tolerance);
    }
    Ok(())
}
