//! Acceptance suite: one check per criterion, each printing a PASS/FAIL line.
//!
//! Run a subset with `cargo test --test acceptance -- 3 4`.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dasformer::model::dump::{parse_matrix, write_dump, DumpFilter};
use dasformer::model::separate::{decode_sources, decode_sources_adjoint};
use dasformer::model::verify::{check_model, micro_config, CheckLoss};
use dasformer::model::{count_params, AsBlock, AttentionCapture, Axis, AxisAttention, DasFormer, DwKind, MbConv, ModelConfig, Separator};
use dasformer::nn::{
    check_layer, check_layer_with, grad_check, BatchNorm2d, Conv2d, ConvKind, GradCheckOptions, GradReport, LayerNorm, Linear, Mode,
    MultiHeadAttention, ParamStore, Real, RngState, SqueezeExcite, Tensor,
};
use dasformer::nn::dropout::{dropout, dropout_backward};
use dasformer::objective::{permutations, pit_loss, score_utterance, sdri, si_sdr, si_sdr_grad, si_sdri, SdrOptions};
use dasformer::signal::{istft, read_wav, stft, MultichannelWaveform, StftConfig, StftPlan};
use dasformer::synth::{build_dataset, Dataset, DatasetManifest, SceneConfig, SplitCounts};
use dasformer::train::{clip_gradients, grad_norm, PlateauSchedule, TrainConfig, Trainer};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn randn(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn randv(n: usize, rng: &mut RngState) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

// ---------------------------------------------------------------- 1

fn parameter_counts() -> Outcome {
    let base = ModelConfig::preset("dasformer-base").map_err(|e| e.to_string())?;
    let no_se = ModelConfig {
        use_se: false,
        ..base.clone()
    };
    let pw = ModelConfig {
        use_se: false,
        dw_kind: DwKind::Pointwise,
        ..base.clone()
    };
    let plus = ModelConfig::preset("dasformer-plus").map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for (name, cfg, target) in [("base", &base, 2.2e6), ("w/o SE", &no_se, 1.4e6), ("1x1 w/o SE", &pw, 1.3e6), ("plus", &plus, 6.4e6)] {
        let (_, store) = DasFormer::build::<f32>(cfg, &mut RngState::new(0)).map_err(|e| e.to_string())?;
        let n = store.count_trainable();
        ensure(n == count_params(cfg), || format!("{name}: store {n} != closed form {}", count_params(cfg)))?;
        let dev = (n as f64 - target).abs() / target;
        ensure(dev <= 0.15, || format!("{name}: {n} is {:.1}% from {target}", 100.0 * dev))?;
        lines.push(format!("{name} {n}"));
    }
    Ok(lines.join(", "))
}

// ---------------------------------------------------------------- 2

fn linear_opts() -> GradCheckOptions {
    GradCheckOptions {
        tolerance: 1e-8,
        step: 1e-2,
        max_entries: None,
    }
}

fn require(name: &str, rep: GradReport, worst: &mut Vec<(String, f64)>) -> Result<(), String> {
    worst.push((name.to_string(), rep.max_error()));
    ensure(rep.passed(), || format!("{name}: {rep}"))
}

fn perturb_bn(store: &mut ParamStore<f64>, rng: &mut RngState) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        for v in store.value_mut(id).data_mut() {
            if name.ends_with("running_var") {
                *v = rng.range(0.5, 2.0);
            } else if name.ends_with("running_mean") || name.ends_with("bias") {
                *v += 0.1 * rng.normal();
            }
        }
    }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = RngState::new(2024);
    let mut worst = Vec::new();

    // linear ops
    for kind in [ConvKind::Full3x3, ConvKind::Pointwise, ConvKind::Depthwise3x3, ConvKind::Depthwise1x1] {
        let (cin, cout) = if kind.is_depthwise() { (3, 3) } else { (2, 4) };
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::build(&mut store, "c", kind, cin, cout, &mut rng).unwrap();
        perturb_bn(&mut store, &mut rng);
        let x = randn(&[2, cin, 4, 5], &mut rng);
        let rep = check_layer_with(&mut store, &x, |w, x| conv.forward(w, x).unwrap(), |w, g, x, _, dy| conv.backward(w, g, x, dy), linear_opts());
        require(&format!("conv {kind:?}"), rep, &mut worst)?;
    }
    {
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::build(&mut store, "l", 5, 3, &mut rng).unwrap();
        perturb_bn(&mut store, &mut rng);
        let x = randn(&[4, 5], &mut rng);
        let rep = check_layer_with(
            &mut store,
            &x,
            |w, x| Tensor::from_vec(&[4, 3], lin.forward(w, x.data(), 4)).unwrap(),
            |w, g, x, _, dy| Tensor::from_vec(&[4, 5], lin.backward(w, g, x.data(), dy.data(), 4)).unwrap(),
            linear_opts(),
        );
        require("linear", rep, &mut worst)?;
    }
    {
        let cfg = StftConfig {
            frame_len: 16,
            hop_len: 8,
            window: dasformer::signal::WindowKind::Hann,
        };
        let plan = StftPlan::<f64>::new(cfg).unwrap();
        let (frames, bins) = (5, cfg.bins());
        let len = 4 * 8 + 16;
        let mut store = ParamStore::<f64>::new();
        let x = randn(&[2 * frames * bins], &mut rng);
        let rep = check_layer_with(
            &mut store,
            &x,
            |_, x| Tensor::from_vec(&[len], decode_sources(&plan, x.data(), frames, len).remove(0)).unwrap(),
            |_, _, _, _, dy| {
                let mut out = Tensor::zeros(&[2 * frames * bins]);
                decode_sources_adjoint(&plan, &[dy.data().to_vec()], frames, out.data_mut());
                out
            },
            linear_opts(),
        );
        require("istft", rep, &mut worst)?;
    }

    // nonlinear ops
    let tol = 1e-3;
    for mode in [Mode::Train, Mode::Eval] {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::build(&mut store, "bn", 3).unwrap();
        perturb_bn(&mut store, &mut rng);
        let x = randn(&[2, 3, 3, 4], &mut rng);
        let rep = check_layer(
            &mut store,
            &x,
            |w, x| bn.forward(w, x, mode).unwrap().0,
            |w, g, x, _, dy| {
                let (_, c) = bn.forward(w, x, mode).unwrap();
                bn.backward(w, g, &c, dy)
            },
            tol,
        );
        require(&format!("batch_norm {mode:?}"), rep, &mut worst)?;
    }
    {
        let mut store = ParamStore::<f64>::new();
        let ln = LayerNorm::build(&mut store, "ln", 6).unwrap();
        perturb_bn(&mut store, &mut rng);
        let x = randn(&[4, 6], &mut rng);
        let rep = check_layer(
            &mut store,
            &x,
            |w, x| Tensor::from_vec(&[4, 6], ln.forward(w, x.data()).0).unwrap(),
            |w, g, x, _, dy| {
                let (_, c) = ln.forward(w, x.data());
                Tensor::from_vec(&[4, 6], ln.backward(w, g, &c, dy.data())).unwrap()
            },
            tol,
        );
        require("layer_norm", rep, &mut worst)?;
    }
    {
        let mut store = ParamStore::<f64>::new();
        let se = SqueezeExcite::build(&mut store, "se", 4, 2, &mut rng).unwrap();
        perturb_bn(&mut store, &mut rng);
        let x = randn(&[2, 4, 3, 3], &mut rng);
        let rep = check_layer(
            &mut store,
            &x,
            |w, x| se.forward(w, x).unwrap().0,
            |w, g, x, _, dy| {
                let (_, c) = se.forward(w, x).unwrap();
                se.backward(w, g, x, &c, dy)
            },
            tol,
        );
        require("squeeze_excitation", rep, &mut worst)?;
    }
    {
        let mut store = ParamStore::<f64>::new();
        let mha = MultiHeadAttention::build(&mut store, "mha", 4, 2, &mut rng).unwrap();
        perturb_bn(&mut store, &mut rng);
        let x = randn(&[3, 4], &mut rng);
        let rep = check_layer(
            &mut store,
            &x,
            |w, x| Tensor::from_vec(&[3, 4], mha.forward(w, x.data(), 1, 3).0).unwrap(),
            |w, g, x, _, dy| {
                let (_, c) = mha.forward(w, x.data(), 1, 3);
                Tensor::from_vec(&[3, 4], mha.backward(w, g, &c, dy.data())).unwrap()
            },
            1e-4,
        );
        require("mhsa S=3 D=4", rep, &mut worst)?;
    }
    {
        let mut store = ParamStore::<f64>::new();
        let x = randn(&[50], &mut rng);
        let rep = check_layer_with(
            &mut store,
            &x,
            |_, x| Tensor::from_vec(&[50], dropout(x.data(), 0.3, Mode::Train, &mut RngState::new(7)).0).unwrap(),
            |_, _, x, _, dy| {
                let (_, m) = dropout(x.data(), 0.3, Mode::Train, &mut RngState::new(7));
                Tensor::from_vec(&[50], dropout_backward(dy.data(), m.as_deref())).unwrap()
            },
            linear_opts(),
        );
        require("dropout (fixed mask)", rep, &mut worst)?;
    }
    {
        let mut store = ParamStore::<f64>::new();
        let cfg = ModelConfig {
            dim: 4,
            heads: 2,
            ..micro_config()
        };
        let blk = AsBlock {
            mb1: MbConv::build(&mut store, "mb1", 4, cfg.hidden(), ConvKind::Depthwise3x3, Some(cfg.se_hidden()), &mut rng).unwrap(),
            freq: AxisAttention::build(&mut store, "fsa", Axis::Frequency, 4, 2, &mut rng).unwrap(),
            mb2: MbConv::build(&mut store, "mb2", 4, cfg.hidden(), ConvKind::Depthwise3x3, Some(cfg.se_hidden()), &mut rng).unwrap(),
            time: AxisAttention::build(&mut store, "bta", Axis::Time, 4, 2, &mut rng).unwrap(),
        };
        perturb_bn(&mut store, &mut rng);
        let x = randn(&[1, 4, 3, 4], &mut rng);
        let fwd = |w: &dasformer::nn::Slots<f64>, x: &Tensor<f64>| {
            let mut r = RngState::new(0);
            let (a, c1) = blk.mb1.forward(w, x, Mode::Eval).unwrap();
            let (b, c2) = blk.freq.forward(w, &a, Mode::Eval, 0.0, &mut r);
            let (c, c3) = blk.mb2.forward(w, &b, Mode::Eval).unwrap();
            let (d, c4) = blk.time.forward(w, &c, Mode::Eval, 0.0, &mut r);
            (d, (c1, c2, c3, c4))
        };
        let rep = check_layer(
            &mut store,
            &x,
            |w, x| fwd(w, x).0,
            |w, g, x, _, dy| {
                let (_, (c1, c2, c3, c4)) = fwd(w, x);
                let d = blk.time.backward(w, g, &c4, dy);
                let d = blk.mb2.backward(w, g, &c3, &d);
                let d = blk.freq.backward(w, g, &c2, &d);
                blk.mb1.backward(w, g, &c1, &d)
            },
            tol,
        );
        require("AS block", rep, &mut worst)?;
    }
    {
        let r = randv(40, &mut rng);
        let x = Tensor::from_vec(&[40], randv(40, &mut rng)).unwrap();
        let mut store = ParamStore::<f64>::new();
        let rep = grad_check(
            &mut store,
            &x,
            |_, x| si_sdr(x.data(), &r, SdrOptions::default()).unwrap(),
            |_, x| Tensor::from_vec(&[40], si_sdr_grad(x.data(), &r, SdrOptions::default()).unwrap().1).unwrap(),
            GradCheckOptions::default(),
        );
        require("si_sdr", rep, &mut worst)?;
    }

    // whole network
    for loss in [CheckLoss::Projection, CheckLoss::Waveform] {
        let rep = check_model(&micro_config(), 6, loss, 11, GradCheckOptions::default()).map_err(|e| e.to_string())?;
        require(&format!("micro model ({loss:?})"), rep, &mut worst)?;
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(300), || format!("took {took:?}"))?;
    let (name, err) = worst.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    Ok(format!("{} checks in {:.1} s, worst {name} at {err:.2e}", worst.len(), took.as_secs_f64()))
}

// ---------------------------------------------------------------- 3

fn stft_round_trip() -> Outcome {
    let mut rng = RngState::new(33);
    let mut worst = f64::INFINITY;
    for k in 0..100 {
        let sr = if k % 2 == 0 { 8000 } else { 16000 };
        let cfg = StftConfig::standard(sr);
        let len = 3 * cfg.frame_len + rng.below(3 * sr as usize);
        let x: Vec<f32> = (0..len).map(|_| (0.3 * rng.normal()) as f32).collect();
        let wave = MultichannelWaveform::new(vec![x.clone()], sr).unwrap();
        let y = istft(&stft(&wave, &cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let (mut sig, mut err) = (0.0f64, 0.0f64);
        // samples within one frame of either end are covered by a single tapered frame
        let interior = cfg.frame_len..len - cfg.frame_len;
        for (a, b) in x[interior.clone()].iter().zip(&y.channel(0)[interior]) {
            sig += (*a as f64).powi(2);
            err += (*a as f64 - *b as f64).powi(2);
        }
        let snr = 10.0 * (sig / err.max(1e-300)).log10();
        worst = worst.min(snr);
        ensure(snr > 60.0, || format!("signal {k} (len {len}, {sr} Hz): SNR {snr:.1} dB"))?;
    }
    Ok(format!("100 signals, edges trimmed by one frame, worst SNR {worst:.1} dB"))
}

// ---------------------------------------------------------------- 4

fn brute_force_pit(est: &[Vec<f64>], refs: &[Vec<f64>]) -> (f64, Vec<usize>) {
    // independent enumeration by recursive swap
    fn rec(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == p.len() {
            out.push(p.clone());
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            rec(k + 1, p, out);
            p.swap(k, i);
        }
    }
    let mut all = Vec::new();
    rec(0, &mut (0..est.len()).collect(), &mut all);
    all.into_iter()
        .map(|p| {
            let s: f64 = p.iter().enumerate().map(|(i, &j)| si_sdr(&est[i], &refs[j], SdrOptions::default()).unwrap()).sum();
            (-s / est.len() as f64, p)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

fn objective_properties() -> Outcome {
    let mut rng = RngState::new(44);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = 16 + rng.below(500);
        let r = randv(n, &mut rng);
        let noise = rng.range(0.01, 3.0);
        let e: Vec<f64> = r.iter().map(|v| v + noise * rng.normal()).collect();
        let mut c = 10f64.powf(rng.range(-3.0, 3.0));
        if rng.uniform() < 0.5 {
            c = -c;
        }
        let ce: Vec<f64> = e.iter().map(|v| c * v).collect();
        let d = (si_sdr(&ce, &r, SdrOptions::default()).unwrap() - si_sdr(&e, &r, SdrOptions::default()).unwrap()).abs();
        worst = worst.max(d);
        ensure(d <= 1e-9, || format!("scale {c}: SI-SDR moved by {d:e} dB"))?;
    }
    for i in [2usize, 3] {
        ensure(permutations(i).len() == (1..=i).product::<usize>(), || "permutation count".into())?;
        for _ in 0..50 {
            let n = 64;
            let refs: Vec<Vec<f64>> = (0..i).map(|_| randv(n, &mut rng)).collect();
            let est: Vec<Vec<f64>> = (0..i)
                .map(|_| {
                    let j = rng.below(i);
                    refs[j].iter().map(|v| v + rng.range(0.2, 2.0) * rng.normal()).collect()
                })
                .collect();
            let pit = pit_loss(&est, &refs, SdrOptions::default()).map_err(|e| e.to_string())?;
            let (bl, bp) = brute_force_pit(&est, &refs);
            ensure((pit.loss - bl).abs() < 1e-12 && pit.perm == bp, || format!("I={i}: pit {:?} {} vs brute {bp:?} {bl}", pit.perm, pit.loss))?;
        }
    }
    for _ in 0..20 {
        let n = 200;
        let refs: Vec<Vec<f64>> = (0..2).map(|_| randv(n, &mut rng)).collect();
        let mix: Vec<f64> = refs[0].iter().zip(&refs[1]).map(|(a, b)| a + b).collect();
        for r in &refs {
            let a = si_sdri(&mix, r, &mix, SdrOptions::default()).unwrap();
            let b = sdri(&mix, r, &mix).unwrap();
            ensure(a == 0.0 && b == 0.0, || format!("improvement of mixture is {a}, {b}"))?;
        }
        let s = score_utterance("u", &[mix.clone(), mix.clone()], &refs, &mix, SdrOptions::default()).unwrap();
        ensure(s.si_sdri.iter().chain(&s.sdri).all(|&v| v == 0.0), || format!("{s:?}"))?;
    }
    Ok(format!("1000 scalings (max drift {worst:.1e} dB), PIT I=2,3 matches brute force, mixture improvement 0"))
}

// ---------------------------------------------------------------- 5

fn sharing_error<T: Real>(axis: Axis, seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let mut store = ParamStore::<T>::new();
    let aa = AxisAttention::build(&mut store, "a", axis, 8, 2, &mut rng).unwrap();
    let (b, d, t, f) = (2, 8, 7, 9);
    let x: Tensor<T> = randn(&[b, d, t, f], &mut rng).cast();
    let (full, _) = aa.forward(store.values(), &x, Mode::Eval, 0.0, &mut rng);
    let mut worst = 0.0f64;
    let slices = if axis == Axis::Frequency { t } else { f };
    for bi in 0..b {
        for s in 0..slices {
            // one sequence at a time
            let (st, sf) = if axis == Axis::Frequency { (1, f) } else { (t, 1) };
            let mut one = Tensor::<T>::zeros(&[1, d, st, sf]);
            for di in 0..d {
                for ti in 0..st {
                    for fi in 0..sf {
                        let (gt, gf) = if axis == Axis::Frequency { (s, fi) } else { (ti, s) };
                        one.data_mut()[(di * st + ti) * sf + fi] = x.data()[((bi * d + di) * t + gt) * f + gf];
                    }
                }
            }
            let (y, _) = aa.forward(store.values(), &one, Mode::Eval, 0.0, &mut rng);
            for di in 0..d {
                for ti in 0..st {
                    for fi in 0..sf {
                        let (gt, gf) = if axis == Axis::Frequency { (s, fi) } else { (ti, s) };
                        let a = y.data()[(di * st + ti) * sf + fi].f64();
                        let z = full.data()[((bi * d + di) * t + gt) * f + gf].f64();
                        worst = worst.max((a - z).abs());
                    }
                }
            }
        }
    }
    worst
}

fn weight_sharing() -> Outcome {
    let mut parts = Vec::new();
    for axis in [Axis::Frequency, Axis::Time] {
        let e64 = sharing_error::<f64>(axis, 5);
        let e32 = sharing_error::<f32>(axis, 5);
        ensure(e64 < 1e-6 && e32 < 1e-6, || format!("{axis:?}: f64 {e64:e}, f32 {e32:e}"))?;
        parts.push(format!("{} max diff {e32:.1e}", axis.label()));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------- 6

fn small_dataset(dir: &Path, mics: usize, counts: SplitCounts, seconds: f64, seed: u64) -> (Dataset, Dataset) {
    let scene = SceneConfig {
        mics,
        clip_seconds: seconds,
        seed,
        ..SceneConfig::default()
    };
    build_dataset(&scene, counts, dir).unwrap();
    let m = DatasetManifest::load(dir).unwrap();
    (Dataset::load(&m, "train").unwrap(), Dataset::load(&m, "val").unwrap())
}

fn training_protocol() -> Outcome {
    // scripted validation losses
    let mut s = PlateauSchedule::new(1e-3, 0.5, 7, 15);
    let mut halved_at = Vec::new();
    let mut stop_at = None;
    for epoch in 1..=40 {
        let st = s.observe(5.0);
        if st.halved {
            halved_at.push(epoch);
        }
        if st.stop && stop_at.is_none() {
            stop_at = Some(epoch);
        }
    }
    // epoch 1 sets the best; epochs 2.. are non-improving
    ensure(halved_at.first() == Some(&8), || format!("first halving at {halved_at:?}"))?;
    ensure(stop_at == Some(16), || format!("stop at {stop_at:?}"))?;
    let mut s = PlateauSchedule::new(1e-3, 0.5, 7, 15);
    s.best = Some(1.0);
    let mut lrs = Vec::new();
    let mut stop = None;
    for epoch in 1..=15 {
        let st = s.observe(5.0);
        lrs.push(s.lr);
        if st.stop {
            stop = Some(epoch);
            break;
        }
    }
    ensure(lrs[5] == 1e-3 && lrs[6] == 5e-4 && lrs[13] == 2.5e-4, || format!("lr trace {lrs:?}"))?;
    ensure(stop == Some(15), || format!("never-improving run stopped at {stop:?}"))?;
    ensure(lrs.windows(2).all(|w| w[1] == w[0] || w[1] == 0.5 * w[0]), || "lr changes other than x0.5".into())?;

    // clipping
    let mut rng = RngState::new(66);
    for k in 0..200 {
        let mut st = ParamStore::<f32>::new();
        for t in 0..3 {
            let n = 1 + rng.below(300);
            let id = st.add(&format!("p{t}"), Tensor::zeros(&[n]), true).unwrap();
            let scale = 10f64.powf(rng.range(-3.0, 3.0));
            for g in st.grad_mut(id).data_mut() {
                *g = (scale * rng.normal()) as f32;
            }
        }
        clip_gradients(&mut st, 5.0).map_err(|e| e.to_string())?;
        let n = grad_norm(&st);
        ensure(n <= 5.0 + 1e-9, || format!("case {k}: post-clip norm {n}"))?;
    }

    // resume
    let tmp = tempfile::tempdir().unwrap();
    let (train, val) = small_dataset(&tmp.path().join("data"), 2, SplitCounts { train: 6, val: 2, test: 0 }, 0.5, 3);
    let mcfg = ModelConfig {
        dim: 8,
        heads: 2,
        blocks: 1,
        mics: 2,
        ..ModelConfig::tiny(2, 2)
    };
    let tcfg = |epochs| TrainConfig {
        batch_size: 2,
        max_epochs: epochs,
        seed: 9,
        ..TrainConfig::default()
    };
    let mut straight = Trainer::new(&mcfg, tcfg(3)).unwrap();
    let (tr, va) = (straight.prepare(&train).unwrap(), straight.prepare(&val).unwrap());
    straight.fit(&tr, &va, &tmp.path().join("a"), |_| {}).map_err(|e| e.to_string())?;
    let mut first = Trainer::new(&mcfg, tcfg(1)).unwrap();
    first.fit(&tr, &va, &tmp.path().join("b"), |_| {}).map_err(|e| e.to_string())?;
    let mut resumed = Trainer::resume(&tmp.path().join("b/last.ckpt"), tcfg(3)).map_err(|e| e.to_string())?;
    resumed.fit(&tr, &va, &tmp.path().join("b"), |_| {}).map_err(|e| e.to_string())?;
    let (a, b) = (straight.archive(), resumed.archive());
    ensure(a.entries.len() == b.entries.len(), || "checkpoint sizes differ".into())?;
    for (x, y) in a.entries.iter().zip(&b.entries) {
        let same = x.name == y.name && x.tensor.data().iter().zip(y.tensor.data()).all(|(p, q)| p.to_bits() == q.to_bits());
        ensure(same, || format!("{}/{} differs after resume", x.section, x.name))?;
    }
    ensure(straight.state == resumed.state, || format!("run state differs: {:?} vs {:?}", straight.state, resumed.state))?;
    Ok(format!(
        "halve after 7 non-improving epochs, stop after 15, 200 clip cases <= 5, resume 1+2 == 3 epochs over {} tensors bit-exact",
        a.entries.len()
    ))
}

// ---------------------------------------------------------------- 7

static TRAINED: OnceLock<PathBuf> = OnceLock::new();
static WORKDIR: OnceLock<tempfile::TempDir> = OnceLock::new();

fn workdir() -> &'static Path {
    WORKDIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn desk_run(mics: usize, target: f64) -> Result<(f64, usize, Duration, PathBuf), String> {
    let root = workdir().join(format!("m{mics}"));
    let (train, val) = small_dataset(&root.join("data"), mics, SplitCounts { train: 64, val: 16, test: 0 }, 2.0, 1);
    let mcfg = ModelConfig::tiny(mics, 2);
    let tcfg = TrainConfig {
        batch_size: 2,
        max_epochs: 40,
        seed: 1,
        stop_at_si_sdri: Some(target),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut t = Trainer::new(&mcfg, tcfg).map_err(|e| e.to_string())?;
    let (tr, va) = (t.prepare(&train).unwrap(), t.prepare(&val).unwrap());
    let run = root.join("run");
    let out = t
        .fit(&tr, &va, &run, |m| {
            println!(
                "    M={mics} epoch {:2}: train {:7.3} val {:7.3} SI-SDRi {:6.2} dB ({:.0} s)",
                m.epoch, m.train_loss, m.val_loss, m.val_si_sdri, m.wall_time
            )
        })
        .map_err(|e| e.to_string())?;
    let best = out.history.iter().map(|m| m.val_si_sdri).fold(f64::NEG_INFINITY, f64::max);
    Ok((best, out.history.len(), start.elapsed(), run.join("best.ckpt")))
}

fn end_to_end() -> Outcome {
    let (best2, ep2, t2, ckpt) = desk_run(2, 8.0)?;
    TRAINED.set(ckpt).ok();
    ensure(best2 >= 8.0, || format!("M=2 reached only {best2:.2} dB in {ep2} epochs"))?;
    ensure(t2 <= Duration::from_secs(3600), || format!("M=2 took {t2:?}"))?;
    let (best1, ep1, t1, _) = desk_run(1, 5.0)?;
    ensure(best1 >= 5.0, || format!("M=1 reached only {best1:.2} dB in {ep1} epochs"))?;
    Ok(format!(
        "M=2 {best2:.2} dB after {ep2} epochs ({:.1} min), M=1 {best1:.2} dB after {ep1} epochs ({:.1} min)",
        t2.as_secs_f64() / 60.0,
        t1.as_secs_f64() / 60.0
    ))
}

// ---------------------------------------------------------------- 8

fn attention_export() -> Outcome {
    let ckpt = match TRAINED.get() {
        Some(p) => p.clone(),
        None => {
            // criterion 7 not run in this invocation: train briefly
            let root = workdir().join("short");
            let (train, val) = small_dataset(&root.join("data"), 2, SplitCounts { train: 8, val: 2, test: 0 }, 1.0, 1);
            let mut t = Trainer::new(&ModelConfig::tiny(2, 2), TrainConfig { batch_size: 2, max_epochs: 2, ..TrainConfig::default() }).unwrap();
            let (tr, va) = (t.prepare(&train).unwrap(), t.prepare(&val).unwrap());
            t.fit(&tr, &va, &root.join("run"), |_| {}).map_err(|e| e.to_string())?;
            root.join("run/best.ckpt")
        }
    };
    let sep = Separator::<f32>::load(&ckpt).map_err(|e| e.to_string())?;
    let root = workdir().join("attn");
    build_dataset(
        &SceneConfig {
            seed: 77,
            ..SceneConfig::default()
        },
        SplitCounts { train: 0, val: 0, test: 1 },
        &root,
    )
    .unwrap();
    let mix = read_wav(&root.join("test/test00000_mix.wav")).unwrap();
    let cap = AttentionCapture { indices: vec![0, 10, 60] };
    let (_, records) = sep.separate_with_attention(&mix, &cap).map_err(|e| e.to_string())?;
    let filter = DumpFilter {
        layers: vec![0, 1],
        heads: vec![0, 1],
        axes: vec![],
    };
    let out = root.join("dump");
    let index = write_dump(&records, &filter, &out).map_err(|e| e.to_string())?;
    ensure(index.len() == 2 * 2 * 2 * 3, || format!("{} matrices written", index.len()))?;
    let mut worst = 0.0f64;
    for e in &index {
        let text = std::fs::read_to_string(out.join(&e.file)).unwrap();
        let (rows, cols, data) = parse_matrix(&text).map_err(|e| e.to_string())?;
        let expect = if e.module == "fsa" { 129 } else { mix.len().div_ceil(128) - 1 };
        ensure(rows == cols && rows == expect, || format!("{}: {rows}x{cols}", e.file))?;
        for row in data.chunks(cols) {
            ensure(row.iter().all(|&v| v >= 0.0), || format!("{}: negative weight", e.file))?;
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("row sums off by {worst:e}"))?;
    Ok(format!("{} matrices, max |row sum - 1| = {worst:.1e}", index.len()))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("parameter counts", parameter_counts),
        ("gradient fidelity", gradient_fidelity),
        ("stft round trip", stft_round_trip),
        ("objective properties", objective_properties),
        ("weight sharing", weight_sharing),
        ("training protocol", training_protocol),
        ("end-to-end desk run", end_to_end),
        ("attention export", attention_export),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let n = k + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("criterion {n} {name}: PASS [{secs:.1} s] {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL [{secs:.1} s] {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
