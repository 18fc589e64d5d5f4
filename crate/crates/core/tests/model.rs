use dasformer::model::{DasFormer, MbConv, ModelConfig};
use dasformer::nn::{ConvKind, Mode, ParamStore, RngState, Tensor};
use proptest::prelude::*;

fn randn(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut RngState) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let var = store.name(id).ends_with("running_var");
        for v in store.value_mut(id).data_mut() {
            *v = if var { rng.range(0.5, 2.0) } else { 0.5 * rng.normal() };
        }
    }
}

fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

/// Straight-line evaluation of one inverted bottleneck in eval mode.
fn mbconv_oracle(p: &ParamStore<f64>, x: &Tensor<f64>, d: usize, h: usize, s: usize) -> Vec<f64> {
    let v = |n: &str| p.value(p.id(n).unwrap()).data().to_vec();
    let (t, f) = (x.shape()[2], x.shape()[3]);
    let at = |c: usize, i: usize, j: usize| x.data()[(c * t + i) * f + j];
    let (g, b, mu, var) = (v("m.norm.weight"), v("m.norm.bias"), v("m.norm.running_mean"), v("m.norm.running_var"));
    let norm = |c: usize, i: usize, j: usize| g[c] * (at(c, i, j) - mu[c]) / (var[c] + 1e-5).sqrt() + b[c];
    let (we, be) = (v("m.expand.weight"), v("m.expand.bias"));
    let mut a1 = vec![0.0; h * t * f];
    for k in 0..h {
        for i in 0..t {
            for j in 0..f {
                let z: f64 = be[k] + (0..d).map(|c| we[k * d + c] * norm(c, i, j)).sum::<f64>();
                a1[(k * t + i) * f + j] = silu(z);
            }
        }
    }
    let (wd, bd) = (v("m.depthwise.weight"), v("m.depthwise.bias"));
    let mut a2 = vec![0.0; h * t * f];
    for k in 0..h {
        for i in 0..t {
            for j in 0..f {
                let mut z = bd[k];
                for di in 0..3 {
                    for dj in 0..3 {
                        let (ii, jj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                        if ii >= 0 && jj >= 0 && (ii as usize) < t && (jj as usize) < f {
                            z += wd[(k * 3 + di) * 3 + dj] * a1[(k * t + ii as usize) * f + jj as usize];
                        }
                    }
                }
                a2[(k * t + i) * f + j] = silu(z);
            }
        }
    }
    let (wr, br, wx, bx) = (v("m.se.reduce.weight"), v("m.se.reduce.bias"), v("m.se.expand.weight"), v("m.se.expand.bias"));
    let pooled: Vec<f64> = (0..h).map(|k| a2[k * t * f..(k + 1) * t * f].iter().sum::<f64>() / (t * f) as f64).collect();
    let hid: Vec<f64> = (0..s).map(|q| silu(br[q] + (0..h).map(|k| wr[q * h + k] * pooled[k]).sum::<f64>())).collect();
    let gate: Vec<f64> = (0..h)
        .map(|k| 1.0 / (1.0 + (-(bx[k] + (0..s).map(|q| wx[k * s + q] * hid[q]).sum::<f64>())).exp()))
        .collect();
    let (wp, bp) = (v("m.project.weight"), v("m.project.bias"));
    let mut y = vec![0.0; d * t * f];
    for c in 0..d {
        for i in 0..t {
            for j in 0..f {
                let z: f64 = bp[c] + (0..h).map(|k| wp[c * h + k] * gate[k] * a2[(k * t + i) * f + j]).sum::<f64>();
                y[(c * t + i) * f + j] = at(c, i, j) + z;
            }
        }
    }
    y
}

#[test]
fn mbconv_matches_scalar_oracle() {
    let mut rng = RngState::new(3);
    let (d, h, s) = (4, 8, 4);
    let mut store = ParamStore::<f64>::new();
    let mb = MbConv::build(&mut store, "m", d, h, ConvKind::Depthwise3x3, Some(s), &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let x = randn(&[1, d, 3, 3], &mut rng);
    let (y, _) = mb.forward(store.values(), &x, Mode::Eval).unwrap();
    let want = mbconv_oracle(&store, &x, d, h, s);
    for (a, b) in y.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

fn micro(mics: usize, sources: usize) -> ModelConfig {
    ModelConfig {
        dim: 8,
        heads: 2,
        blocks: 1,
        ..ModelConfig::tiny(mics, sources)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_projection_makes_mbconv_identity(seed in 0u64..1000, t in 1usize..6, f in 1usize..6) {
        let mut rng = RngState::new(seed);
        let mut store = ParamStore::<f64>::new();
        let mb = MbConv::build(&mut store, "m", 4, 8, ConvKind::Depthwise3x3, Some(4), &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        store.set("m.project.weight", Tensor::zeros(&[4, 8])).unwrap();
        store.set("m.project.bias", Tensor::zeros(&[4])).unwrap();
        let x = randn(&[2, 4, t, f], &mut rng);
        for mode in [Mode::Train, Mode::Eval] {
            let (y, _) = mb.forward(store.values(), &x, mode).unwrap();
            prop_assert_eq!(&y, &x);
        }
    }

    #[test]
    fn zero_decoder_gives_silence(seed in 0u64..1000, frames in 1usize..12, mics in 1usize..3) {
        let cfg = micro(mics, 2);
        let mut rng = RngState::new(seed);
        let (model, mut store) = DasFormer::build::<f64>(&cfg, &mut rng).unwrap();
        let id = model.decoder.weight;
        store.value_mut(id).fill(0.0);
        let x = randn(&[1, 2 * mics, frames, cfg.stft.bins()], &mut rng);
        let (y, _) = model.infer(&store, &x, None).unwrap();
        prop_assert_eq!(y.shape(), &[1, 4, frames, cfg.stft.bins()][..]);
        prop_assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn any_length_runs_with_shared_weights(seed in 0u64..1000, a in 1usize..16, b in 1usize..16) {
        let cfg = micro(2, 2);
        let (model, store) = DasFormer::build::<f32>(&cfg, &mut RngState::new(seed)).unwrap();
        let mut rng = RngState::new(seed + 1);
        for frames in [a, b] {
            let x = randn(&[1, 4, frames, cfg.stft.bins()], &mut rng).cast();
            let (y, _) = model.infer(&store, &x, None).unwrap();
            prop_assert_eq!(y.shape()[2], frames);
            prop_assert!(y.is_finite());
        }
    }

    #[test]
    fn inference_is_deterministic(seed in 0u64..1000) {
        let cfg = micro(2, 2);
        let (model, store) = DasFormer::build::<f32>(&cfg, &mut RngState::new(seed)).unwrap();
        let x = randn(&[2, 4, 5, cfg.stft.bins()], &mut RngState::new(seed)).cast();
        let (y1, _) = model.infer(&store, &x, None).unwrap();
        let (y2, _) = model.infer(&store, &x, None).unwrap();
        prop_assert_eq!(y1, y2);
    }
}

#[test]
fn batch_items_are_independent_in_eval() {
    let cfg = micro(2, 2);
    let mut rng = RngState::new(8);
    let (model, store) = DasFormer::build::<f64>(&cfg, &mut rng).unwrap();
    let bins = cfg.stft.bins();
    let x = randn(&[2, 4, 3, bins], &mut rng);
    let (both, _) = model.infer(&store, &x, None).unwrap();
    let per = 4 * 3 * bins;
    let first = Tensor::from_vec(&[1, 4, 3, bins], x.data()[..per].to_vec()).unwrap();
    let (one, _) = model.infer(&store, &first, None).unwrap();
    let diff = one.data().iter().zip(&both.data()[..one.len()]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}
