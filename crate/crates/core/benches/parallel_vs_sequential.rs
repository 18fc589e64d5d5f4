use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dasformer::exec::{set_execution, Execution};
use dasformer::model::{DasFormer, ModelConfig};
use dasformer::nn::{Mode, RngState, Tensor};
use dasformer::signal::{stft, MultichannelWaveform, StftConfig};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn randn(shape: &[usize], rng: &mut RngState) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal() as f32).collect()).unwrap()
}

fn model_passes(c: &mut Criterion) {
    let cfg = ModelConfig::tiny(2, 2);
    let mut rng = RngState::new(0);
    let (model, mut store) = DasFormer::build::<f32>(&cfg, &mut rng).unwrap();
    let x = randn(&[2, 4, 63, cfg.stft.bins()], &mut rng);
    let dy = randn(&[2, 4, 63, cfg.stft.bins()], &mut rng);

    let mut g = c.benchmark_group("inference");
    g.sample_size(10);
    for (name, mode) in MODES {
        set_execution(mode);
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| model.infer(&store, &x, None).unwrap()));
    }
    g.finish();

    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    for (name, mode) in MODES {
        set_execution(mode);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let (_, tape) = model.forward(&store, &x, Mode::Train, &mut rng).unwrap();
                model.backward(&mut store, &tape, &dy);
                store.zero_grads();
            })
        });
    }
    g.finish();
    set_execution(Execution::Parallel);
}

fn analysis(c: &mut Criterion) {
    let mut rng = RngState::new(1);
    let chans = (0..6).map(|_| (0..32000).map(|_| rng.normal() as f32 * 0.1).collect()).collect();
    let wave = MultichannelWaveform::new(chans, 8000).unwrap();
    let cfg = StftConfig::standard(8000);
    let mut g = c.benchmark_group("stft_6ch_4s");
    for (name, mode) in MODES {
        set_execution(mode);
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| stft(&wave, &cfg).unwrap()));
    }
    g.finish();
    set_execution(Execution::Parallel);
}

criterion_group!(benches, model_passes, analysis);
criterion_main!(benches);
