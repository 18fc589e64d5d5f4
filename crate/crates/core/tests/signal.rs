use dasformer::signal::wav::{decode_wav, encode_wav};
use dasformer::signal::{istft, pack_input, stft, unpack_output, MultichannelWaveform, SampleFormat, StftConfig};
use proptest::prelude::*;

fn wave(channels: Vec<Vec<f32>>) -> MultichannelWaveform {
    MultichannelWaveform::new(channels, 8000).unwrap()
}

fn signal(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, len)
}

#[test]
fn pcm16_full_scale_square_wave() {
    let x: Vec<f32> = (0..64).map(|i| if (i / 8) % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let back = decode_wav(&encode_wav(&wave(vec![x.clone()]), SampleFormat::Pcm16)).unwrap();
    for (a, b) in x.iter().zip(back.channel(0)) {
        let want = if *a > 0.0 { 32767.0 / 32768.0 } else { -1.0 };
        assert_eq!(*b, want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn float_wav_round_trip(ch in 1usize..4, x in signal(40)) {
        let w = wave((0..ch).map(|c| x.iter().map(|v| v * (c + 1) as f32 * 0.3).collect()).collect());
        prop_assert_eq!(decode_wav(&encode_wav(&w, SampleFormat::Float32)).unwrap(), w);
    }

    #[test]
    fn pcm16_error_within_one_step(x in signal(64)) {
        let w = wave(vec![x.clone()]);
        let back = decode_wav(&encode_wav(&w, SampleFormat::Pcm16)).unwrap();
        for (a, b) in x.iter().zip(back.channel(0)) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0 + 1e-7);
        }
    }

    #[test]
    fn stft_is_linear(x in signal(600), y in signal(600), a in -3.0f32..3.0) {
        let cfg = StftConfig::standard(8000);
        let mixed: Vec<f32> = x.iter().zip(&y).map(|(p, q)| a * p + q).collect();
        let (sx, sy, sm) = (stft(&wave(vec![x]), &cfg).unwrap(), stft(&wave(vec![y]), &cfg).unwrap(), stft(&wave(vec![mixed]), &cfg).unwrap());
        for ((p, q), m) in sx.data().iter().zip(sy.data()).zip(sm.data()) {
            prop_assert!((p * a + q - m).norm() < 1e-3);
        }
    }

    #[test]
    fn interior_reconstruction(x in signal(2000)) {
        let cfg = StftConfig::standard(8000);
        let y = istft(&stft(&wave(vec![x.clone()]), &cfg).unwrap()).unwrap();
        prop_assert!(y.len() >= x.len());
        for i in cfg.frame_len..x.len() - cfg.frame_len {
            prop_assert!((x[i] - y.channel(0)[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn pack_then_unpack_is_identity(mics in 1usize..4, x in signal(700)) {
        let cfg = StftConfig::standard(8000);
        let spec = stft(&wave((0..mics).map(|m| x.iter().map(|v| v - m as f32 * 0.1).collect()).collect()), &cfg).unwrap();
        let grid = pack_input::<f32>(&spec);
        prop_assert_eq!(grid.shape(), &[2 * mics, spec.frames(), spec.bins()][..]);
        let back = unpack_output(&grid, cfg, 8000).unwrap();
        prop_assert_eq!(back.data(), spec.data());
    }
}
