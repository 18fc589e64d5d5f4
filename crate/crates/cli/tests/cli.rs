use std::path::Path;
use std::process::{Command, Output};

use dasformer::signal::read_wav;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dasformer")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn gen_data(dir: &Path, extra: &[&str]) {
    let d = dir.to_str().unwrap();
    let mut args = vec!["gen-data", "--out", d, "--clip-seconds", "0.5", "--seed", "5"];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn usage_errors_exit_with_2() {
    for args in [&["frobnicate"][..], &["count-params", "--bogus"], &["train"], &[]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
}

#[test]
fn count_params_presets() {
    let base = ok(&["count-params", "--preset", "dasformer-base"]);
    assert!(base.lines().last().unwrap().contains("2062148"), "{base}");
    let no_se = ok(&["count-params", "--preset", "dasformer-base", "--no-se"]);
    assert!(no_se.contains("1268036"), "{no_se}");
    let micro = ok(&["count-params", "--preset", "dasformer-micro"]);
    assert!(micro.contains("25364"), "{micro}");
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"model": {"dim": 16, "heads": 2, "blocks": 1}}"#).unwrap();
    let from_file = ok(&["count-params", "--config", cfg.to_str().unwrap()]);
    assert!(from_file.contains("D=16 H=2 L=1"), "{from_file}");
    let overridden = ok(&["count-params", "--config", cfg.to_str().unwrap(), "--blocks", "2"]);
    assert!(overridden.contains("D=16 H=2 L=2"), "{overridden}");
    std::fs::write(&cfg, r#"{"model": {"dimm": 16}}"#).unwrap();
    assert!(!run(&["count-params", "--config", cfg.to_str().unwrap()]).status.success());
}

/// SI-SDR of `est` against `reference` with mean removal, capped at 60 dB.
fn si_sdr(est: &[f32], reference: &[f32]) -> f64 {
    let mean = |x: &[f32]| x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64;
    let (me, mr) = (mean(est), mean(reference));
    let e: Vec<f64> = est.iter().map(|&v| v as f64 - me).collect();
    let r: Vec<f64> = reference.iter().map(|&v| v as f64 - mr).collect();
    let alpha = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / r.iter().map(|b| b * b).sum::<f64>();
    let target: f64 = r.iter().map(|b| (alpha * b).powi(2)).sum();
    let noise: f64 = e.iter().zip(&r).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    (10.0 * (target / noise).log10()).clamp(-60.0, 60.0)
}

#[test]
fn eval_of_reference_files_reports_ceiling_improvement() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data, &["--train", "0", "--val", "0", "--test", "2"]);
    let out = run(&["eval", "--data", data.to_str().unwrap(), "--estimates", data.join("test").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "si_sdri_0").unwrap();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[1], "0-1");
        let split = data.join("test");
        let mix = read_wav(&split.join(format!("{}_mix.wav", f[0]))).unwrap();
        for i in 0..2 {
            let r = read_wav(&split.join(format!("{}_s{i}.wav", f[0]))).unwrap();
            let want = 60.0 - si_sdr(mix.channel(0), r.channel(0));
            let got: f64 = f[col + i].parse().unwrap();
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }
}

#[test]
fn grad_check_passes_on_micro_model() {
    let out = ok(&["grad-check", "--frames", "4", "--max-entries", "20"]);
    assert!(out.contains("max relative error"), "{out}");
}

#[test]
fn train_separate_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data, &["--train", "4", "--val", "2", "--test", "1"]);
    let run_dir = dir.path().join("run");
    let (d, r) = (data.to_str().unwrap(), run_dir.to_str().unwrap());
    let common = ["--data", d, "--out", r, "--mics", "2", "--dim", "8", "--heads", "2", "--blocks", "1", "--batch-size", "2", "--quiet"];
    ok(&[&["train"][..], &common, &["--max-epochs", "1"]].concat());
    let metrics = std::fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    let last = run_dir.join("last.ckpt");
    ok(&[&["train"][..], &common, &["--max-epochs", "2", "--resume", last.to_str().unwrap()]].concat());
    let metrics = std::fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let ckpt = run_dir.join("best.ckpt");
    let mix = data.join("test/test00000_mix.wav");
    let sep = dir.path().join("sep");
    ok(&["separate", "--checkpoint", ckpt.to_str().unwrap(), "--input", mix.to_str().unwrap(), "--out", sep.to_str().unwrap()]);
    let m = read_wav(&mix).unwrap();
    for i in 0..2 {
        let s = read_wav(&sep.join(format!("test00000_mix_s{i}.wav"))).unwrap();
        assert_eq!((s.channels(), s.len()), (1, m.len()));
    }

    let attn = dir.path().join("attn");
    let text = ok(&[
        "dump-attn", "--checkpoint", ckpt.to_str().unwrap(), "--input", mix.to_str().unwrap(), "--out", attn.to_str().unwrap(),
        "--layers", "0", "--heads", "1", "--slices", "0,3", "--module", "fsa",
    ]);
    assert!(text.starts_with("wrote 2 matrices"), "{text}");
    assert!(attn.join("layer0_fsa_h1_s3.txt").exists());
    assert!(attn.join("index.json").exists());
}
