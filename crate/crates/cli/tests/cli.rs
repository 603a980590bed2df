use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use vocalfx::chain::{render, ChainConfig};
use vocalfx::delay::DelayConfig;
use vocalfx::fdn::FdnConfig;
use vocalfx::params::{decode, encode, initial_logits, BoundsConfig, Preset};
use vocalfx::pipeline::{read_wav, synthetic_vocal, write_wav};

const FS: f64 = 44100.0;

fn vocalfx(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vocalfx"));
    c.args(args.iter().map(|a| a.as_ref())).env_remove("VOCALFX_CONFIG").env("RUST_LOG", "warn");
    c
}

fn code(c: &mut Command) -> i32 {
    let out = c.output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn wav(dir: &Path, name: &str, channels: &[&[f64]]) -> PathBuf {
    let p = dir.join(name);
    write_wav(&p, channels, FS as u32).unwrap();
    p
}

fn perturbed(seed: u64, scale: f64) -> Vec<f64> {
    let b = BoundsConfig::for_sample_rate(FS);
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut t = initial_logits(&b, 0).unwrap();
    t.iter_mut().for_each(|v| *v += scale * r.gen_range(-1.0..1.0));
    t
}

const QUICK: &str = r#"
steps = 4
lr = 0.05
delay_ir_seconds = 0.5
fdn_ir_seconds = 0.5

[segment]
window_seconds = 2.0
step_seconds = 1.0
warmup_seconds = 0.5

[fit]
max_segments_per_step = 2

[fit.filter]
max_min_loss = 100.0
max_fluctuation = 100.0
"#;

#[test]
fn neutral_preset_renders_the_centred_input_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let b = BoundsConfig::for_sample_rate(FS);
    let mut p = decode(&initial_logits(&b, 0).unwrap(), &b).unwrap();
    p.dynamics.comp_threshold = 200.0;
    p.dynamics.exp_threshold = -400.0;
    p.dynamics.makeup_db = 0.0;
    p.dynamics.lookahead = 0.0;
    p.delay.gain = 1e-15;
    p.fdn.c = [[0.0; 6]; 2];
    p.pan = 0.5;
    p.peq.low_pass.freq = b.low_pass.freq.hi * 0.999;
    p.peq.high_pass.freq = b.high_pass.freq.lo * 1.001;
    let preset = dir.path().join("neutral.json");
    Preset::new(encode(&p, &b).unwrap(), &b).unwrap().save(&preset).unwrap();
    // a 1 kHz tone sits in the flat band of the widest pass filters
    let x: Vec<f64> = (0..22050).map(|i| 0.3 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / FS).sin()).collect();
    let input = wav(dir.path(), "in.wav", &[&x]);
    let (a, c) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
    assert_eq!(code(&mut vocalfx(&[&"render", &input, &preset, &a])), 0);
    assert_eq!(code(&mut vocalfx(&[&"render", &input, &preset, &c])), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let y = read_wav(&a).unwrap();
    assert_eq!(y.channels.len(), 2);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // skip the filters' start-up transient
    for ch in &y.channels {
        let err = ch[2000..].iter().zip(&x[2000..]).map(|(a, b)| (a - s * b).abs()).fold(0.0, f64::max);
        assert!(err < 0.01 * 0.3, "{err}");
    }
    let m = json(&dir.path().join("a.wav.json"));
    assert_eq!(m["run"]["command"], "render");
    assert_eq!(m["input_sha256"].as_object().unwrap().len(), 2);
    assert!(m["output_sha256"].as_object().unwrap().values().all(|v| v.as_str().unwrap().len() == 64));
}

#[test]
fn fit_on_a_synthetic_pair_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let b = BoundsConfig::for_sample_rate(FS);
    let x = synthetic_vocal(4.0, FS, 1);
    let cfg = ChainConfig {
        delay: DelayConfig::new(22050),
        fdn: FdnConfig::new(22050),
        ..ChainConfig::new(FS)
    };
    let y = render(&x, &perturbed(3, 0.5), &b, &cfg).unwrap();
    let raw = wav(dir.path(), "raw.wav", &[&x]);
    let target = wav(dir.path(), "target.wav", &[&y[0], &y[1]]);
    let conf = dir.path().join("quick.toml");
    std::fs::write(&conf, QUICK).unwrap();
    let out = dir.path().join("fit.json");
    // the settings file is picked up from the environment
    let status = code(vocalfx(&[&"fit", &raw, &target, &"-o", &out]).env("VOCALFX_CONFIG", &conf));
    let r = json(&out);
    assert_eq!(r["status"], "accepted", "{r}");
    assert_eq!(status, 0);
    assert_eq!(r["run"]["fit"]["steps"], 4);
    assert_eq!(r["run"]["config_file"], conf.display().to_string());
    assert_eq!(r["result"]["trace"].as_array().unwrap().len(), 4);
    assert_eq!(r["result"]["preset"]["logits"].as_array().unwrap().len(), 152);
    assert_eq!(r["input_sha256"].as_object().unwrap().len(), 2);

    // the default filter thresholds reject a run that does not improve
    let strict = dir.path().join("strict.toml");
    std::fs::write(&strict, QUICK.replace("lr = 0.05", "lr = 1e-9").replace("max_min_loss = 100.0\n", "")).unwrap();
    let out2 = dir.path().join("strict.json");
    let status = code(&mut vocalfx(&[&"fit", &raw, &target, &"-o", &out2, &"--config", &strict]));
    assert_eq!(status, 2);
    assert_eq!(json(&out2)["status"], "filtered");
}

#[test]
fn silent_target_is_rejected_without_segments() {
    let dir = tempfile::tempdir().unwrap();
    let x = synthetic_vocal(2.0, FS, 1);
    let z = vec![0.0; x.len()];
    let raw = wav(dir.path(), "raw.wav", &[&x]);
    let target = wav(dir.path(), "silent.wav", &[&z, &z]);
    let out = dir.path().join("fit.json");
    assert_eq!(code(&mut vocalfx(&[&"fit", &raw, &target, &"-o", &out, &"--steps", &"1"])), 2);
    let r = json(&out);
    assert_eq!(r["status"], "rejected");
    assert_eq!(r["rejected"]["reason"], "no segments");
}

#[test]
fn errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.wav");
    let out = dir.path().join("x.json");
    assert_eq!(code(&mut vocalfx(&[&"fit", &missing, &missing, &"-o", &out])), 1);
    assert_eq!(code(&mut vocalfx(&[&"fit", &missing, &missing, &"-o", &out, &"--lr=-1"])), 1);
    assert_eq!(code(&mut vocalfx(&[&"fit", &"--no-such-flag"])), 1);
}

#[test]
fn analyze_and_sample_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let b = BoundsConfig::for_sample_rate(FS);
    let presets = dir.path().join("presets");
    std::fs::create_dir(&presets).unwrap();
    for k in 0..3 {
        Preset::new(perturbed(k, 1.0), &b).unwrap().save(&presets.join(format!("p{k}.json"))).unwrap();
    }
    let out = dir.path().join("analysis");
    assert_eq!(code(&mut vocalfx(&[&"analyze", &presets, &out, &"--points", &"32", &"--project", &presets])), 0);
    for f in [
        "correlation.csv", "effect_correlation.json", "dendrogram.json", "pca.json", "cpv.csv", "cross_cpv.csv",
        "pc_responses.csv", "mean_preset.json", "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let cpv = std::fs::read_to_string(out.join("cpv.csv")).unwrap();
    let last: f64 = cpv.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((last - 100.0).abs() < 1e-9);
    let corr = std::fs::read_to_string(out.join("correlation.csv")).unwrap();
    assert_eq!(corr.lines().count(), 131);
    let d = json(&out.join("dendrogram.json"));
    assert_eq!(d["merges"].as_array().unwrap().len(), 5);
    let pca = json(&out.join("pca.json"));
    assert_eq!(pca["model"]["mean"].as_array().unwrap().len(), 130);
    // keyed by path, so the projected copy adds nothing
    assert_eq!(pca["input_sha256"].as_object().unwrap().len(), 3);
    assert_eq!(Preset::load(&out.join("mean_preset.json")).unwrap().logits.len(), 152);

    let m = out.join("pca.json");
    let (s1, s2) = (dir.path().join("s1"), dir.path().join("s2"));
    assert_eq!(code(&mut vocalfx(&[&"sample", &m, &s1, &"-n", &"3", &"--seed", &"9"])), 0);
    assert_eq!(code(&mut vocalfx(&[&"sample", &m, &s2, &"-n", &"3", &"--seed", &"9"])), 0);
    for k in 0..3 {
        let name = format!("sample_{k:04}.json");
        assert_eq!(std::fs::read(s1.join(&name)).unwrap(), std::fs::read(s2.join(&name)).unwrap());
    }
    assert!(s1.join("manifest.json").exists());

    // fewer than three presets cannot be analysed
    std::fs::remove_file(presets.join("p2.json")).unwrap();
    assert_eq!(code(&mut vocalfx(&[&"analyze", &presets, &out])), 1);
}
