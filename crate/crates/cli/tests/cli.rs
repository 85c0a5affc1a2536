use std::path::Path;
use std::process::{Command, Output};

use stftsynth::dataset::{read_wav, write_wav};
use stftsynth::synthetic::{synthesize_event, EventClass, SynthSpec, EVENT_LEN, SAMPLE_RATE};

fn stftsynth(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stftsynth"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY: &str = r#"
[corpus.class_counts]
hammer = 20

[model]
g_width = 2
d_width = 4

[train]
max_epochs = 2
batch_size = 8
checkpoint_every = 1

[eval]
n_generated = 8
figure_samples = 2

[matrix]
variants = ["lsgan"]
classes = ["hammer"]
window_sizes = [128]
"#;

#[test]
fn the_pipeline_runs_from_corpus_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let cfg = config.to_str().unwrap();
    for step in ["synth-data", "features", "matrix", "report"] {
        let out = stftsynth(&work, &["--config", cfg, "--seed", "3", step]);
        assert_eq!(code(&out), 0, "{step}: {}", stderr(&out));
    }
    let rerun = stftsynth(&work, &["--config", cfg, "--seed", "3", "matrix"]);
    assert_eq!(code(&rerun), 0);
    assert!(String::from_utf8_lossy(&rerun.stdout).contains("0 trained, 1 cached"));
    assert!(work.join("report").join("report.md").is_file());

    let run = work.join("runs").join("lsgan_hammer_w128_s3");
    let samples = dir.path().join("samples");
    let out = stftsynth(&work, &["--config", cfg, "generate", "--checkpoint", run.to_str().unwrap(), "--n", "3", "--out", samples.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read_dir(&samples).unwrap().count(), 4);

    let out = stftsynth(&work, &["--config", cfg, "evaluate", "--checkpoint", run.to_str().unwrap(), "--class", "hammer"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["fid"].as_f64().unwrap().is_finite());
}

#[test]
fn synthetic_wavs_are_mono_float_at_96_khz() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let out = stftsynth(dir.path(), &["--config", config.to_str().unwrap(), "synth-data"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let wav = std::fs::read_dir(dir.path().join("corpus").join("wav")).unwrap().next().unwrap().unwrap().path();
    let reader = hound::WavReader::open(&wav).unwrap();
    let spec = reader.spec();
    assert_eq!((spec.channels, spec.sample_rate, spec.bits_per_sample), (1, 96_000, 32));
    assert_eq!(spec.sample_format, hound::SampleFormat::Float);
    assert_eq!(read_wav(&wav).unwrap().0[0].len(), EVENT_LEN);
}

#[test]
fn extract_cuts_events_out_of_a_recording() {
    let dir = tempfile::tempdir().unwrap();
    let mut recording = vec![0.0; SAMPLE_RATE as usize];
    for k in 0..12 {
        let ev = synthesize_event(&SynthSpec::new(EventClass::Trimmer, k)).unwrap();
        let start = 1000 + k as usize * 3 * EVENT_LEN;
        for (i, v) in ev.samples.iter().enumerate() {
            recording[start + i] += v;
        }
    }
    let wav = dir.path().join("site.wav");
    write_wav(&wav, &recording, SAMPLE_RATE).unwrap();
    let arg = format!("{}=trimmer", wav.display());
    let out = stftsynth(dir.path(), &["extract", "--recording", &arg]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("extracted 12 events"));
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&stftsynth(dir.path(), &["--profile", "huge", "synth-data"])), 2);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nlearning_rate = 1\n").unwrap();
    assert_eq!(code(&stftsynth(dir.path(), &["--config", bad.to_str().unwrap(), "synth-data"])), 2);
    std::fs::write(&bad, "[train]\nmax_epochs = 0\n").unwrap();
    assert_eq!(code(&stftsynth(dir.path(), &["--config", bad.to_str().unwrap(), "synth-data"])), 2);
    let missing = dir.path().join("absent.toml");
    assert_eq!(code(&stftsynth(dir.path(), &["--config", missing.to_str().unwrap(), "synth-data"])), 2);
}

#[test]
fn missing_inputs_name_the_step_to_run_first() {
    let dir = tempfile::tempdir().unwrap();
    let out = stftsynth(dir.path(), &["matrix"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("stftsynth features"), "{}", stderr(&out));
    let out = stftsynth(dir.path(), &["features"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("synth-data"), "{}", stderr(&out));
    let out = stftsynth(dir.path(), &["report"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("matrix"));
}

#[test]
fn diverging_training_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("hot.toml");
    let hot = TINY.replace("max_epochs = 2", "max_epochs = 20\nlr_generator = 1e200\nlr_discriminator = 1e200");
    std::fs::write(&config, hot).unwrap();
    let cfg = config.to_str().unwrap();
    for step in ["synth-data", "features"] {
        assert_eq!(code(&stftsynth(dir.path(), &["--config", cfg, step])), 0);
    }
    let out = stftsynth(dir.path(), &["--config", cfg, "train", "--variant", "lsgan", "--class", "hammer", "--window", "128"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
