use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stftsynth::benchmark::{build_features, synth_data, ExperimentConfig, Workspace};
use stftsynth::dataset::Split;
use stftsynth::models::{GanSpec, Variant};
use stftsynth::stft::{featurize, StftParams, DEFAULT_FLOOR_DB};
use stftsynth::synthetic::{synthesize_corpus, EventClass};
use stftsynth::trainer::{
    generate, monitor_collapse, EpochRecord, RunDir, TrainConfig, Trainer, TrainingData, COLLAPSE_FLOOR,
};
use stftsynth::Tensor;

fn small_data(class: EventClass, n: usize, seed: u64) -> TrainingData {
    let counts: BTreeMap<_, _> = [(class, n)].into_iter().collect();
    let corpus = synthesize_corpus(&counts, seed).unwrap();
    TrainingData::new(&featurize(&corpus, StftParams::new(128).unwrap(), DEFAULT_FLOOR_DB).unwrap()).unwrap()
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig { batch_size: 8, seed, lr_generator: 5e-5, lr_discriminator: 5e-5, checkpoint_every: 2, ..TrainConfig::default() }
}

fn spec(variant: Variant, data: &TrainingData) -> GanSpec {
    GanSpec::new(variant, data.shape).with_widths(2, 4)
}

fn max_gap(a: &[EpochRecord], b: &[EpochRecord]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| [x.loss_d - y.loss_d, x.loss_g - y.loss_g, x.gp - y.gp, x.lr_g - y.lr_g])
        .fold(0.0f64, |m, d| m.max(d.abs()))
}

#[test]
fn identical_seeds_give_identical_histories() {
    let data = small_data(EventClass::Hammer, 24, 1);
    for variant in [Variant::Stftsynth, Variant::Dcgan, Variant::Lsgan] {
        let run = || {
            let mut t = Trainer::new(&spec(variant, &data), &quick_config(4)).unwrap();
            t.fit(&data, 3, None, |_, _| Ok(())).unwrap();
            (t.history().to_vec(), t.sample(3, 9).unwrap())
        };
        let (h1, s1) = run();
        let (h2, s2) = run();
        assert!(max_gap(&h1, &h2) == 0.0, "{variant}");
        assert!(h1.iter().all(|r| r.loss_d.is_finite() && r.loss_g.is_finite()));
        assert_eq!(s1.iter().map(|s| s.values.clone()).collect::<Vec<_>>(), s2.iter().map(|s| s.values.clone()).collect::<Vec<_>>());
    }
}

#[test]
fn different_seeds_diverge() {
    let data = small_data(EventClass::Hammer, 16, 1);
    let mut a = Trainer::new(&spec(Variant::WganGp, &data), &quick_config(1)).unwrap();
    let mut b = Trainer::new(&spec(Variant::WganGp, &data), &quick_config(2)).unwrap();
    a.fit(&data, 1, None, |_, _| Ok(())).unwrap();
    b.fit(&data, 1, None, |_, _| Ok(())).unwrap();
    assert!(max_gap(a.history(), b.history()) > 0.0);
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let data = small_data(EventClass::Breakage, 24, 2);
    let s = spec(Variant::Stftsynth, &data);
    let cfg = quick_config(7);
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::create(dir.path(), &s, &cfg).unwrap();
    let mut full = Trainer::new(&s, &cfg).unwrap();
    full.fit(&data, 4, Some(&run), |_, _| Ok(())).unwrap();
    let mut resumed = Trainer::from_checkpoint(&run.checkpoint_path(2)).unwrap();
    assert_eq!(resumed.epoch(), 2);
    resumed.fit(&data, 4, None, |_, _| Ok(())).unwrap();
    assert!(max_gap(full.history(), resumed.history()) < 1e-12);
    assert_eq!(full.learning_rates(), resumed.learning_rates());
    assert_eq!(full.generator.params, resumed.generator.params);
    assert_eq!(full.discriminator.buffers, resumed.discriminator.buffers);
    let from_disk = generate(&run.checkpoint_path(4), 3, 5).unwrap();
    let in_memory = full.sample(3, 5).unwrap();
    for (a, b) in from_disk.iter().zip(&in_memory) {
        assert_eq!(a.values, b.values);
    }
    let losses = std::fs::read_to_string(dir.path().join(RunDir::LOSSES)).unwrap();
    assert!(losses.starts_with("epoch,loss_d,loss_g,gp,lr_g,lr_d,tte_seconds"));
    assert_eq!(losses.lines().count(), 5);
    assert!(dir.path().join("config.toml").is_file());
    assert_eq!(std::fs::read_dir(dir.path().join("previews")).unwrap().count(), cfg.preview_count);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let data = small_data(EventClass::Breakage, 16, 2);
    let s = spec(Variant::Dcgan, &data);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(&s, &quick_config(0)).unwrap();
    t.fit(&data, 1, None, |_, _| Ok(())).unwrap();
    t.save_checkpoint(dir.path()).unwrap();
    let other = GanSpec::new(Variant::Dcgan, data.shape).with_widths(3, 4);
    let mut t2 = Trainer::new(&other, &quick_config(0)).unwrap();
    t2.fit(&data, 1, None, |_, _| Ok(())).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    t2.save_checkpoint(dir2.path()).unwrap();
    std::fs::copy(dir2.path().join("generator.params.sts"), dir.path().join("generator.params.sts")).unwrap();
    assert!(Trainer::from_checkpoint(dir.path()).is_err());
    std::fs::write(dir.path().join("metadata.json"), "{").unwrap();
    assert!(Trainer::from_checkpoint(dir.path()).is_err());
}

#[test]
fn training_reads_only_the_training_split() {
    let ws_dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(ws_dir.path());
    let mut cfg = ExperimentConfig::for_profile(stftsynth::benchmark::Profile::Desk);
    cfg.corpus.class_counts = [(EventClass::Trimmer, 30), (EventClass::Hammer, 10)].into_iter().collect();
    synth_data(&ws, &cfg).unwrap();
    build_features(&ws, &cfg).unwrap();
    let set = stftsynth::trainer::FeatureSet::load(&ws.features_dir()).unwrap();
    let data = TrainingData::from_features(&set, EventClass::Trimmer, 128).unwrap();
    let mut t = Trainer::new(&spec(Variant::WganGp, &data), &quick_config(0)).unwrap();
    t.fit(&data, 1, None, |_, _| Ok(())).unwrap();
    let train: BTreeSet<String> = set.select(EventClass::Trimmer, 128, Split::Train).iter().map(|r| r.id.clone()).collect();
    let val: BTreeSet<String> = set.select(EventClass::Trimmer, 128, Split::Val).iter().map(|r| r.id.clone()).collect();
    assert!(!val.is_empty());
    assert_eq!(set.accessed(), train);
    assert!(set.accessed().is_disjoint(&val));
}

#[test]
fn short_data_and_bad_configs_are_config_errors() {
    let data = small_data(EventClass::Traffic, 5, 0);
    let mut t = Trainer::new(&spec(Variant::Lsgan, &data), &quick_config(0)).unwrap();
    assert_eq!(t.train_epoch(&data).unwrap_err().exit_code(), 2);
    let bad = TrainConfig { lr_generator: 0.0, ..TrainConfig::default() };
    assert_eq!(Trainer::new(&spec(Variant::Lsgan, &data), &bad).err().unwrap().exit_code(), 2);
    let other = small_data(EventClass::Traffic, 9, 0);
    let wrong = GanSpec::new(Variant::Lsgan, (33, 15)).with_widths(2, 2);
    let mut t = Trainer::new(&wrong, &quick_config(0)).unwrap();
    assert_eq!(t.train_epoch(&other).unwrap_err().exit_code(), 2);
}

#[test]
fn exploding_rates_surface_as_numerical_failures() {
    let data = small_data(EventClass::Hammer, 16, 3);
    let cfg = TrainConfig { lr_generator: 1e200, lr_discriminator: 1e200, batch_size: 8, ..TrainConfig::default() };
    let mut t = Trainer::new(&spec(Variant::Lsgan, &data), &cfg).unwrap();
    let err = t.fit(&data, 20, None, |_, _| Ok(())).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    assert!(err.to_string().contains("epoch"));
}

/// The floor separates genuinely distinct spectrogram batches from a single
/// spectrogram repeated with small perturbations, across seeds and classes.
#[test]
fn collapse_floor_separates_real_batches_from_repeated_samples() {
    for seed in 0..20u64 {
        let class = EventClass::ALL[seed as usize % 4];
        let data = small_data(class, 8, seed);
        let real = monitor_collapse(&[], data.samples(), COLLAPSE_FLOOR).unwrap();
        assert!(!real.collapsed, "seed {seed} {class}: {}", real.mean_pairwise_distance);
        assert!(real.mean_pairwise_distance > 2.0 * COLLAPSE_FLOOR, "seed {seed} {class}: {}", real.mean_pairwise_distance);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = &data.samples()[0];
        let copies: Vec<Tensor> = (0..8)
            .map(|_| base.add(&Tensor::from_fn(base.shape(), |_| rng.random_range(-0.01..0.01))).unwrap())
            .collect();
        let fake = monitor_collapse(&[], &copies, COLLAPSE_FLOOR).unwrap();
        assert!(fake.collapsed, "seed {seed}: {}", fake.mean_pairwise_distance);
    }
}

#[test]
fn collapse_trends_follow_the_loss_history() {
    let history: Vec<EpochRecord> = (1..=30)
        .map(|e| EpochRecord { epoch: e, loss_d: 2.0 * e as f64, loss_g: -(e as f64), gp: 0.0, lr_g: 1e-4, lr_d: 1e-4, tte_seconds: 0.1 })
        .collect();
    let batch = vec![Tensor::zeros(&[3, 2]), Tensor::ones(&[3, 2])];
    let r = monitor_collapse(&history, &batch, COLLAPSE_FLOOR).unwrap();
    assert!((r.loss_d_trend - 2.0).abs() < 1e-12);
    assert!((r.loss_g_trend + 1.0).abs() < 1e-12);
    assert!((r.mean_pairwise_distance - 1.0).abs() < 1e-12);
}
