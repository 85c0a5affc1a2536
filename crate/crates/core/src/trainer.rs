//! Adversarial training loop, checkpoints, sampling and collapse checks.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{grad_values, Var};
use crate::dataset::{read_csv, write_csv, Split};
use crate::error::{Error, Result};
use crate::losses::{critic_loss, generator_loss, gradient_penalty, GpConfig};
use crate::models::{sample_latent, Discriminator, GanSpec, Generator, LossFamily, Variant};
use crate::nn::{Mode, Store};
use crate::optim::{Nadam, NadamConfig, PlateauConfig, PlateauScheduler, PlateauSignal};
use crate::stft::{load_spectrogram, save_spectrogram, FeatureRecord, Scale, SpectrogramTensor, StftParams, UnitMap};
use crate::synthetic::{mix_seed, EventClass};
use crate::tensor::Tensor;

/// Default RMS pairwise distance below which a batch counts as collapsed.
pub const COLLAPSE_FLOOR: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_decay_factor: f64,
    pub lr_patience: usize,
    /// Moving-average window of the plateau signal.
    pub lr_window: usize,
    pub min_lr: f64,
    /// Defaults to the critic estimate for Wasserstein variants and the
    /// generator loss otherwise.
    pub plateau_signal: Option<PlateauSignal>,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Defaults to 5 for Wasserstein variants and 1 otherwise.
    pub n_critic: Option<usize>,
    pub lambda_gp: f64,
    pub dropout: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub nadam: NadamConfig,
    pub preview_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_generator: 2e-5,
            lr_discriminator: 2e-6,
            lr_decay_factor: 0.15,
            lr_patience: 5,
            lr_window: 5,
            min_lr: 0.0,
            plateau_signal: None,
            batch_size: 16,
            max_epochs: 2000,
            n_critic: None,
            lambda_gp: 12.0,
            dropout: 0.2,
            seed: 0,
            checkpoint_every: 100,
            nadam: NadamConfig::default(),
            preview_count: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lr_generator) || !positive(self.lr_discriminator) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.checkpoint_every == 0 {
            return Err(Error::config("batch_size, max_epochs and checkpoint_every must be at least 1"));
        }
        if self.n_critic == Some(0) {
            return Err(Error::config("n_critic must be at least 1"));
        }
        if !positive(self.lambda_gp) {
            return Err(Error::config("lambda_gp must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.plateau().validate()
    }

    pub fn plateau(&self) -> PlateauConfig {
        PlateauConfig {
            factor: self.lr_decay_factor,
            patience: self.lr_patience,
            window: self.lr_window,
            min_lr: self.min_lr,
        }
    }

    pub fn n_critic_for(&self, family: LossFamily) -> usize {
        self.n_critic.unwrap_or(family.default_n_critic())
    }

    pub fn plateau_signal_for(&self, family: LossFamily) -> PlateauSignal {
        self.plateau_signal.unwrap_or(match family {
            LossFamily::WassersteinGp => PlateauSignal::CriticEstimate,
            _ => PlateauSignal::GeneratorLoss,
        })
    }
}

/// Spectrograms keyed by id that remember which entries were read.
#[derive(Debug, Default)]
pub struct FeatureSet {
    records: Vec<FeatureRecord>,
    values: Vec<SpectrogramTensor>,
    accessed: RefCell<BTreeSet<String>>,
}

pub const FEATURE_MANIFEST: &str = "features.csv";

fn feature_file(record: &FeatureRecord) -> String {
    format!("{}_w{}.stt", record.id, record.window_size)
}

impl FeatureSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: FeatureRecord, spec: SpectrogramTensor) -> Result<()> {
        if spec.shape() != (record.freq_bins, record.time_frames) {
            return Err(Error::shape(format!(
                "record {} declares ({}, {}) but tensor is {:?}",
                record.id,
                record.freq_bins,
                record.time_frames,
                spec.shape()
            )));
        }
        self.records.push(record);
        self.values.push(spec);
        Ok(())
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Reads one spectrogram, logging the access.
    pub fn get(&self, id: &str, window_size: usize) -> Option<&SpectrogramTensor> {
        let i = self.records.iter().position(|r| r.id == id && r.window_size == window_size)?;
        self.accessed.borrow_mut().insert(id.to_string());
        Some(&self.values[i])
    }

    pub fn accessed(&self) -> BTreeSet<String> {
        self.accessed.borrow().clone()
    }

    pub fn select(&self, class: EventClass, window_size: usize, split: Split) -> Vec<&FeatureRecord> {
        self.records
            .iter()
            .filter(|r| r.class == class && r.window_size == window_size && r.split == split)
            .collect()
    }

    /// Writes a manifest plus one tensor file per entry into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut rows = Vec::with_capacity(self.records.len());
        for (r, v) in self.records.iter().zip(&self.values) {
            let file = feature_file(r);
            save_spectrogram(&dir.join(&file), v)?;
            rows.push(r.clone());
        }
        write_csv(&dir.join(FEATURE_MANIFEST), &rows)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let records: Vec<FeatureRecord> = read_csv(&dir.join(FEATURE_MANIFEST))?;
        let mut set = Self::new();
        for r in records {
            let spec = load_spectrogram(&dir.join(feature_file(&r)), &r)?;
            set.push(r, spec)?;
        }
        Ok(set)
    }
}

/// Training spectrograms of one shape, on the unit scale.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub shape: (usize, usize),
    pub window_size: usize,
    pub unit_map: Option<UnitMap>,
    samples: Vec<Tensor>,
}

impl TrainingData {
    pub fn new(specs: &[SpectrogramTensor]) -> Result<Self> {
        let first = specs.first().ok_or_else(|| Error::config("training data is empty"))?;
        let shape = first.shape();
        for s in specs {
            if s.shape() != shape {
                return Err(Error::config(format!("mixed spectrogram shapes {:?} and {:?}", shape, s.shape())));
            }
            if s.scale != Scale::NormalizedUnit {
                return Err(Error::config("training spectrograms must be on the normalized unit scale"));
            }
        }
        let maps: Vec<UnitMap> = specs.iter().filter_map(|s| s.unit_map).collect();
        let unit_map = (!maps.is_empty()).then(|| UnitMap {
            floor_db: maps[0].floor_db,
            max_db: maps.iter().map(|m| m.max_db).sum::<f64>() / maps.len() as f64,
        });
        Ok(Self {
            shape,
            window_size: first.params.window_size,
            unit_map,
            samples: specs.iter().map(|s| s.values.clone()).collect(),
        })
    }

    /// The training split of one class at one window size. Only training
    /// entries are read from `set`.
    pub fn from_features(set: &FeatureSet, class: EventClass, window_size: usize) -> Result<Self> {
        let ids: Vec<String> = set.select(class, window_size, Split::Train).iter().map(|r| r.id.clone()).collect();
        if ids.is_empty() {
            return Err(Error::config(format!("no training spectrograms for {class} at window {window_size}")));
        }
        let specs: Vec<SpectrogramTensor> = ids
            .iter()
            .map(|id| set.get(id, window_size).cloned().expect("selected id is present"))
            .collect();
        Self::new(&specs)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Tensor] {
        &self.samples
    }

    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.samples.len() / batch_size
    }

    fn batch(&self, idx: &[usize]) -> Result<Tensor> {
        let (f, t) = self.shape;
        let parts: Vec<&Tensor> = idx.iter().map(|&i| &self.samples[i]).collect();
        Tensor::stack(&parts)?.into_reshape(&[idx.len(), 1, f, t])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub gp: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub tte_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub network: String,
    pub kind: String,
    pub name: String,
    pub shape: Vec<usize>,
}

/// Everything besides tensors needed to continue a run exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub opt_g_step: u64,
    pub opt_g_mu_product: f64,
    pub opt_d_step: u64,
    pub opt_d_mu_product: f64,
    pub scheduler: PlateauScheduler,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variant: Variant,
    pub target_shape: (usize, usize),
    pub epoch: usize,
    pub seed: u64,
    pub layers: Vec<LayerEntry>,
    pub spec: GanSpec,
    pub train: TrainConfig,
    pub window_size: Option<usize>,
    pub unit_map: Option<UnitMap>,
    pub state: TrainState,
}

pub const CHECKPOINT_META: &str = "metadata.json";

const TENSOR_FILES: [&str; 8] = [
    "generator.params.sts",
    "generator.buffers.sts",
    "discriminator.params.sts",
    "discriminator.buffers.sts",
    "nadam_g.m.sts",
    "nadam_g.v.sts",
    "nadam_d.m.sts",
    "nadam_d.v.sts",
];

fn layer_entries(network: &str, kind: &str, store: &Store) -> Vec<LayerEntry> {
    store
        .manifest()
        .into_iter()
        .map(|(name, shape)| LayerEntry { network: network.into(), kind: kind.into(), name, shape })
        .collect()
}

pub struct Trainer {
    spec: GanSpec,
    cfg: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    opt_g: Nadam,
    opt_d: Nadam,
    scheduler: PlateauScheduler,
    lr_g: f64,
    lr_d: f64,
    rng: ChaCha8Rng,
    history: Vec<EpochRecord>,
    window_size: Option<usize>,
    unit_map: Option<UnitMap>,
}

struct StepLosses {
    loss_d: f64,
    gp: f64,
    estimate: f64,
}

impl Trainer {
    pub fn new(spec: &GanSpec, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = GanSpec { dropout: cfg.dropout, ..spec.clone() };
        let (generator, discriminator) = spec.build(cfg.seed)?;
        Ok(Self {
            opt_g: Nadam::new(&generator.params, cfg.nadam),
            opt_d: Nadam::new(&discriminator.params, cfg.nadam),
            scheduler: PlateauScheduler::new(cfg.plateau()),
            lr_g: cfg.lr_generator,
            lr_d: cfg.lr_discriminator,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x7a)),
            history: Vec::new(),
            window_size: None,
            unit_map: None,
            spec,
            cfg: cfg.clone(),
            generator,
            discriminator,
        })
    }

    pub fn spec(&self) -> &GanSpec {
        &self.spec
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn learning_rates(&self) -> (f64, f64) {
        (self.lr_g, self.lr_d)
    }

    fn critic_step(&mut self, real: &Tensor) -> Result<StepLosses> {
        let b = real.shape()[0];
        let family = self.spec.loss_family();
        let z = Var::constant(sample_latent(b, self.generator.latent_dim(), &mut self.rng));
        let g_const = self.generator.params.constants();
        let fake = self.generator.forward(&g_const, &z, Mode::Train, &mut self.rng)?.value().clone();
        let leaves = self.discriminator.params.leaves();
        let w = self.discriminator.weights(&leaves, Mode::Train, &mut self.rng)?;
        let s_real = self.discriminator.score(&w, &Var::constant(real.clone()), Mode::Train, &mut self.rng)?;
        let s_fake = self.discriminator.score(&w, &Var::constant(fake.clone()), Mode::Train, &mut self.rng)?;
        let base = critic_loss(family, &s_real, &s_fake)?;
        let estimate = base.value().item();
        let (loss, gp) = if family == LossFamily::WassersteinGp {
            let eps: Vec<f64> = (0..b).map(|_| self.rng.random::<f64>()).collect();
            let disc = &mut self.discriminator;
            let rng = &mut self.rng;
            let pen = gradient_penalty(
                |x| disc.score(&w, x, Mode::Train, rng),
                real,
                &fake,
                &eps,
                GpConfig { lambda: self.cfg.lambda_gp },
            )?;
            let gp = pen.loss.value().item();
            (base.add(&pen.loss)?, gp)
        } else {
            (base, 0.0)
        };
        let refs: Vec<&Var> = leaves.iter().collect();
        let grads = grad_values(&loss, &refs)?;
        self.opt_d.update(&mut self.discriminator.params, &grads, self.lr_d)?;
        Ok(StepLosses { loss_d: loss.value().item(), gp, estimate })
    }

    fn generator_step(&mut self, b: usize) -> Result<f64> {
        let family = self.spec.loss_family();
        let z = Var::constant(sample_latent(b, self.generator.latent_dim(), &mut self.rng));
        let leaves = self.generator.params.leaves();
        let fake = self.generator.forward(&leaves, &z, Mode::Train, &mut self.rng)?;
        let d_const = self.discriminator.params.constants();
        let w = self.discriminator.weights(&d_const, Mode::Train, &mut self.rng)?;
        let scores = self.discriminator.score(&w, &fake, Mode::Train, &mut self.rng)?;
        let loss = generator_loss(family, &scores)?;
        let refs: Vec<&Var> = leaves.iter().collect();
        let grads = grad_values(&loss, &refs)?;
        self.opt_g.update(&mut self.generator.params, &grads, self.lr_g)?;
        Ok(loss.value().item())
    }

    fn check_data(&mut self, data: &TrainingData) -> Result<usize> {
        if data.shape != self.spec.target_shape {
            return Err(Error::config(format!(
                "data shape {:?} differs from model target {:?}",
                data.shape, self.spec.target_shape
            )));
        }
        let nb = data.batches_per_epoch(self.cfg.batch_size);
        if nb == 0 {
            return Err(Error::config(format!(
                "{} spectrograms cannot fill one batch of {}",
                data.len(),
                self.cfg.batch_size
            )));
        }
        self.window_size.get_or_insert(data.window_size);
        if self.unit_map.is_none() {
            self.unit_map = data.unit_map;
        }
        Ok(nb)
    }

    /// One pass over `data`; the trailing partial batch is dropped.
    pub fn train_epoch(&mut self, data: &TrainingData) -> Result<EpochRecord> {
        let nb = self.check_data(data)?;
        let epoch = self.epoch() + 1;
        let start = Instant::now();
        let b = self.cfg.batch_size;
        let n_critic = self.cfg.n_critic_for(self.spec.loss_family());
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut sum_d, mut sum_g, mut sum_gp, mut sum_est) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks_exact(b).take(nb) {
            let real = data.batch(chunk)?;
            let mut last = None;
            for _ in 0..n_critic {
                last = Some(self.critic_step(&real)?);
            }
            let d = last.expect("at least one critic step");
            let g = self.generator_step(b)?;
            for (name, v) in [("loss_D", d.loss_d), ("loss_G", g), ("gradient penalty", d.gp)] {
                if !v.is_finite() {
                    return Err(Error::numerical(format!("epoch {epoch}: {name} is not finite ({v})")));
                }
            }
            sum_d += d.loss_d;
            sum_g += g;
            sum_gp += d.gp;
            sum_est += d.estimate;
        }
        let n = nb as f64;
        let (loss_d, loss_g, gp) = (sum_d / n, sum_g / n, sum_gp / n);
        let monitored = match self.cfg.plateau_signal_for(self.spec.loss_family()) {
            PlateauSignal::CriticEstimate => (sum_est / n).abs(),
            PlateauSignal::GeneratorLoss => loss_g,
        };
        let mut lrs = [self.lr_g, self.lr_d];
        self.scheduler.observe(monitored, &mut lrs);
        [self.lr_g, self.lr_d] = lrs;
        let rec = EpochRecord {
            epoch,
            loss_d,
            loss_g,
            gp,
            lr_g: self.lr_g,
            lr_d: self.lr_d,
            tte_seconds: start.elapsed().as_secs_f64(),
        };
        self.history.push(rec.clone());
        Ok(rec)
    }

    /// Trains until `until_epoch`, checkpointing into `run` at the configured
    /// cadence and at the end. `hook` runs after every epoch.
    pub fn fit(
        &mut self,
        data: &TrainingData,
        until_epoch: usize,
        run: Option<&RunDir>,
        mut hook: impl FnMut(&mut Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        while self.epoch() < until_epoch {
            let rec = self.train_epoch(data)?;
            hook(self, &rec)?;
            if let Some(run) = run {
                run.write_losses(&self.history)?;
                if rec.epoch % self.cfg.checkpoint_every == 0 || rec.epoch == until_epoch {
                    self.save_checkpoint(&run.checkpoint_path(rec.epoch))?;
                }
            }
        }
        if let Some(run) = run {
            let previews = self.sample(self.cfg.preview_count, self.cfg.seed)?;
            run.write_previews(&previews)?;
        }
        Ok(())
    }

    /// Draws `n` spectrograms in inference mode without touching the
    /// training random stream.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<SpectrogramTensor>> {
        sample_spectrograms(&mut self.generator.clone(), n, seed, self.window_size, self.unit_map)
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stores = [
            &self.generator.params,
            &self.generator.buffers,
            &self.discriminator.params,
            &self.discriminator.buffers,
            &self.opt_g.m,
            &self.opt_g.v,
            &self.opt_d.m,
            &self.opt_d.v,
        ];
        for (file, store) in TENSOR_FILES.iter().zip(stores) {
            store.save(&dir.join(file))?;
        }
        let mut layers = layer_entries("generator", "param", &self.generator.params);
        layers.extend(layer_entries("generator", "buffer", &self.generator.buffers));
        layers.extend(layer_entries("discriminator", "param", &self.discriminator.params));
        layers.extend(layer_entries("discriminator", "buffer", &self.discriminator.buffers));
        let meta = CheckpointMeta {
            variant: self.spec.variant,
            target_shape: self.spec.target_shape,
            epoch: self.epoch(),
            seed: self.cfg.seed,
            layers,
            spec: self.spec.clone(),
            train: self.cfg.clone(),
            window_size: self.window_size,
            unit_map: self.unit_map,
            state: TrainState {
                epoch: self.epoch(),
                lr_g: self.lr_g,
                lr_d: self.lr_d,
                opt_g_step: self.opt_g.step,
                opt_g_mu_product: self.opt_g.mu_product,
                opt_d_step: self.opt_d.step,
                opt_d_mu_product: self.opt_d.mu_product,
                scheduler: self.scheduler.clone(),
                rng: self.rng.clone(),
                history: self.history.clone(),
            },
        };
        let path = dir.join(CHECKPOINT_META);
        let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::load(&path, e))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Restores a trainer that continues exactly where the checkpoint left off.
    pub fn from_checkpoint(dir: &Path) -> Result<Self> {
        let meta = read_meta(dir)?;
        let mut t = Trainer::new(&meta.spec, &meta.train)?;
        let mut stores = Vec::with_capacity(TENSOR_FILES.len());
        for file in TENSOR_FILES {
            stores.push(Store::load(&dir.join(file))?);
        }
        let targets = [
            &mut t.generator.params,
            &mut t.generator.buffers,
            &mut t.discriminator.params,
            &mut t.discriminator.buffers,
            &mut t.opt_g.m,
            &mut t.opt_g.v,
            &mut t.opt_d.m,
            &mut t.opt_d.v,
        ];
        for ((target, loaded), file) in targets.into_iter().zip(&stores).zip(TENSOR_FILES) {
            target.assign_from(loaded).map_err(|e| Error::load(dir.join(file), e))?;
        }
        let s = meta.state;
        if s.history.len() != s.epoch {
            return Err(Error::load(dir, "loss history length disagrees with the epoch counter"));
        }
        t.lr_g = s.lr_g;
        t.lr_d = s.lr_d;
        t.opt_g.step = s.opt_g_step;
        t.opt_g.mu_product = s.opt_g_mu_product;
        t.opt_d.step = s.opt_d_step;
        t.opt_d.mu_product = s.opt_d_mu_product;
        t.scheduler = s.scheduler;
        t.rng = s.rng;
        t.history = s.history;
        t.window_size = meta.window_size;
        t.unit_map = meta.unit_map;
        Ok(t)
    }
}

fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(CHECKPOINT_META);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::load(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::load(&path, e))
}

fn sample_spectrograms(
    g: &mut Generator,
    n: usize,
    seed: u64,
    window_size: Option<usize>,
    unit_map: Option<UnitMap>,
) -> Result<Vec<SpectrogramTensor>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let (f, t) = g.target_shape();
    let params = StftParams::new(window_size.unwrap_or(2 * (f.max(2) - 1)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = g.sample(n, &mut rng)?;
    batch
        .into_reshape(&[n, f, t])?
        .unstack()
        .into_iter()
        .map(|values| Ok(SpectrogramTensor { values, scale: Scale::NormalizedUnit, params, unit_map }))
        .collect()
}

/// A checkpoint on disk, loaded lazily for sampling.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub dir: PathBuf,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self { dir: dir.to_path_buf(), meta: read_meta(dir)? })
    }

    pub fn generator(&self) -> Result<Generator> {
        let mut g = Generator::new(&self.meta.spec.generator_config(), 0)?;
        for (target, file) in [(&mut g.params, TENSOR_FILES[0]), (&mut g.buffers, TENSOR_FILES[1])] {
            let path = self.dir.join(file);
            let stored = Store::load(&path)?;
            target.assign_from(&stored).map_err(|e| Error::load(&path, e))?;
        }
        Ok(g)
    }
}

/// `n` spectrograms from the generator in `checkpoint`, seeded by `seed`.
pub fn generate(checkpoint: &Path, n: usize, seed: u64) -> Result<Vec<SpectrogramTensor>> {
    let ck = Checkpoint::open(checkpoint)?;
    let mut g = ck.generator()?;
    sample_spectrograms(&mut g, n, seed, ck.meta.window_size, ck.meta.unit_map)
}

/// Layout of one training run on disk.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

/// The config snapshot stored at the root of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: GanSpec,
    pub train: TrainConfig,
}

impl RunDir {
    pub const LOSSES: &'static str = "losses.csv";

    pub fn create(root: &Path, spec: &GanSpec, cfg: &TrainConfig) -> Result<Self> {
        for sub in ["checkpoints", "previews"] {
            let d = root.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let path = root.join("config.toml");
        let text = toml::to_string(&RunConfig { spec: spec.clone(), train: cfg.clone() }).map_err(|e| Error::config(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("epoch_{epoch:05}"))
    }

    /// The newest checkpoint directory, if any.
    pub fn latest_checkpoint(&self) -> Option<PathBuf> {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(self.root.join("checkpoints"))
            .ok()?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(CHECKPOINT_META).is_file())
            .collect();
        dirs.sort();
        dirs.pop()
    }

    pub fn write_losses(&self, history: &[EpochRecord]) -> Result<()> {
        write_csv(&self.root.join(Self::LOSSES), history)
    }

    pub fn write_previews(&self, previews: &[SpectrogramTensor]) -> Result<()> {
        for (i, p) in previews.iter().enumerate() {
            save_spectrogram(&self.root.join("previews").join(format!("preview_{i:02}.stt")), p)?;
        }
        Ok(())
    }
}

/// Builds a trainer and runs it for `cfg.max_epochs`.
pub fn train(spec: &GanSpec, data: &TrainingData, cfg: &TrainConfig, run_root: Option<&Path>) -> Result<Trainer> {
    let mut t = Trainer::new(spec, cfg)?;
    let run = run_root.map(|r| RunDir::create(r, &t.spec, cfg)).transpose()?;
    t.fit(data, cfg.max_epochs, run.as_ref(), |_, _| Ok(()))?;
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollapseReport {
    /// Mean RMS distance between distinct samples.
    pub mean_pairwise_distance: f64,
    pub min_pairwise_distance: f64,
    pub collapsed: bool,
    /// Least-squares slopes per epoch over the recent history.
    pub loss_d_trend: f64,
    pub loss_g_trend: f64,
}

fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Pairwise-distance scan of a generated batch plus loss trends over the
/// last 20 epochs.
pub fn monitor_collapse(history: &[EpochRecord], batch: &[Tensor], floor: f64) -> Result<CollapseReport> {
    if batch.len() < 2 {
        return Err(Error::input("collapse check needs at least two samples"));
    }
    let n = batch[0].len();
    if batch.iter().any(|t| t.len() != n) {
        return Err(Error::shape("collapse check needs samples of equal size"));
    }
    let (mut sum, mut min, mut pairs) = (0.0, f64::INFINITY, 0usize);
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            let d2: f64 = batch[i].data().iter().zip(batch[j].data()).map(|(a, b)| (a - b) * (a - b)).sum();
            let d = (d2 / n as f64).sqrt();
            sum += d;
            min = min.min(d);
            pairs += 1;
        }
    }
    let mean = sum / pairs as f64;
    let recent = &history[history.len().saturating_sub(20)..];
    Ok(CollapseReport {
        mean_pairwise_distance: mean,
        min_pairwise_distance: min,
        collapsed: mean < floor,
        loss_d_trend: slope(&recent.iter().map(|r| r.loss_d).collect::<Vec<_>>()),
        loss_g_trend: slope(&recent.iter().map(|r| r.loss_g).collect::<Vec<_>>()),
    })
}
