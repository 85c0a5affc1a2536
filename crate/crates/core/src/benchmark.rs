//! Experiment orchestration: profiles and declarative configs, corpus and
//! feature preparation, the variant x class x window matrix, the ablation
//! study and the written report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    channel_tags, detect_onsets, extract_events, normalize, read_csv, read_wav, split, write_csv, write_wav,
    EventSignal, ManifestRecord, Split, SplitManifest,
};
use crate::error::{Error, Result};
use crate::figure::{render_grid, AxisExtent, Panel};
use crate::metrics::{evaluate, extractor_by_id, MetricReport, PairingPolicy, DEFAULT_EXTRACTOR};
use crate::models::{GanSpec, Variant};
use crate::stft::{featurize, FeatureRecord, Scale, StftParams, DEFAULT_FLOOR_DB};
use crate::synthetic::{default_class_counts, mix_seed, synthesize_corpus, EventClass, EVENT_LEN, SAMPLE_RATE};
use crate::tensor::Tensor;
use crate::trainer::{generate, FeatureSet, RunDir, TrainConfig, Trainer, TrainingData};

/// Window sizes the matrix and ablation may use.
pub const MATRIX_WINDOWS: [usize; 2] = [128, 256];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small corpus and short runs; the whole matrix fits on one CPU.
    #[default]
    Desk,
    Full,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(Error::config(format!("unknown profile '{s}' (expected desk or full)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub class_counts: BTreeMap<EventClass, usize>,
    pub holdout_fraction: f64,
    pub floor_db: f64,
    /// Absolute amplitude that marks an event onset in `extract`.
    pub onset_threshold: f64,
    /// Samples kept before a detected onset.
    pub pre_roll: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub g_width: usize,
    pub d_width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_generated: usize,
    pub pairing: PairingPolicy,
    pub extractor: String,
    /// Generated panels per report figure.
    pub figure_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentMatrix {
    pub variants: Vec<Variant>,
    pub classes: Vec<EventClass>,
    pub window_sizes: Vec<usize>,
    /// Empty means the experiment seed alone.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl Default for ExperimentMatrix {
    fn default() -> Self {
        Self {
            variants: Variant::BENCHMARK.to_vec(),
            classes: EventClass::ALL.to_vec(),
            window_sizes: MATRIX_WINDOWS.to_vec(),
            seeds: Vec::new(),
        }
    }
}

/// One trained model of the matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: Variant,
    pub class: EventClass,
    pub window_size: usize,
    pub seed: u64,
}

impl Cell {
    pub fn key(&self) -> String {
        format!("{}_{}_w{}_s{}", self.variant, self.class, self.window_size, self.seed)
    }
}

impl ExperimentMatrix {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() || self.classes.is_empty() || self.window_sizes.is_empty() {
            return Err(Error::config("matrix needs at least one variant, class and window size"));
        }
        if let Some(w) = self.window_sizes.iter().find(|w| !MATRIX_WINDOWS.contains(w)) {
            return Err(Error::config(format!("matrix window {w} is not one of {MATRIX_WINDOWS:?}")));
        }
        Ok(())
    }

    pub fn cells(&self, default_seed: u64) -> Vec<Cell> {
        let seeds = if self.seeds.is_empty() { vec![default_seed] } else { self.seeds.clone() };
        let mut out = Vec::new();
        for &seed in &seeds {
            for &window_size in &self.window_sizes {
                for &class in &self.classes {
                    for &variant in &self.variants {
                        out.push(Cell { variant, class, window_size, seed });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationPlan {
    pub class: EventClass,
    pub window_size: usize,
}

impl Default for AblationPlan {
    fn default() -> Self {
        Self { class: EventClass::Breakage, window_size: 128 }
    }
}

impl AblationPlan {
    /// Row labels and the variant trained for each. Removing both blocks
    /// leaves the Wasserstein baseline.
    pub fn entries(&self) -> [(&'static str, Variant); 4] {
        [
            ("Full Model", Variant::from_blocks(true, true)),
            ("No DRB", Variant::from_blocks(false, true)),
            ("No BiGRU", Variant::from_blocks(true, false)),
            ("No DRB & BiGRU", Variant::from_blocks(false, false)),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Seeds corpus synthesis, the split and training unless a matrix seed
    /// list says otherwise.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub matrix: ExperimentMatrix,
    pub ablation: AblationPlan,
}

/// Learning rates of the desk profile; see the README for how they were
/// chosen. The floor equals the base rate, so desk runs train at a constant
/// rate.
pub const DESK_LR_GENERATOR: f64 = 1e-3;
pub const DESK_LR_DISCRIMINATOR: f64 = 1e-3;
pub const DESK_MIN_LR: f64 = 1e-3;

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let corpus = CorpusConfig {
            class_counts: default_class_counts(),
            holdout_fraction: 0.15,
            floor_db: DEFAULT_FLOOR_DB,
            onset_threshold: 0.05,
            pre_roll: 32,
        };
        let eval = EvalConfig {
            n_generated: 200,
            pairing: PairingPolicy::AllPairs,
            extractor: DEFAULT_EXTRACTOR.to_string(),
            figure_samples: 4,
        };
        match profile {
            Profile::Full => Self {
                profile,
                seed: 0,
                corpus,
                model: ModelConfig { g_width: GanSpec::DEFAULT_G_WIDTH, d_width: GanSpec::DEFAULT_D_WIDTH },
                train: TrainConfig::default(),
                eval,
                matrix: ExperimentMatrix::default(),
                ablation: AblationPlan::default(),
            },
            Profile::Desk => Self {
                profile,
                seed: 0,
                corpus: CorpusConfig { class_counts: EventClass::ALL.iter().map(|&c| (c, 64)).collect(), ..corpus },
                model: ModelConfig { g_width: 4, d_width: 8 },
                train: TrainConfig {
                    lr_generator: DESK_LR_GENERATOR,
                    lr_discriminator: DESK_LR_DISCRIMINATOR,
                    min_lr: DESK_MIN_LR,
                    max_epochs: 50,
                    checkpoint_every: 10,
                    ..TrainConfig::default()
                },
                eval,
                matrix: ExperimentMatrix::default(),
                ablation: AblationPlan::default(),
            },
        }
    }

    /// Profile defaults overlaid with a TOML document, then the explicit
    /// overrides. A profile given on the command line beats one in the file.
    pub fn from_toml(text: &str, profile: Option<Profile>, seed: Option<u64>) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        let file_profile = match doc.get("profile") {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| Error::config("profile must be a string"))?
                    .parse::<Profile>()?,
            ),
            None => None,
        };
        let profile = profile.or(file_profile).unwrap_or_default();
        let mut base = toml::Table::try_from(Self::for_profile(profile)).map_err(|e| Error::config(e.to_string()))?;
        merge(&mut base, doc);
        base.insert("profile".into(), toml::Value::String(profile.name().into()));
        let mut cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, profile: Option<Profile>, seed: Option<u64>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, profile, seed)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.matrix.validate()?;
        if !MATRIX_WINDOWS.contains(&self.ablation.window_size) {
            return Err(Error::config(format!("ablation window {} is not one of {MATRIX_WINDOWS:?}", self.ablation.window_size)));
        }
        if self.corpus.class_counts.is_empty() {
            return Err(Error::config("corpus needs at least one class"));
        }
        if self.model.g_width == 0 || self.model.d_width == 0 {
            return Err(Error::config("model widths must be positive"));
        }
        if self.eval.n_generated == 0 {
            return Err(Error::config("n_generated must be at least 1"));
        }
        extractor_by_id(&self.eval.extractor)?;
        Ok(())
    }

    /// Every window size some experiment needs features for.
    pub fn window_sizes(&self) -> BTreeSet<usize> {
        let mut w: BTreeSet<usize> = self.matrix.window_sizes.iter().copied().collect();
        w.insert(self.ablation.window_size);
        w
    }

    pub fn gan_spec(&self, variant: Variant, shape: (usize, usize)) -> GanSpec {
        GanSpec::new(variant, shape).with_widths(self.model.g_width, self.model.d_width)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }
}

/// Tables that a config document replaces wholesale instead of merging.
const REPLACED_TABLES: [&str; 1] = ["class_counts"];

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !REPLACED_TABLES.contains(&k.as_str()) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Directory layout shared by all commands.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.corpus_dir().join("manifest.csv")
    }

    pub fn split_path(&self) -> PathBuf {
        self.corpus_dir().join("split.json")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn ablation_dir(&self) -> PathBuf {
        self.root.join("ablation")
    }

    pub fn results_path(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn ablation_path(&self) -> PathBuf {
        self.root.join("ablation.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn cell_dir(&self, cell: &Cell) -> PathBuf {
        self.runs_dir().join(cell.key())
    }
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Splits `events`, writes one WAV per event plus the manifest and the
/// split, replacing any previous corpus.
pub fn write_corpus(ws: &Workspace, events: &[EventSignal], cfg: &ExperimentConfig) -> Result<SplitManifest> {
    let manifest = split(events, cfg.corpus.holdout_fraction, cfg.seed)?;
    let wav_dir = ws.corpus_dir().join("wav");
    if wav_dir.exists() {
        std::fs::remove_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    }
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut rows = Vec::with_capacity(events.len());
    for ev in events {
        let rel = format!("wav/{}.wav", file_stem(&ev.source_id));
        write_wav(&ws.corpus_dir().join(&rel), &ev.samples, ev.sample_rate)?;
        rows.push(ManifestRecord {
            id: ev.source_id.clone(),
            class: ev.event_class,
            channel: ev.channel,
            source_path: rel,
            split: manifest.split_of(&ev.source_id).expect("every event is assigned"),
        });
    }
    write_csv(&ws.manifest_path(), &rows)?;
    let path = ws.split_path();
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::load(&path, e))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Synthetic corpus with the configured class counts.
pub fn synth_data(ws: &Workspace, cfg: &ExperimentConfig) -> Result<Vec<ManifestRecord>> {
    let events: Vec<EventSignal> = synthesize_corpus(&cfg.corpus.class_counts, cfg.seed)?
        .iter()
        .map(normalize)
        .collect::<Result<_>>()?;
    write_corpus(ws, &events, cfg)?;
    read_csv(&ws.manifest_path())
}

/// Cuts events out of labelled recordings at detected onsets.
pub fn extract(ws: &Workspace, recordings: &[(PathBuf, EventClass)], cfg: &ExperimentConfig) -> Result<Vec<ManifestRecord>> {
    let mut events = Vec::new();
    for (path, class) in recordings {
        let (channels, rate) = read_wav(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("recording");
        for (samples, tag) in channels.iter().zip(channel_tags(channels.len())) {
            let starts: Vec<usize> = detect_onsets(samples, cfg.corpus.onset_threshold, EVENT_LEN)?
                .into_iter()
                .map(|o| o.saturating_sub(cfg.corpus.pre_roll))
                .filter(|s| s + EVENT_LEN <= samples.len())
                .collect();
            let source = format!("{stem}-{tag}");
            for ev in extract_events(samples, rate, *class, tag, &source, &starts)? {
                events.push(normalize(&ev)?);
            }
        }
    }
    if events.is_empty() {
        return Err(Error::input("no events detected; lower corpus.onset_threshold"));
    }
    write_corpus(ws, &events, cfg)?;
    read_csv(&ws.manifest_path())
}

fn missing(what: &str, path: &Path, command: &str) -> Error {
    Error::config(format!("no {what} at {}; run `stftsynth {command}` first", path.display()))
}

/// The events listed in the corpus manifest.
pub fn load_corpus(ws: &Workspace) -> Result<Vec<(ManifestRecord, EventSignal)>> {
    let path = ws.manifest_path();
    if !path.is_file() {
        return Err(missing("corpus", &path, "synth-data` or `stftsynth extract"));
    }
    let rows: Vec<ManifestRecord> = read_csv(&path)?;
    rows.into_iter()
        .map(|r| {
            let wav = ws.corpus_dir().join(&r.source_path);
            let (mut ch, rate) = read_wav(&wav)?;
            if ch.len() != 1 {
                return Err(Error::load(&wav, "corpus events must be mono"));
            }
            let ev = EventSignal::new(ch.remove(0), rate, r.class, r.channel, r.id.clone())?;
            Ok((r, ev))
        })
        .collect()
}

/// Spectrograms of every corpus event at every configured window.
pub fn build_features(ws: &Workspace, cfg: &ExperimentConfig) -> Result<FeatureSet> {
    let corpus = load_corpus(ws)?;
    let events: Vec<EventSignal> = corpus.iter().map(|(_, e)| e.clone()).collect();
    let mut set = FeatureSet::new();
    for w in cfg.window_sizes() {
        let params = StftParams::new(w)?;
        for ((row, _), spec) in corpus.iter().zip(featurize(&events, params, cfg.corpus.floor_db)?) {
            let map = spec.unit_map.ok_or_else(|| Error::numerical("unit-range map missing"))?;
            let record = FeatureRecord {
                id: row.id.clone(),
                class: row.class,
                channel: row.channel,
                source_path: row.source_path.clone(),
                split: row.split,
                window_size: w,
                freq_bins: spec.freq_bins(),
                time_frames: spec.time_frames(),
                scale: Scale::NormalizedUnit,
                floor_db: map.floor_db,
                max_db: map.max_db,
                normalization: "per_spectrogram_db_to_unit".into(),
            };
            set.push(record, spec)?;
        }
    }
    let dir = ws.features_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    set.save(&dir)?;
    Ok(set)
}

pub fn load_features(ws: &Workspace) -> Result<FeatureSet> {
    let dir = ws.features_dir();
    if !dir.join(crate::trainer::FEATURE_MANIFEST).is_file() {
        return Err(missing("features", &dir, "features"));
    }
    FeatureSet::load(&dir)
}

/// Validation spectrograms for one class and window.
pub fn validation_set(set: &FeatureSet, class: EventClass, window_size: usize) -> Result<Vec<Tensor>> {
    let ids: Vec<String> = set.select(class, window_size, Split::Val).iter().map(|r| r.id.clone()).collect();
    if ids.is_empty() {
        return Err(Error::config(format!("no validation spectrograms for {class} at window {window_size}")));
    }
    Ok(ids.iter().map(|id| set.get(id, window_size).expect("selected id").values.clone()).collect())
}

/// Everything recorded about a finished cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub report: MetricReport,
    pub epochs: usize,
    /// Mean training seconds per epoch, evaluation excluded.
    pub tte_seconds: f64,
    pub generator_parameters: usize,
    pub n_train: usize,
}

pub const CELL_RESULT: &str = "result.json";

fn sample_seed(cell: &Cell) -> u64 {
    mix_seed(cell.seed, 0x5a)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::load(path, e))?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, e))
}

/// Whether a cell was trained now or taken from an earlier run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellStatus {
    Trained,
    Cached,
}

/// Trains `cell` in `dir` (resuming from its newest checkpoint), evaluates
/// it against the validation split and stores `result.json`. A directory
/// that already holds a result is left untouched.
pub fn run_cell(dir: &Path, set: &FeatureSet, cell: &Cell, cfg: &ExperimentConfig) -> Result<(CellResult, CellStatus)> {
    let result_path = dir.join(CELL_RESULT);
    if result_path.is_file() {
        return Ok((read_json(&result_path)?, CellStatus::Cached));
    }
    let data = TrainingData::from_features(set, cell.class, cell.window_size)?;
    let spec = cfg.gan_spec(cell.variant, data.shape);
    let tcfg = cfg.train_config(cell.seed);
    let run = RunDir { root: dir.to_path_buf() };
    let mut trainer = match run.latest_checkpoint() {
        Some(ck) => {
            let t = Trainer::from_checkpoint(&ck)?;
            let fresh = Trainer::new(&spec, &tcfg)?;
            if t.spec() != fresh.spec() || t.config() != fresh.config() {
                return Err(Error::config(format!(
                    "{} was trained with a different configuration; remove it to retrain",
                    dir.display()
                )));
            }
            t
        }
        None => {
            RunDir::create(dir, &spec, &tcfg)?;
            Trainer::new(&spec, &tcfg)?
        }
    };
    trainer.fit(&data, tcfg.max_epochs, Some(&run), |_, _| Ok(()))?;
    let generated: Vec<Tensor> = trainer
        .sample(cfg.eval.n_generated, sample_seed(cell))?
        .into_iter()
        .map(|s| s.values)
        .collect();
    let real = validation_set(set, cell.class, cell.window_size)?;
    let extractor = extractor_by_id(&cfg.eval.extractor)?;
    let report = evaluate(&generated, &real, cfg.eval.pairing, extractor.as_ref())?;
    let history = trainer.history();
    let result = CellResult {
        cell: *cell,
        report,
        epochs: history.len(),
        tte_seconds: history.iter().map(|r| r.tte_seconds).sum::<f64>() / history.len().max(1) as f64,
        generator_parameters: trainer.generator.num_parameters(),
        n_train: data.len(),
    };
    write_json(&result_path, &result)?;
    Ok((result, CellStatus::Trained))
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: Variant,
    pub class: EventClass,
    pub window_size: usize,
    pub metric: String,
    pub value: f64,
    pub extractor_id: String,
    pub pairing_policy: PairingPolicy,
    pub seed: u64,
}

pub const METRICS: [&str; 3] = ["ssim", "psnr", "fid"];

fn result_rows(r: &CellResult) -> Vec<ResultRow> {
    let values = [r.report.ssim, r.report.psnr, r.report.fid];
    METRICS
        .iter()
        .zip(values)
        .map(|(m, value)| ResultRow {
            variant: r.cell.variant,
            class: r.cell.class,
            window_size: r.cell.window_size,
            metric: m.to_string(),
            value,
            extractor_id: r.report.extractor_id.clone(),
            pairing_policy: r.report.pairing_policy,
            seed: r.cell.seed,
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct MatrixSummary {
    pub results: Vec<CellResult>,
    pub trained: usize,
    pub cached: usize,
}

/// Runs every cell of the configured matrix in a fixed order and rewrites
/// the results table. Finished cells are skipped, so a rerun trains nothing.
pub fn run_matrix(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    mut progress: impl FnMut(&Cell, CellStatus, &CellResult),
) -> Result<MatrixSummary> {
    cfg.validate()?;
    let set = load_features(ws)?;
    let mut summary = MatrixSummary { results: Vec::new(), trained: 0, cached: 0 };
    let mut rows = Vec::new();
    for cell in cfg.matrix.cells(cfg.seed) {
        let (res, status) = run_cell(&ws.cell_dir(&cell), &set, &cell, cfg)?;
        match status {
            CellStatus::Trained => summary.trained += 1,
            CellStatus::Cached => summary.cached += 1,
        }
        progress(&cell, status, &res);
        rows.extend(result_rows(&res));
        write_csv(&ws.results_path(), &rows)?;
        summary.results.push(res);
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub variant: Variant,
    pub generator_parameters: usize,
    pub ssim: f64,
    pub psnr: f64,
    pub fid: f64,
    pub tte_seconds: f64,
}

/// The four ablation runs on one class and window, written to
/// `ablation.csv`.
pub fn run_ablation(ws: &Workspace, cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let set = load_features(ws)?;
    let plan = &cfg.ablation;
    let mut rows = Vec::new();
    for (label, variant) in plan.entries() {
        let cell = Cell { variant, class: plan.class, window_size: plan.window_size, seed: cfg.seed };
        let (r, _) = run_cell(&ws.ablation_dir().join(cell.key()), &set, &cell, cfg)?;
        rows.push(AblationRow {
            label: label.into(),
            variant,
            generator_parameters: r.generator_parameters,
            ssim: r.report.ssim,
            psnr: r.report.psnr,
            fid: r.report.fid,
            tte_seconds: r.tte_seconds,
        });
    }
    write_csv(&ws.ablation_path(), &rows)?;
    Ok(rows)
}

fn metric_precision(metric: &str) -> usize {
    match metric {
        "psnr" => 2,
        _ => 4,
    }
}

/// A class x (variant, window) markdown table for one metric, averaged over
/// seeds, or `None` when no row carries that metric.
pub fn metric_table(rows: &[ResultRow], metric: &str) -> Option<String> {
    let rows: Vec<&ResultRow> = rows.iter().filter(|r| r.metric == metric).collect();
    if rows.is_empty() {
        return None;
    }
    let mut columns: Vec<(Variant, usize)> = rows.iter().map(|r| (r.variant, r.window_size)).collect();
    let order = |v: Variant| Variant::ALL.iter().position(|&x| x == v).unwrap_or(usize::MAX);
    columns.sort_by_key(|&(v, w)| (order(v), w));
    columns.dedup();
    let classes: BTreeSet<EventClass> = rows.iter().map(|r| r.class).collect();
    let mut cells: BTreeMap<(EventClass, Variant, usize), (f64, usize)> = BTreeMap::new();
    for r in &rows {
        let e = cells.entry((r.class, r.variant, r.window_size)).or_default();
        e.0 += r.value;
        e.1 += 1;
    }
    let prec = metric_precision(metric);
    let mut out = String::from("| class |");
    for (v, w) in &columns {
        let _ = write!(out, " {v} {w} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(columns.len()));
    out.push('\n');
    for class in classes {
        let _ = write!(out, "| {class} |");
        for &(v, w) in &columns {
            match cells.get(&(class, v, w)) {
                Some(&(sum, n)) => {
                    let _ = write!(out, " {:.*} |", prec, sum / n as f64);
                }
                None => out.push_str(" n/a |"),
            }
        }
        out.push('\n');
    }
    Some(out)
}

fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("| variant | generator parameters | SSIM | PSNR | FID | TTE (s/epoch) |\n|---|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} ({}) | {} | {:.4} | {:.2} | {:.4} | {:.3} |",
            r.label, r.variant, r.generator_parameters, r.ssim, r.psnr, r.fid, r.tte_seconds
        );
    }
    out
}

/// Physical extent of spectrogram axes.
pub fn axis_extent() -> AxisExtent {
    AxisExtent {
        freq_max_khz: SAMPLE_RATE as f64 / 2000.0,
        duration_ms: EVENT_LEN as f64 * 1000.0 / SAMPLE_RATE as f64,
    }
}

/// One real panel followed by `generated.len()` generated panels.
pub fn figure_panels(real: &Tensor, generated: &[Tensor], label: &str) -> Vec<Panel> {
    let mut panels = vec![Panel { title: "real".into(), values: real.clone() }];
    panels.extend(generated.iter().enumerate().map(|(i, g)| Panel { title: format!("{label} {}", i + 1), values: g.clone() }));
    panels
}

#[derive(Clone, Debug)]
pub struct ReportSummary {
    pub path: PathBuf,
    pub figures: Vec<PathBuf>,
    pub notices: Vec<String>,
}

/// Writes `report/report.md` with one table per metric, the ablation table
/// and a figure per trained cell.
pub fn report(ws: &Workspace, cfg: &ExperimentConfig) -> Result<ReportSummary> {
    let results_path = ws.results_path();
    if !results_path.is_file() {
        return Err(missing("results table", &results_path, "matrix"));
    }
    let rows: Vec<ResultRow> = read_csv(&results_path)?;
    if rows.is_empty() {
        return Err(Error::config(format!("{} is empty; run `stftsynth matrix` first", results_path.display())));
    }
    let dir = ws.report_dir();
    let fig_dir = dir.join("figures");
    std::fs::create_dir_all(&fig_dir).map_err(|e| Error::io(&fig_dir, e))?;
    let mut notices = Vec::new();
    let mut md = String::from("# Benchmark report\n\n");
    let _ = writeln!(
        md,
        "Profile `{}`, extractor `{}`, pairing `{}`. Values are means over seeds; SSIM is clamped to [0, 1].\n",
        cfg.profile, rows[0].extractor_id, rows[0].pairing_policy
    );
    for metric in METRICS {
        let _ = writeln!(md, "## {}\n", metric.to_uppercase());
        match metric_table(&rows, metric) {
            Some(t) => md.push_str(&t),
            None => {
                let n = format!("No {metric} results; section omitted.");
                let _ = writeln!(md, "_{n}_");
                notices.push(n);
            }
        }
        md.push('\n');
    }
    md.push_str("## Ablation\n\n");
    let ablation_path = ws.ablation_path();
    let ablation: Vec<AblationRow> = if ablation_path.is_file() { read_csv(&ablation_path)? } else { Vec::new() };
    if ablation.is_empty() {
        let n = "No ablation results; run `stftsynth ablate` to fill this section.".to_string();
        let _ = writeln!(md, "_{n}_\n");
        notices.push(n);
    } else {
        md.push_str(&ablation_table(&ablation));
        md.push('\n');
    }
    md.push_str("## Spectrograms\n\n");
    let mut figures = Vec::new();
    match load_features(ws) {
        Err(_) => {
            let n = "Features are missing, so no figures were drawn.".to_string();
            let _ = writeln!(md, "_{n}_\n");
            notices.push(n);
        }
        Ok(set) => {
            let mut seen = BTreeSet::new();
            for r in &rows {
                let cell = Cell { variant: r.variant, class: r.class, window_size: r.window_size, seed: r.seed };
                if !seen.insert(cell.key()) {
                    continue;
                }
                let Some(ck) = (RunDir { root: ws.cell_dir(&cell) }).latest_checkpoint() else {
                    continue;
                };
                let Some(real) = set.select(cell.class, cell.window_size, Split::Train).first().map(|r| r.id.clone()) else {
                    continue;
                };
                let real = set.get(&real, cell.window_size).expect("selected id").values.clone();
                let generated: Vec<Tensor> =
                    generate(&ck, cfg.eval.figure_samples, sample_seed(&cell))?.into_iter().map(|s| s.values).collect();
                let (canvas, _) = render_grid(&figure_panels(&real, &generated, "gen"), axis_extent())?;
                let name = format!("{}.png", cell.key());
                let path = fig_dir.join(&name);
                canvas.save_png(&path)?;
                let _ = writeln!(md, "### {} / {} / window {}\n\n![{}](figures/{name})\n", cell.variant, cell.class, cell.window_size, cell.key());
                figures.push(path);
            }
        }
    }
    let path = dir.join("report.md");
    std::fs::write(&path, md).map_err(|e| Error::io(&path, e))?;
    Ok(ReportSummary { path, figures, notices })
}
