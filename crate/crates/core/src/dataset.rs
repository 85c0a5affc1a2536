//! Event signals, normalization, stratified train/validation splitting and
//! the on-disk manifest and WAV formats.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthetic::{EventClass, EVENT_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Left,
    Right,
    Mono,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Left => "left",
            Channel::Right => "right",
            Channel::Mono => "mono",
        })
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(Channel::Left),
            "right" => Ok(Channel::Right),
            "mono" => Ok(Channel::Mono),
            other => Err(Error::config(format!("unknown channel '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub event_class: EventClass,
    pub channel: Channel,
    pub source_id: String,
}

impl EventSignal {
    pub fn new(
        samples: Vec<f64>,
        sample_rate: u32,
        event_class: EventClass,
        channel: Channel,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if samples.len() != EVENT_LEN {
            return Err(Error::input(format!(
                "an event has exactly {EVENT_LEN} samples, got {}",
                samples.len()
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            event_class,
            channel,
            source_id: source_id.into(),
        })
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Cuts fixed-length events out of a continuous recording.
pub fn extract_events(
    recording: &[f64],
    sample_rate: u32,
    event_class: EventClass,
    channel: Channel,
    source: &str,
    event_starts: &[usize],
) -> Result<Vec<EventSignal>> {
    event_starts
        .iter()
        .map(|&start| {
            let end = start.checked_add(EVENT_LEN).filter(|&e| e <= recording.len());
            let Some(end) = end else {
                return Err(Error::input(format!(
                    "event offset {start}: window [{start}, {}) exceeds recording length {}",
                    start.saturating_add(EVENT_LEN),
                    recording.len()
                )));
            };
            EventSignal::new(
                recording[start..end].to_vec(),
                sample_rate,
                event_class,
                channel,
                format!("{source}@{start}"),
            )
        })
        .collect()
}

/// Brute-force threshold detector. Returns the first sample of every run
/// where `|x| >= threshold`, skipping `refractory` samples after each hit.
pub fn detect_onsets(recording: &[f64], threshold: f64, refractory: usize) -> Result<Vec<usize>> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::config(format!("onset threshold must be positive, got {threshold}")));
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < recording.len() {
        if recording[i].abs() >= threshold {
            out.push(i);
            i += refractory.max(1);
        } else {
            i += 1;
        }
    }
    Ok(out)
}

/// Peak normalization to `max |x| = 1`.
pub fn normalize(event: &EventSignal) -> Result<EventSignal> {
    let peak = event.peak();
    if peak == 0.0 || !peak.is_finite() {
        return Err(Error::Degenerate(format!(
            "event '{}' has peak {peak}; cannot normalize",
            event.source_id
        )));
    }
    let mut out = event.clone();
    out.samples.iter_mut().for_each(|v| *v /= peak);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_ids: BTreeMap<EventClass, Vec<String>>,
    pub val_ids: BTreeMap<EventClass, Vec<String>>,
    pub holdout_fraction: f64,
    pub split_seed: u64,
}

impl SplitManifest {
    pub fn split_of(&self, id: &str) -> Option<Split> {
        let has = |m: &BTreeMap<EventClass, Vec<String>>| m.values().any(|v| v.iter().any(|x| x == id));
        if has(&self.train_ids) {
            Some(Split::Train)
        } else if has(&self.val_ids) {
            Some(Split::Val)
        } else {
            None
        }
    }
}

/// Validation count for one class: round-half-up of `fraction * count`.
pub fn holdout_count(count: usize, fraction: f64) -> usize {
    (fraction * count as f64 + 0.5).floor() as usize
}

/// Stratified, seeded train/validation split keyed by `source_id`.
pub fn split(corpus: &[EventSignal], holdout_fraction: f64, split_seed: u64) -> Result<SplitManifest> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::config(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    let mut seen = HashSet::new();
    let mut by_class: BTreeMap<EventClass, Vec<&str>> = BTreeMap::new();
    for ev in corpus {
        if !seen.insert(ev.source_id.as_str()) {
            return Err(Error::input(format!("duplicate event id '{}'", ev.source_id)));
        }
        by_class.entry(ev.event_class).or_default().push(&ev.source_id);
    }
    let mut train_ids = BTreeMap::new();
    let mut val_ids = BTreeMap::new();
    for (class, ids) in by_class {
        if ids.len() < 2 {
            return Err(Error::config(format!(
                "class {class} has {} event(s); splitting needs at least 2",
                ids.len()
            )));
        }
        let n_val = holdout_count(ids.len(), holdout_fraction);
        if n_val >= ids.len() {
            return Err(Error::config(format!(
                "holdout fraction {holdout_fraction} leaves no training events for {class}"
            )));
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
        rng.set_stream(class.index() as u64);
        order.shuffle(&mut rng);
        let mut val: Vec<usize> = order[..n_val].to_vec();
        let mut train: Vec<usize> = order[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        val_ids.insert(class, val.iter().map(|&i| ids[i].to_string()).collect());
        train_ids.insert(class, train.iter().map(|&i| ids[i].to_string()).collect());
    }
    Ok(SplitManifest {
        train_ids,
        val_ids,
        holdout_fraction,
        split_seed,
    })
}

/// One row of the event manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub class: EventClass,
    pub channel: Channel,
    pub source_path: String,
    pub split: Split,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::load(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::load(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::load(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::load(path, e))
}

/// Mono 32-bit float WAV.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::load(path, e))?;
    for &s in samples {
        w.write_sample(s as f32).map_err(|e| Error::load(path, e))?;
    }
    w.finalize().map_err(|e| Error::load(path, e))
}

/// Reads a WAV file into one sample vector per channel.
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, u32)> {
    let mut r = hound::WavReader::open(path).map_err(|e| Error::load(path, e))?;
    let spec = r.spec();
    let nch = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::load(path, e))?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::load(path, e))?
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / nch.max(1)); nch];
    for (i, v) in interleaved.into_iter().enumerate() {
        channels[i % nch].push(v);
    }
    Ok((channels, spec.sample_rate))
}

/// Channel tags for a recording with `n` channels: two-channel recordings
/// are left/right, anything else is treated as independent mono streams.
pub fn channel_tags(n: usize) -> Vec<Channel> {
    if n == 2 {
        vec![Channel::Left, Channel::Right]
    } else {
        vec![Channel::Mono; n]
    }
}
