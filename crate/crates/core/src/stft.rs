//! STFT magnitude spectrograms and their mapping into the generator range.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, EventSignal, Split};
use crate::error::{Error, Result};
use crate::synthetic::EventClass;
use crate::tensor::Tensor;

pub const LOG_EPS: f64 = 1e-10;
pub const DEFAULT_FLOOR_DB: f64 = -80.0;
pub const WINDOW_SIZES: [usize; 4] = [64, 128, 256, 512];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFunction {
    Hann,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_size: usize,
    pub overlap_fraction: f64,
    pub window_function: WindowFunction,
}

impl StftParams {
    pub fn new(window_size: usize) -> Result<Self> {
        let p = Self {
            window_size,
            overlap_fraction: 0.5,
            window_function: WindowFunction::Hann,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !WINDOW_SIZES.contains(&self.window_size) {
            return Err(Error::config(format!(
                "window size must be one of {WINDOW_SIZES:?}, got {}",
                self.window_size
            )));
        }
        if self.overlap_fraction != 0.5 {
            return Err(Error::config(format!(
                "overlap fraction is fixed at 0.5, got {}",
                self.overlap_fraction
            )));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        self.window_size / 2
    }

    pub fn freq_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Frames for a signal of `n` samples: the tail is zero-padded up to a
    /// whole final frame and there is no leading boundary extension.
    pub fn time_frames(&self, n: usize) -> usize {
        if n < self.window_size {
            return 0;
        }
        (n - self.window_size).div_ceil(self.hop()) + 1
    }

    pub fn shape_for(&self, n: usize) -> (usize, usize) {
        (self.freq_bins(), self.time_frames(n))
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    LinearMagnitude,
    LogMagnitude,
    NormalizedUnit,
}

/// Affine map used by [`to_unit_range`]: `[floor_db, max_db] -> [-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitMap {
    pub floor_db: f64,
    pub max_db: f64,
}

impl UnitMap {
    fn span(&self) -> f64 {
        self.max_db - self.floor_db
    }

    pub fn db_to_unit(&self, db: f64) -> f64 {
        if self.span() <= 0.0 {
            return -1.0;
        }
        2.0 * (db.max(self.floor_db) - self.floor_db) / self.span() - 1.0
    }

    pub fn unit_to_db(&self, u: f64) -> f64 {
        self.floor_db + (u + 1.0) * 0.5 * self.span().max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramTensor {
    /// `[freq_bins, time_frames]`
    pub values: Tensor,
    pub scale: Scale,
    pub params: StftParams,
    pub unit_map: Option<UnitMap>,
}

impl SpectrogramTensor {
    pub fn freq_bins(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn time_frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.freq_bins(), self.time_frames())
    }
}

/// Reusable STFT plan for one window size.
pub struct Stft {
    params: StftParams,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(params: StftParams) -> Result<Self> {
        params.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(params.window_size);
        Ok(Self {
            params,
            window: hann(params.window_size),
            fft,
        })
    }

    pub fn params(&self) -> &StftParams {
        &self.params
    }

    /// Linear-magnitude spectrogram of a raw signal.
    pub fn magnitude(&self, signal: &[f64]) -> Result<SpectrogramTensor> {
        let w = self.params.window_size;
        if signal.len() < w {
            return Err(Error::input(format!(
                "signal of {} samples is shorter than one {w}-sample window",
                signal.len()
            )));
        }
        let hop = self.params.hop();
        let (bins, frames) = self.params.shape_for(signal.len());
        let mut out = vec![0.0; bins * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); w];
        for f in 0..frames {
            let start = f * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                let x = signal.get(start + i).copied().unwrap_or(0.0);
                *b = Complex::new(x * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, c) in buf.iter().take(bins).enumerate() {
                out[k * frames + f] = c.norm();
            }
        }
        Ok(SpectrogramTensor {
            values: Tensor::new(vec![bins, frames], out)?,
            scale: Scale::LinearMagnitude,
            params: self.params,
            unit_map: None,
        })
    }
}

/// Linear-magnitude STFT of an event.
pub fn stft(event: &EventSignal, params: StftParams) -> Result<SpectrogramTensor> {
    Stft::new(params)?.magnitude(&event.samples)
}

/// Log-scales a linear spectrogram, clamps at `floor_db` and maps the
/// result affinely onto `[-1, 1]` (per spectrogram).
pub fn to_unit_range(spec: &SpectrogramTensor, floor_db: f64) -> Result<SpectrogramTensor> {
    if spec.scale != Scale::LinearMagnitude {
        return Err(Error::input(format!(
            "to_unit_range expects a linear-magnitude spectrogram, got {:?}",
            spec.scale
        )));
    }
    let db = spec.values.map(|m| 20.0 * (m + LOG_EPS).log10());
    let max_db = db.data().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let map = UnitMap {
        floor_db,
        max_db: max_db.max(floor_db),
    };
    Ok(SpectrogramTensor {
        values: db.map(|d| map.db_to_unit(d)),
        scale: Scale::NormalizedUnit,
        params: spec.params,
        unit_map: Some(map),
    })
}

/// Inverse of [`to_unit_range`] for cells above the floor.
pub fn from_unit_range(spec: &SpectrogramTensor) -> Result<SpectrogramTensor> {
    let map = match (spec.scale, spec.unit_map) {
        (Scale::NormalizedUnit, Some(m)) => m,
        _ => {
            return Err(Error::input(
                "from_unit_range needs a normalized spectrogram with its unit map",
            ))
        }
    };
    Ok(SpectrogramTensor {
        values: spec
            .values
            .map(|u| (10f64.powf(map.unit_to_db(u) / 20.0) - LOG_EPS).max(0.0)),
        scale: Scale::LinearMagnitude,
        params: spec.params,
        unit_map: None,
    })
}

/// Unit-range spectrograms for a batch of events with one shared plan.
pub fn featurize(events: &[EventSignal], params: StftParams, floor_db: f64) -> Result<Vec<SpectrogramTensor>> {
    let plan = Stft::new(params)?;
    events
        .iter()
        .map(|e| to_unit_range(&plan.magnitude(&e.samples)?, floor_db))
        .collect()
}

/// Manifest row for a persisted spectrogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub id: String,
    pub class: EventClass,
    pub channel: Channel,
    pub source_path: String,
    pub split: Split,
    pub window_size: usize,
    pub freq_bins: usize,
    pub time_frames: usize,
    pub scale: Scale,
    pub floor_db: f64,
    pub max_db: f64,
    /// Unit-range normalization is computed per spectrogram.
    pub normalization: String,
}

pub fn save_spectrogram(path: &Path, spec: &SpectrogramTensor) -> Result<()> {
    spec.values.save(path)
}

pub fn load_spectrogram(path: &Path, record: &FeatureRecord) -> Result<SpectrogramTensor> {
    let values = Tensor::load(path)?;
    if values.shape() != [record.freq_bins, record.time_frames] {
        return Err(Error::load(
            path,
            format!(
                "stored shape {:?} disagrees with manifest ({}, {})",
                values.shape(),
                record.freq_bins,
                record.time_frames
            ),
        ));
    }
    Ok(SpectrogramTensor {
        values,
        scale: record.scale,
        params: StftParams::new(record.window_size)?,
        unit_map: (record.scale == Scale::NormalizedUnit).then_some(UnitMap {
            floor_db: record.floor_db,
            max_db: record.max_db,
        }),
    })
}
