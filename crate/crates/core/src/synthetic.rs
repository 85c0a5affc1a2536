//! Parametric stand-ins for the four monitored event classes.
//!
//! Each class gets a signal family with the right qualitative shape:
//! a decaying chirp burst for wire breakage, a damped two-mode impulse for
//! hammering, a sustained harmonic tone for the electric trimmer and
//! band-limited coloured noise for traffic. Every random choice is drawn
//! from a ChaCha stream keyed by the spec's seed and the class.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, EventSignal};
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 96_000;
pub const EVENT_LEN: usize = 1000;
pub const DEFAULT_JITTER: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventClass {
    Breakage,
    Hammer,
    Trimmer,
    Traffic,
}

impl EventClass {
    pub const ALL: [EventClass; 4] = [
        EventClass::Breakage,
        EventClass::Hammer,
        EventClass::Trimmer,
        EventClass::Traffic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventClass::Breakage => "breakage",
            EventClass::Hammer => "hammer",
            EventClass::Trimmer => "trimmer",
            EventClass::Traffic => "traffic",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Class sizes of the field campaign.
    pub fn default_count(self) -> usize {
        match self {
            EventClass::Breakage => 202,
            EventClass::Hammer => 264,
            EventClass::Trimmer => 459,
            EventClass::Traffic => 415,
        }
    }
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventClass::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::config(format!("unknown event class '{s}'")))
    }
}

pub fn default_class_counts() -> BTreeMap<EventClass, usize> {
    EventClass::ALL
        .into_iter()
        .map(|c| (c, c.default_count()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub event_class: EventClass,
    pub sample_rate: u32,
    pub length: usize,
    pub seed: u64,
    pub amplitude_jitter: f64,
    pub frequency_jitter: f64,
}

impl SynthSpec {
    pub fn new(event_class: EventClass, seed: u64) -> Self {
        Self {
            event_class,
            sample_rate: SAMPLE_RATE,
            length: EVENT_LEN,
            seed,
            amplitude_jitter: DEFAULT_JITTER,
            frequency_jitter: DEFAULT_JITTER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length != EVENT_LEN {
            return Err(Error::config(format!(
                "event length must be {EVENT_LEN} samples, got {}",
                self.length
            )));
        }
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::config(format!(
                "sample rate must be {SAMPLE_RATE} Hz, got {}",
                self.sample_rate
            )));
        }
        for (name, j) in [
            ("amplitude_jitter", self.amplitude_jitter),
            ("frequency_jitter", self.frequency_jitter),
        ] {
            if !(0.0..1.0).contains(&j) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {j}")));
            }
        }
        Ok(())
    }

    pub fn duration_seconds(&self) -> f64 {
        self.length as f64 / self.sample_rate as f64
    }
}

/// The concrete parameters drawn for one event.
#[derive(Clone, Debug, PartialEq)]
pub struct EventParams {
    /// Peak absolute amplitude of the rendered signal.
    pub amplitude: f64,
    /// First sample of the transient (0 for sustained classes).
    pub onset: usize,
    pub shape: FamilyParams,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FamilyParams {
    Breakage {
        start_hz: f64,
        end_hz: f64,
        decay_s: f64,
        noise_mix: f64,
    },
    Hammer {
        modes: [(f64, f64, f64); 2], // (hz, decay_s, relative amplitude)
    },
    Trimmer {
        fundamental_hz: f64,
        harmonic_gains: [f64; 4],
    },
    Traffic {
        center_hz: f64,
        q: f64,
    },
}

const ONSET: usize = 60;

fn jitter(rng: &mut ChaCha8Rng, nominal: f64, frac: f64) -> f64 {
    nominal * (1.0 + frac * rng.random_range(-1.0..=1.0))
}

fn event_rng(spec: &SynthSpec) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(spec.event_class.index() as u64 + 1);
    rng
}

/// Draws the per-event parameters.
pub fn realize(spec: &SynthSpec) -> Result<EventParams> {
    spec.validate()?;
    Ok(realize_with(spec, &mut event_rng(spec)))
}

fn realize_with(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> EventParams {
    let fj = spec.frequency_jitter;
    let amplitude = 1.0 - spec.amplitude_jitter * rng.random::<f64>();
    let onset_shift: i64 = rng.random_range(-12..=12);
    let transient_onset = (ONSET as i64 + onset_shift) as usize;
    let (onset, shape) = match spec.event_class {
        EventClass::Breakage => (
            transient_onset,
            FamilyParams::Breakage {
                start_hz: jitter(rng, 24_000.0, fj),
                end_hz: jitter(rng, 9_000.0, fj),
                decay_s: jitter(rng, 1.2e-3, fj),
                noise_mix: jitter(rng, 0.3, fj),
            },
        ),
        EventClass::Hammer => (
            transient_onset,
            FamilyParams::Hammer {
                modes: [
                    (jitter(rng, 2_200.0, fj), jitter(rng, 2.5e-3, fj), 1.0),
                    (jitter(rng, 7_500.0, fj), jitter(rng, 0.8e-3, fj), jitter(rng, 0.6, fj)),
                ],
            },
        ),
        EventClass::Trimmer => (
            0,
            FamilyParams::Trimmer {
                fundamental_hz: jitter(rng, 3_200.0, fj),
                harmonic_gains: [
                    1.0,
                    jitter(rng, 0.5, fj),
                    jitter(rng, 0.3, fj),
                    jitter(rng, 0.2, fj),
                ],
            },
        ),
        EventClass::Traffic => (
            0,
            FamilyParams::Traffic {
                center_hz: jitter(rng, 1_200.0, fj),
                q: jitter(rng, 0.9, fj),
            },
        ),
    };
    EventParams {
        amplitude,
        onset,
        shape,
    }
}

fn render(params: &EventParams, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![0.0; n];
    match &params.shape {
        FamilyParams::Breakage {
            start_hz,
            end_hz,
            decay_s,
            noise_mix,
        } => {
            // exponential chirp from start_hz toward end_hz
            let sweep_s = 4.0 * decay_s;
            let k = (end_hz / start_hz).ln() / sweep_s;
            for (i, v) in x.iter_mut().enumerate().skip(params.onset) {
                let t = (i - params.onset) as f64 / fs;
                let phase = 2.0 * PI * start_hz * ((k * t).exp() - 1.0) / k;
                let env = (-t / decay_s).exp();
                let noise: f64 = StandardNormal.sample(rng);
                *v = env * (phase.sin() + noise_mix * noise);
            }
        }
        FamilyParams::Hammer { modes } => {
            for (i, v) in x.iter_mut().enumerate().skip(params.onset) {
                let t = (i - params.onset) as f64 / fs;
                *v = modes
                    .iter()
                    .map(|&(f, d, a)| a * (-t / d).exp() * (2.0 * PI * f * t).sin())
                    .sum();
            }
        }
        FamilyParams::Trimmer {
            fundamental_hz,
            harmonic_gains,
        } => {
            let phases: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let ramp = 48.0;
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / fs;
                let fade = (i as f64 / ramp).min(1.0) * ((n - 1 - i) as f64 / ramp).min(1.0);
                *v = fade
                    * harmonic_gains
                        .iter()
                        .enumerate()
                        .map(|(h, g)| {
                            g * (2.0 * PI * fundamental_hz * (h + 1) as f64 * t + phases[h]).sin()
                        })
                        .sum::<f64>();
            }
        }
        FamilyParams::Traffic { center_hz, q } => {
            // RBJ band-pass biquad over white noise, then two one-pole low-passes
            let w0 = 2.0 * PI * center_hz / fs;
            let alpha = w0.sin() / (2.0 * q);
            let a0 = 1.0 + alpha;
            let (b0, b2) = (alpha / a0, -alpha / a0);
            let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
            let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
            let (mut lp1, mut lp2) = (0.0, 0.0);
            // run-in so the filter state is stationary at sample 0
            for i in 0..(n + 256) {
                let e: f64 = StandardNormal.sample(rng);
                let y = b0 * e + b2 * x2 - a1 * y1 - a2 * y2;
                x2 = x1;
                x1 = e;
                y2 = y1;
                y1 = y;
                lp1 += 0.08 * (y - lp1);
                lp2 += 0.08 * (lp1 - lp2);
                if i >= 256 {
                    x[i - 256] = lp2;
                }
            }
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = params.amplitude / peak;
        x.iter_mut().for_each(|v| *v *= g);
    }
    x
}

/// Deterministic 1000-sample event for `spec`.
pub fn synthesize_event(spec: &SynthSpec) -> Result<EventSignal> {
    spec.validate()?;
    let mut rng = event_rng(spec);
    let params = realize_with(spec, &mut rng);
    let samples = render(&params, spec.length, spec.sample_rate as f64, &mut rng);
    EventSignal::new(
        samples,
        spec.sample_rate,
        spec.event_class,
        Channel::Mono,
        format!("synth-{}-s{}", spec.event_class, spec.seed),
    )
}

/// SplitMix64 finaliser; decorrelates neighbouring seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A labelled corpus with per-event seeds derived from `seed`.
pub fn synthesize_corpus(
    class_counts: &BTreeMap<EventClass, usize>,
    seed: u64,
) -> Result<Vec<EventSignal>> {
    let mut out = Vec::with_capacity(class_counts.values().sum());
    for (&class, &count) in class_counts {
        if count == 0 {
            return Err(Error::config(format!("class {class} needs at least one event")));
        }
        for i in 0..count {
            let event_seed = mix_seed(mix_seed(seed, class.index() as u64), i as u64);
            let mut ev = synthesize_event(&SynthSpec::new(class, event_seed))?;
            ev.source_id = format!("{class}-{i:04}");
            out.push(ev);
        }
    }
    Ok(out)
}
