//! Browser bindings. Each exported function has a plain Rust twin that
//! returns the library error type, so everything is testable natively.

use stftsynth::benchmark::{axis_extent, figure_panels};
use stftsynth::dataset::normalize;
use stftsynth::figure::render_grid;
use stftsynth::metrics::{psnr, ssim, to_image};
use stftsynth::stft::{stft, to_unit_range, SpectrogramTensor, StftParams, DEFAULT_FLOOR_DB};
use stftsynth::synthetic::{synthesize_event, EventClass, SynthSpec};
use stftsynth::Result;
use wasm_bindgen::prelude::*;

fn js(e: stftsynth::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A synthetic event with its unit-scale spectrogram (`[F, T]`, row-major).
#[wasm_bindgen]
pub struct EventView {
    waveform: Vec<f64>,
    spectrogram: Vec<f64>,
    freq_bins: usize,
    time_frames: usize,
}

#[wasm_bindgen]
impl EventView {
    #[wasm_bindgen(getter)]
    pub fn waveform(&self) -> Vec<f64> {
        self.waveform.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn spectrogram(&self) -> Vec<f64> {
        self.spectrogram.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn freq_bins(&self) -> usize {
        self.freq_bins
    }

    #[wasm_bindgen(getter)]
    pub fn time_frames(&self) -> usize {
        self.time_frames
    }
}

fn event_spectrogram(class: &str, seed: u32, window: usize) -> Result<(Vec<f64>, SpectrogramTensor)> {
    let class: EventClass = class.parse()?;
    let ev = normalize(&synthesize_event(&SynthSpec::new(class, seed as u64))?)?;
    let spec = to_unit_range(&stft(&ev, StftParams::new(window)?)?, DEFAULT_FLOOR_DB)?;
    Ok((ev.samples, spec))
}

pub fn event_view(class: &str, seed: u32, window: usize) -> Result<EventView> {
    let (waveform, spec) = event_spectrogram(class, seed, window)?;
    Ok(EventView {
        freq_bins: spec.freq_bins(),
        time_frames: spec.time_frames(),
        spectrogram: spec.values.data().to_vec(),
        waveform,
    })
}

#[wasm_bindgen]
pub fn synthesize(class: &str, seed: u32, window: usize) -> Result<EventView, JsError> {
    event_view(class, seed, window).map_err(js)
}

/// SSIM and PSNR between two events' spectrograms on the image scale.
#[wasm_bindgen]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub ssim: f64,
    pub psnr: f64,
    pub psnr_capped: bool,
}

pub fn similarity(class_a: &str, seed_a: u32, class_b: &str, seed_b: u32, window: usize) -> Result<Similarity> {
    let a = to_image(&event_spectrogram(class_a, seed_a, window)?.1.values);
    let b = to_image(&event_spectrogram(class_b, seed_b, window)?.1.values);
    let p = psnr(&a, &b)?;
    Ok(Similarity { ssim: ssim(&a, &b)?.clamp(0.0, 1.0), psnr: p.db, psnr_capped: p.capped })
}

#[wasm_bindgen]
pub fn compare(class_a: &str, seed_a: u32, class_b: &str, seed_b: u32, window: usize) -> Result<Similarity, JsError> {
    similarity(class_a, seed_a, class_b, seed_b, window).map_err(js)
}

/// An RGBA raster ready for `ImageData`.
#[wasm_bindgen]
pub struct Image {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl Image {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

/// One reference event beside `count` others of the same class.
pub fn panel_image(class: &str, seed: u32, count: u32, window: usize) -> Result<Image> {
    let reference = event_spectrogram(class, seed, window)?.1.values;
    let others = (1..=count)
        .map(|k| Ok(event_spectrogram(class, seed.wrapping_add(k), window)?.1.values))
        .collect::<Result<Vec<_>>>()?;
    let mut panels = figure_panels(&reference, &others, "seed");
    panels[0].title = format!("seed {seed}");
    for (k, p) in panels.iter_mut().enumerate().skip(1) {
        p.title = format!("seed {}", seed.wrapping_add(k as u32));
    }
    let (canvas, _) = render_grid(&panels, axis_extent())?;
    Ok(Image { width: canvas.width, height: canvas.height, rgba: canvas.rgba() })
}

#[wasm_bindgen]
pub fn render_panels(class: &str, seed: u32, count: u32, window: usize) -> Result<Image, JsError> {
    panel_image(class, seed, count, window).map_err(js)
}
