//! Minimal raster output: spectrogram panels with labelled axes, written as
//! PNG.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

fn glyph(c: char) -> [u8; GLYPH_H] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0, 0, 0, 0, 0, 0x0C, 0x0C],
        '-' => [0, 0, 0, 0x1F, 0, 0, 0],
        '_' => [0, 0, 0, 0, 0, 0, 0x1F],
        '[' => [0x0E, 0x08, 0x08, 0x08, 0x08, 0x08, 0x0E],
        ']' => [0x0E, 0x02, 0x02, 0x02, 0x02, 0x02, 0x0E],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        ':' => [0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0],
        '&' => [0x0C, 0x12, 0x14, 0x08, 0x15, 0x12, 0x0D],
        '+' => [0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0],
        _ => [0; GLYPH_H],
    }
}

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];

/// An RGB raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, background: Rgb) -> Self {
        let pixels = background.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, pixels }
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.pixels[i..i + 3].copy_from_slice(&c);
        }
    }

    pub fn fill_rect(&mut self, x: usize, y: usize, w: usize, h: usize, c: Rgb) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, c);
            }
        }
    }

    /// Width in pixels of `text` at `scale`.
    pub fn text_width(text: &str, scale: usize) -> usize {
        text.chars().count() * (GLYPH_W + 1) * scale
    }

    pub fn draw_text(&mut self, x: usize, y: usize, text: &str, scale: usize, c: Rgb) {
        for (k, ch) in text.chars().enumerate() {
            let g = glyph(ch);
            let ox = x + k * (GLYPH_W + 1) * scale;
            for (r, bits) in g.iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits >> (GLYPH_W - 1 - col) & 1 == 1 {
                        self.fill_rect(ox + col * scale, y + r * scale, scale, scale, c);
                    }
                }
            }
        }
    }

    /// Text rotated a quarter turn counter-clockwise, reading bottom to top
    /// from `(x, y_bottom)`.
    pub fn draw_text_vertical(&mut self, x: usize, y_bottom: usize, text: &str, scale: usize, c: Rgb) {
        for (k, ch) in text.chars().enumerate() {
            let g = glyph(ch);
            let base = y_bottom.saturating_sub((k + 1) * (GLYPH_W + 1) * scale);
            for (r, bits) in g.iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits >> (GLYPH_W - 1 - col) & 1 == 1 {
                        let px = x + r * scale;
                        let py = base + (GLYPH_W - col) * scale;
                        self.fill_rect(px, py, scale, scale, c);
                    }
                }
            }
        }
    }

    /// Pixels as RGBA bytes, row-major, fully opaque.
    pub fn rgba(&self) -> Vec<u8> {
        self.pixels.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
        let mut w = enc.write_header().map_err(to_io)?;
        w.write_image_data(&self.pixels).map_err(to_io)?;
        w.finish().map_err(to_io)
    }
}

/// Perceptually ordered dark-blue to yellow map for `v` in `[0, 1]`.
pub fn colormap(v: f64) -> Rgb {
    const STOPS: [Rgb; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let pos = v * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f64;
    let mut out = [0u8; 3];
    for k in 0..3 {
        out[k] = (STOPS[i][k] as f64 * (1.0 - f) + STOPS[i + 1][k] as f64 * f).round() as u8;
    }
    out
}

/// A titled spectrogram on the unit scale, `[F, T]`.
#[derive(Clone, Debug)]
pub struct Panel {
    pub title: String,
    pub values: Tensor,
}

/// Physical extent of the axes.
#[derive(Clone, Copy, Debug)]
pub struct AxisExtent {
    pub freq_max_khz: f64,
    pub duration_ms: f64,
}

/// Layout facts of a rendered grid, used by callers and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct GridLayout {
    /// `(x, y, w, h)` of each panel's image area.
    pub panels: Vec<(usize, usize, usize, usize)>,
}

fn fmt_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.1}")
    }
}

/// Side-by-side panels with frequency increasing upwards, each with time
/// ticks, a shared frequency axis on the left and axis titles.
pub fn render_grid(panels: &[Panel], extent: AxisExtent) -> Result<(Canvas, GridLayout)> {
    let first = panels.first().ok_or_else(|| Error::input("figure needs at least one panel"))?;
    let &[f, t] = first.values.shape() else {
        return Err(Error::shape("panels must be [F, T]"));
    };
    if panels.iter().any(|p| p.values.shape() != [f, t]) {
        return Err(Error::shape("all panels must share one shape"));
    }
    let sx = (120 / t).max(1);
    let sy = (200 / f).max(1);
    let (pw, ph) = (t * sx, f * sy);
    let (left, top, bottom, gap) = (44, 16, 34, 14);
    let width = left + panels.len() * (pw + gap) + 4;
    let height = top + ph + bottom;
    let mut c = Canvas::new(width, height, WHITE);
    let mut layout = GridLayout { panels: Vec::new() };
    for (k, p) in panels.iter().enumerate() {
        let x0 = left + k * (pw + gap);
        let title: String = p.title.chars().take((pw + gap) / 6).collect();
        c.draw_text(x0, 4, &title, 1, BLACK);
        let d = p.values.data();
        for r in 0..f {
            for col in 0..t {
                let v = (d[r * t + col] + 1.0) * 0.5;
                c.fill_rect(x0 + col * sx, top + (f - 1 - r) * sy, sx, sy, colormap(v));
            }
        }
        c.fill_rect(x0, top + ph, pw, 1, BLACK);
        c.fill_rect(x0.saturating_sub(1), top, 1, ph + 1, BLACK);
        for (tick, x) in [(0.0, x0), (extent.duration_ms, x0 + pw - 1)] {
            c.fill_rect(x, top + ph, 1, 4, BLACK);
            let label = fmt_tick(tick);
            let lx = x.saturating_sub(if tick > 0.0 { Canvas::text_width(&label, 1) - 1 } else { 0 });
            c.draw_text(lx, top + ph + 6, &label, 1, BLACK);
        }
        layout.panels.push((x0, top, pw, ph));
    }
    for (tick, y) in [(0.0, top + ph - 1), (extent.freq_max_khz, top)] {
        c.fill_rect(left - 5, y, 4, 1, BLACK);
        let label = fmt_tick(tick);
        c.draw_text((left - 6).saturating_sub(Canvas::text_width(&label, 1)), y.saturating_sub(3), &label, 1, BLACK);
    }
    let ylabel = "FREQ [KHZ]";
    c.draw_text_vertical(2, top + ph / 2 + Canvas::text_width(ylabel, 1) / 2, ylabel, 1, BLACK);
    let xlabel = "TIME [MS]";
    let span = panels.len() * (pw + gap);
    c.draw_text(left + span.saturating_sub(Canvas::text_width(xlabel, 1)) / 2, top + ph + 20, xlabel, 1, BLACK);
    Ok((c, layout))
}
