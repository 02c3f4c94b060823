//! PNG rendering: heatmaps, heatmap-over-image overlays, and a small
//! hand-drawn line plot for randomization reports.

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};
use ndarray::{Array2, ArrayD, ArrayViewD};

use iia_models::Preproc;

use crate::error::{AttributionError, Result};
use crate::resize::bilinear_resize;
use crate::sanity::RandomizationReport;

/// Color ramp anchors, evenly spaced over `[0, 1]`: deep blue through cyan and
/// yellow to red.
const RAMP: [[f64; 3]; 5] = [
    [0.0, 0.0, 131.0],
    [0.0, 60.0, 170.0],
    [5.0, 255.0, 255.0],
    [255.0, 240.0, 0.0],
    [250.0, 0.0, 0.0],
];

/// Map `t` in `[0, 1]` to an RGB color on the ramp.
fn ramp_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let lo = (t.floor() as usize).min(RAMP.len() - 2);
    let s = t - lo as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        rgb[c] = (RAMP[lo][c] + (RAMP[lo + 1][c] - RAMP[lo][c]) * s).round() as u8;
    }
    rgb
}

/// Min-max normalize a map to `[0, 1]`; a constant map collapses to 0.5.
fn normalized(map: &Array2<f64>) -> Result<Array2<f64>> {
    if map.is_empty() {
        return Err(AttributionError::InvalidArgument("cannot render an empty map".into()));
    }
    if map.iter().any(|v| !v.is_finite()) {
        return Err(AttributionError::Numeric("map contains non-finite values".into()));
    }
    let min = map.iter().copied().fold(f64::INFINITY, f64::min);
    let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    Ok(if span == 0.0 {
        Array2::from_elem(map.dim(), 0.5)
    } else {
        map.mapv(|v| (v - min) / span)
    })
}

fn encode_rgb(pixels: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    PngEncoder::new_with_quality(&mut buf, CompressionType::Default, FilterType::Adaptive)
        .write_image(pixels, width as u32, height as u32, ExtendedColorType::Rgb8)?;
    Ok(buf)
}

/// Render an attribution map as a false-color PNG.
pub fn render_heatmap(map: &Array2<f64>) -> Result<Vec<u8>> {
    let norm = normalized(map)?;
    let (h, w) = norm.dim();
    let mut pixels = Vec::with_capacity(h * w * 3);
    for v in norm.iter() {
        pixels.extend_from_slice(&ramp_color(*v));
    }
    encode_rgb(&pixels, w, h)
}

/// De-normalize a network input back to display channels in `[0, 255]`,
/// resized to `(h, w)`. Grayscale inputs are replicated across RGB.
fn display_planes(image: ArrayViewD<'_, f64>, preproc: &Preproc, h: usize, w: usize) -> Result<[Array2<f64>; 3]> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(AttributionError::shape("overlay image", &[0, 0, 0], shape));
    }
    let channels = shape[0];
    if channels != 1 && channels != 3 {
        return Err(AttributionError::InvalidArgument(format!(
            "overlay supports 1 or 3 channels, got {channels}"
        )));
    }
    if preproc.mean.len() != channels || preproc.std.len() != channels {
        return Err(AttributionError::shape(
            "overlay preprocessing constants",
            &[channels],
            &[preproc.mean.len(), preproc.std.len()],
        ));
    }
    let plane_for = |c: usize| -> Array2<f64> {
        let mut plane = Array2::zeros((shape[1], shape[2]));
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let raw = image[[c, y, x]] * preproc.std[c] + preproc.mean[c];
                plane[(y, x)] = (raw * 255.0).clamp(0.0, 255.0);
            }
        }
        bilinear_resize(&plane, h, w)
    };
    Ok(if channels == 1 {
        let p = plane_for(0);
        [p.clone(), p.clone(), p]
    } else {
        [plane_for(0), plane_for(1), plane_for(2)]
    })
}

/// Blend a false-color heatmap over the image it explains (equal weights) and
/// return the PNG bytes. `image` is the normalized `(C, H, W)` network input;
/// `preproc` undoes its standardization for display.
pub fn render_overlay(map: &Array2<f64>, image: &ArrayD<f64>, preproc: &Preproc) -> Result<Vec<u8>> {
    let norm = normalized(map)?;
    let (h, w) = norm.dim();
    let planes = display_planes(image.view(), preproc, h, w)?;
    let mut pixels = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let heat = ramp_color(norm[(y, x)]);
            for c in 0..3 {
                let blended = 0.5 * planes[c][(y, x)] + 0.5 * f64::from(heat[c]);
                pixels.push(blended.round() as u8);
            }
        }
    }
    encode_rgb(&pixels, w, h)
}

/// A white RGB canvas with set-pixel and primitive drawing helpers.
struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Canvas { width, height, pixels: vec![255; width * height * 3] }
    }

    fn set(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let idx = (y as usize * self.width + x as usize) * 3;
        self.pixels[idx..idx + 3].copy_from_slice(&rgb);
    }

    fn dot(&mut self, x: i64, y: i64, radius: i64, rgb: [u8; 3]) {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy <= radius * radius {
                    self.set(x + dx, y + dy, rgb);
                }
            }
        }
    }

    fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, rgb);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

const PLOT_W: usize = 640;
const PLOT_H: usize = 400;
const MARGIN_L: i64 = 50;
const MARGIN_R: i64 = 20;
const MARGIN_T: i64 = 20;
const MARGIN_B: i64 = 40;

/// Plot a randomization report: per-step mean correlation as a line, one dot
/// per image, and whiskers at one standard deviation. The y axis is fixed to
/// `[-1, 1]` with gridlines at every half; the x axis is the step index.
pub fn render_sanity_plot(report: &RandomizationReport) -> Result<Vec<u8>> {
    if report.steps.is_empty() {
        return Err(AttributionError::InvalidArgument("report has no steps to plot".into()));
    }
    let mut canvas = Canvas::new(PLOT_W, PLOT_H);
    let (x0, x1) = (MARGIN_L, PLOT_W as i64 - MARGIN_R);
    let (y0, y1) = (MARGIN_T, PLOT_H as i64 - MARGIN_B);

    let y_of = |rho: f64| -> i64 {
        let t = (rho.clamp(-1.0, 1.0) + 1.0) / 2.0;
        y1 - ((y1 - y0) as f64 * t).round() as i64
    };
    let steps = report.steps.len();
    let x_of = |i: usize| -> i64 {
        if steps == 1 {
            (x0 + x1) / 2
        } else {
            x0 + ((x1 - x0) as f64 * i as f64 / (steps - 1) as f64).round() as i64
        }
    };

    let grid = [200, 200, 200];
    let axis = [60, 60, 60];
    let scatter = [160, 190, 230];
    let mean_line = [30, 60, 160];

    for half in [-1.0, -0.5, 0.5, 1.0] {
        let y = y_of(half);
        canvas.line(x0, y, x1, y, grid);
    }
    // Zero line, emphasized.
    let zy = y_of(0.0);
    canvas.line(x0, zy, x1, zy, axis);
    // Frame.
    canvas.line(x0, y0, x0, y1, axis);
    canvas.line(x0, y1, x1, y1, axis);

    // Per-image correlations.
    for (i, step) in report.steps.iter().enumerate() {
        let x = x_of(i);
        for rho in &step.rhos {
            if rho.is_finite() {
                canvas.dot(x, y_of(*rho), 1, scatter);
            }
        }
    }
    // Whiskers and mean polyline.
    for (i, step) in report.steps.iter().enumerate() {
        let x = x_of(i);
        let (lo, hi) = (y_of(step.rho_mean - step.rho_std), y_of(step.rho_mean + step.rho_std));
        canvas.line(x, lo, x, hi, mean_line);
        canvas.line(x - 3, lo, x + 3, lo, mean_line);
        canvas.line(x - 3, hi, x + 3, hi, mean_line);
        if i + 1 < steps {
            let next = &report.steps[i + 1];
            canvas.line(x, y_of(step.rho_mean), x_of(i + 1), y_of(next.rho_mean), mean_line);
        }
        canvas.dot(x, y_of(step.rho_mean), 2, mean_line);
    }

    encode_rgb(&canvas.pixels, PLOT_W, PLOT_H)
}
