//! PNG rendering of observed paths, ground truth and predicted fans.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_line_segment_mut};

use mcenet::context::{world_to_pixel, SceneRaster};
use mcenet::dataio::{AgentId, Point};
use mcenet::model::PredictionSet;

const PAST: Rgb<u8> = Rgb([0, 0, 0]);
const TRUTH: Rgb<u8> = Rgb([128, 0, 160]);
const FAN: Rgb<u8> = Rgb([100, 149, 237]);
const MOST_LIKELY: Rgb<u8> = Rgb([220, 20, 60]);
const BLANK: Rgb<u8> = Rgb([255, 255, 255]);
const BLANK_MARGIN_PX: i64 = 16;

/// Everything drawn for one window.
#[derive(Debug, Clone)]
pub struct PlotWindow {
    pub dataset: String,
    pub agent_id: AgentId,
    pub start_frame: i64,
    pub past: Vec<Point>,
    pub truth: Vec<Point>,
    pub predictions: PredictionSet,
}

impl PlotWindow {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.png", self.dataset, self.start_frame, self.agent_id.0)
    }

    fn points(&self) -> impl Iterator<Item = &Point> {
        self.past
            .iter()
            .chain(&self.truth)
            .chain(self.predictions.trajectories.iter().flatten())
    }
}

/// Image pixel `(col, row)` of a world point.
pub fn pixel_of(p: Point, meters_per_pixel: f64) -> (i64, i64) {
    let (row, col) = world_to_pixel(p, meters_per_pixel);
    (col, row)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// RGB view of a raster. Single-channel rasters are shown in gray, scaled by
/// their maximum so faint heat maps stay visible.
pub fn raster_image(raster: &SceneRaster) -> RgbImage {
    let (h, w, c) = raster.pixels.dim();
    let peak = raster.pixels.iter().cloned().fold(0.0_f64, f64::max);
    let scale = if c == 1 && peak > 0.0 { 1.0 / peak } else { 1.0 };
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| raster.pixels[[y as usize, x as usize, ch.min(c - 1)]] * scale;
        if c >= 3 {
            Rgb([to_u8(px(0)), to_u8(px(1)), to_u8(px(2))])
        } else {
            let g = to_u8(px(0));
            Rgb([g, g, g])
        }
    })
}

fn blank_canvas(window: &PlotWindow, meters_per_pixel: f64) -> RgbImage {
    let (mut w, mut h) = (1, 1);
    for &p in window.points() {
        let (col, row) = pixel_of(p, meters_per_pixel);
        w = w.max(col + BLANK_MARGIN_PX);
        h = h.max(row + BLANK_MARGIN_PX);
    }
    RgbImage::from_pixel(w.clamp(1, 8192) as u32, h.clamp(1, 8192) as u32, BLANK)
}

fn polyline(img: &mut RgbImage, pts: &[Point], mpp: f64, color: Rgb<u8>, dot: i32) {
    let px: Vec<(f32, f32)> = pts
        .iter()
        .map(|&p| {
            let (c, r) = pixel_of(p, mpp);
            (c as f32, r as f32)
        })
        .collect();
    for pair in px.windows(2) {
        draw_line_segment_mut(img, pair[0], pair[1], color);
    }
    if dot > 0 {
        for &(c, r) in &px {
            draw_filled_circle_mut(img, (c as i32, r as i32), dot, color);
        }
    }
}

/// Draws one window on `background` (or on a white canvas sized to the
/// trajectories). Predictions start at the last observed position.
pub fn render(window: &PlotWindow, background: Option<&RgbImage>, meters_per_pixel: f64) -> RgbImage {
    let mut img = match background {
        Some(bg) => bg.clone(),
        None => blank_canvas(window, meters_per_pixel),
    };
    let anchor = window.past.last().copied();
    let with_anchor = |traj: &[Point]| -> Vec<Point> { anchor.into_iter().chain(traj.iter().copied()).collect() };
    let best = window.predictions.most_likely_index;
    for (i, traj) in window.predictions.trajectories.iter().enumerate() {
        if i != best {
            polyline(&mut img, &with_anchor(traj), meters_per_pixel, FAN, 0);
        }
    }
    polyline(&mut img, &with_anchor(&window.truth), meters_per_pixel, TRUTH, 1);
    polyline(&mut img, &window.past, meters_per_pixel, PAST, 1);
    if let Some(traj) = window.predictions.trajectories.get(best) {
        polyline(&mut img, &with_anchor(traj), meters_per_pixel, MOST_LIKELY, 1);
    }
    img
}

/// Writes one PNG per window into `dir` and returns the paths.
pub fn emit_plots(
    dir: &Path,
    windows: &[PlotWindow],
    background: Option<&SceneRaster>,
    meters_per_pixel: f64,
) -> mcenet::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| mcenet::Error::io(dir, e))?;
    let bg = background.map(raster_image);
    let mut written = Vec::with_capacity(windows.len());
    for w in windows {
        let path = dir.join(w.file_name());
        render(w, bg.as_ref(), meters_per_pixel)
            .save(&path)
            .map_err(|e| mcenet::Error::Image {
                path: path.clone(),
                msg: e.to_string(),
            })?;
        written.push(path);
    }
    Ok(written)
}
