//! Scene rasters: loading, caching, heat-map construction and the per-sample
//! scene tensors fed to the model.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::{AgentTrack, AgentType, Point};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterKind {
    HeatMap,
    Aerial,
    Segmented,
}

/// An `H x W x C` raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRaster {
    pub kind: RasterKind,
    pub meters_per_pixel: f64,
    pub pixels: Array3<f64>,
}

impl SceneRaster {
    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }

    /// Concatenates same-sized rasters along the channel axis.
    pub fn stack(parts: &[SceneRaster]) -> Result<SceneRaster> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero rasters"))?;
        let (h, w, _) = first.pixels.dim();
        if parts.iter().any(|p| p.height() != h || p.width() != w) {
            return Err(Error::Shape("stacked rasters differ in size".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.pixels.view()).collect();
        let pixels = ndarray::concatenate(Axis(2), &views)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(SceneRaster {
            kind: first.kind,
            meters_per_pixel: first.meters_per_pixel,
            pixels,
        })
    }
}

/// Pixel `(row, col)` of a world coordinate: `round(y / mpp), round(x / mpp)`.
pub fn world_to_pixel(p: Point, meters_per_pixel: f64) -> (i64, i64) {
    (
        (p[1] / meters_per_pixel).round() as i64,
        (p[0] / meters_per_pixel).round() as i64,
    )
}

/// Decodes an 8-bit image into a raster.
///
/// Grayscale files give one channel and colour files three. Values are scaled
/// by 1/255; segmented rasters are additionally thresholded at 0.5.
/// `expected` is the `(width, height)` declared by the manifest, if any.
pub fn load_raster(
    path: &Path,
    kind: RasterKind,
    meters_per_pixel: f64,
    expected: Option<(u32, u32)>,
) -> Result<SceneRaster> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let (w, h) = (img.width(), img.height());
    if let Some((ew, eh)) = expected {
        if (ew, eh) != (w, h) {
            return Err(Error::Shape(format!(
                "{}: raster is {w}x{h} but manifest declares {ew}x{eh}",
                path.display()
            )));
        }
    }
    let color = img.color().has_color() && kind != RasterKind::Segmented;
    let pixels = if color {
        let rgb = img.to_rgb8();
        Array3::from_shape_fn((h as usize, w as usize, 3), |(r, c, k)| {
            rgb.get_pixel(c as u32, r as u32)[k] as f64 / 255.0
        })
    } else {
        let luma = img.to_luma8();
        Array3::from_shape_fn((h as usize, w as usize, 1), |(r, c, _)| {
            luma.get_pixel(c as u32, r as u32)[0] as f64 / 255.0
        })
    };
    let pixels = if kind == RasterKind::Segmented {
        pixels.mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 })
    } else {
        pixels
    };
    Ok(SceneRaster {
        kind,
        meters_per_pixel,
        pixels,
    })
}

const CACHE_MAGIC: &[u8; 8] = b"MCERASTR";

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    kind: RasterKind,
    shape: [usize; 3],
    dtype: String,
    meters_per_pixel: f64,
}

/// Writes `magic | u32 header length | JSON header | f64 little-endian data`.
pub fn save_raster_cache(raster: &SceneRaster, path: &Path) -> Result<()> {
    let (h, w, c) = raster.pixels.dim();
    let header = serde_json::to_vec(&CacheHeader {
        kind: raster.kind,
        shape: [h, w, c],
        dtype: "f64le".into(),
        meters_per_pixel: raster.meters_per_pixel,
    })
    .expect("header serializes");
    let mut buf = Vec::with_capacity(12 + header.len() + h * w * c * 8);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in raster.pixels.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_raster_cache(path: &Path) -> Result<SceneRaster> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: m.to_string(),
    };
    if bytes.len() < 12 || &bytes[..8] != CACHE_MAGIC {
        return Err(bad("not a raster cache file"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header: CacheHeader = bytes
        .get(12..12 + hlen)
        .and_then(|h| serde_json::from_slice(h).ok())
        .ok_or_else(|| bad("corrupt header"))?;
    if header.dtype != "f64le" {
        return Err(bad("unsupported dtype"));
    }
    let n: usize = header.shape.iter().product();
    let data = &bytes[12 + hlen..];
    if data.len() != n * 8 {
        return Err(bad("payload length does not match shape"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let [h, w, c] = header.shape;
    Ok(SceneRaster {
        kind: header.kind,
        meters_per_pixel: header.meters_per_pixel,
        pixels: Array3::from_shape_vec((h, w, c), values).map_err(|e| Error::Shape(e.to_string()))?,
    })
}

/// Integer visit counts of one agent type. Out-of-raster samples are skipped.
pub fn visit_counts(
    tracks: &[AgentTrack],
    agent_type: AgentType,
    shape: (usize, usize),
    meters_per_pixel: f64,
) -> Array2<u64> {
    let mut counts = Array2::<u64>::zeros(shape);
    for t in tracks.iter().filter(|t| t.agent_type == agent_type) {
        for s in &t.samples {
            let (r, c) = world_to_pixel(s.pos, meters_per_pixel);
            if r >= 0 && c >= 0 && (r as usize) < shape.0 && (c as usize) < shape.1 {
                counts[[r as usize, c as usize]] += 1;
            }
        }
    }
    counts
}

/// Normalized 1-D Gaussian taps with radius `ceil(4 * std)`.
pub fn gaussian_kernel(std: f64) -> Vec<f64> {
    let radius = (4.0 * std).ceil().max(0.0) as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * std * std)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with zero padding outside the raster.
pub fn gaussian_blur(image: &Array2<f64>, std: f64) -> Array2<f64> {
    let kernel = gaussian_kernel(std);
    let radius = (kernel.len() / 2) as i64;
    let (h, w) = image.dim();
    let mut rows = Array2::<f64>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, tap) in kernel.iter().enumerate() {
                let cc = c as i64 + k as i64 - radius;
                if cc >= 0 && (cc as usize) < w {
                    acc += tap * image[[r, cc as usize]];
                }
            }
            rows[[r, c]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, tap) in kernel.iter().enumerate() {
                let rr = r as i64 + k as i64 - radius;
                if rr >= 0 && (rr as usize) < h {
                    acc += tap * rows[[rr as usize, c]];
                }
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Visit-frequency prior of one agent type: counts blurred with an isotropic
/// Gaussian and scaled so the peak is 1. Only pass training tracks here.
pub fn build_heat_map(
    tracks: &[AgentTrack],
    agent_type: AgentType,
    shape: (usize, usize),
    kernel_std_pixels: f64,
    meters_per_pixel: f64,
) -> Result<Array2<f64>> {
    if shape.0 == 0 || shape.1 == 0 {
        return Err(Error::invalid("heat map raster must be non-empty"));
    }
    if !(kernel_std_pixels > 0.0) {
        return Err(Error::invalid("heat map kernel std must be > 0"));
    }
    let counts = visit_counts(tracks, agent_type, shape, meters_per_pixel);
    if counts.iter().all(|&c| c == 0) {
        log::warn!("no {agent_type} visits inside the raster; heat map channel is zero");
        return Ok(Array2::zeros(shape));
    }
    let blurred = gaussian_blur(&counts.mapv(|c| c as f64), kernel_std_pixels);
    let peak = blurred.iter().cloned().fold(0.0, f64::max);
    Ok(if peak > 0.0 {
        blurred.mapv(|v| (v / peak).clamp(0.0, 1.0))
    } else {
        blurred
    })
}

/// Three-channel heat-map raster, one channel per agent type.
pub fn build_heat_raster(
    tracks: &[AgentTrack],
    shape: (usize, usize),
    kernel_std_pixels: f64,
    meters_per_pixel: f64,
) -> Result<SceneRaster> {
    let channels = AgentType::ALL
        .iter()
        .map(|&ty| build_heat_map(tracks, ty, shape, kernel_std_pixels, meters_per_pixel))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = channels.iter().map(|c| c.view().insert_axis(Axis(2))).collect();
    Ok(SceneRaster {
        kind: RasterKind::HeatMap,
        meters_per_pixel,
        pixels: ndarray::concatenate(Axis(2), &views).expect("equal channel shapes"),
    })
}

/// Raster extent in pixels covering every sample of `tracks`, plus a margin.
pub fn extent_for(tracks: &[AgentTrack], meters_per_pixel: f64, margin_px: usize) -> (usize, usize) {
    let (mut rmax, mut cmax) = (0i64, 0i64);
    for s in tracks.iter().flat_map(|t| &t.samples) {
        let (r, c) = world_to_pixel(s.pos, meters_per_pixel);
        rmax = rmax.max(r);
        cmax = cmax.max(c);
    }
    (rmax as usize + 1 + margin_px, cmax as usize + 1 + margin_px)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneMode {
    /// Whole raster resized once and shared by every step.
    Static,
    /// Agent-centred square crop at every step.
    PerStepCrop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneTensorSpec {
    pub mode: SceneMode,
    /// Side of the square model input, in pixels.
    pub input_size: usize,
    /// Side of the crop window in meters (per-step mode only).
    pub crop_size_m: f64,
}

impl Default for SceneTensorSpec {
    fn default() -> Self {
        Self {
            mode: SceneMode::Static,
            input_size: 32,
            crop_size_m: 16.0,
        }
    }
}

/// `steps x size x size x channels` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTensor {
    pub steps: usize,
    pub size: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl SceneTensor {
    pub fn image(&self, step: usize) -> &[f64] {
        let n = self.size * self.size * self.channels;
        &self.data[step * n..(step + 1) * n]
    }

    pub fn image_len(&self) -> usize {
        self.size * self.size * self.channels
    }
}

/// Crop side length in pixels for a crop of `crop_size_m` meters.
pub fn crop_side_px(crop_size_m: f64, meters_per_pixel: f64) -> usize {
    ((crop_size_m / meters_per_pixel).round() as usize).max(1)
}

/// Square crop whose pixel `(side/2, side/2)` is the agent's pixel; outside
/// the raster the crop is zero.
pub fn crop_at(raster: &SceneRaster, center: Point, side: usize) -> Array3<f64> {
    let (h, w, ch) = raster.pixels.dim();
    let (cr, cc) = world_to_pixel(center, raster.meters_per_pixel);
    let half = (side / 2) as i64;
    Array3::from_shape_fn((side, side, ch), |(i, j, k)| {
        let r = cr - half + i as i64;
        let c = cc - half + j as i64;
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            raster.pixels[[r as usize, c as usize, k]]
        } else {
            0.0
        }
    })
}

/// Area-weighted resampling to `out x out`.
pub fn resize_area(src: &Array3<f64>, out: usize) -> Array3<f64> {
    let (h, w, ch) = src.dim();
    if h == out && w == out {
        return src.clone();
    }
    let rw = area_weights(h, out);
    let cw = area_weights(w, out);
    let mut dst = Array3::<f64>::zeros((out, out, ch));
    for (i, rows) in rw.iter().enumerate() {
        for (j, cols) in cw.iter().enumerate() {
            for &(r, wr) in rows {
                for &(c, wc) in cols {
                    for k in 0..ch {
                        dst[[i, j, k]] += wr * wc * src[[r, c, k]];
                    }
                }
            }
        }
    }
    dst
}

/// For each output cell, the overlapping source cells and their normalized
/// overlap weights.
fn area_weights(src: usize, out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / out as f64;
    (0..out)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let mut cells = Vec::new();
            let mut k = lo.floor() as usize;
            while (k as f64) < hi && k < src {
                let overlap = (hi.min((k + 1) as f64) - lo.max(k as f64)).max(0.0);
                if overlap > 0.0 {
                    cells.push((k, overlap / scale));
                }
                k += 1;
            }
            cells
        })
        .collect()
}

/// Scene input for one sample: the shared resized raster (static mode) or one
/// crop per position (per-step mode).
pub fn scene_tensor(raster: &SceneRaster, positions: &[Point], spec: &SceneTensorSpec) -> SceneTensor {
    let images: Vec<Array3<f64>> = match spec.mode {
        SceneMode::Static => vec![resize_area(&raster.pixels, spec.input_size)],
        SceneMode::PerStepCrop => {
            let side = crop_side_px(spec.crop_size_m, raster.meters_per_pixel);
            positions
                .iter()
                .map(|&p| resize_area(&crop_at(raster, p, side), spec.input_size))
                .collect()
        }
    };
    let channels = raster.channels();
    let mut data = Vec::with_capacity(images.len() * spec.input_size.pow(2) * channels);
    for img in &images {
        data.extend(img.iter().copied());
    }
    SceneTensor {
        steps: images.len(),
        size: spec.input_size,
        channels,
        data,
    }
}

#[cfg(test)]
mod tests;
