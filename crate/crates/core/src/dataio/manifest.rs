use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_dataset, resample, DatasetMeta, SceneDataset};
use crate::error::{Error, Result};

/// Declarative description of one dataset on disk (TOML).
///
/// ```toml
/// name = "hbs"
/// trajectories = "hbs.txt"
/// frame_rate = 10.0
/// target_fps = 2.0
/// meters_per_pixel = 0.05
///
/// [rasters]
/// aerial = "aerial.png"
/// segmented = ["ped.png", "cyc.png", "veh.png"]
/// ```
///
/// Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub trajectories: PathBuf,
    pub frame_rate: f64,
    #[serde(default = "one")]
    pub frame_step: i64,
    #[serde(default)]
    pub target_fps: Option<f64>,
    pub meters_per_pixel: f64,
    /// Raster extent in pixels; derived from the trajectories when absent.
    #[serde(default)]
    pub raster_width: Option<u32>,
    #[serde(default)]
    pub raster_height: Option<u32>,
    #[serde(default)]
    pub rasters: RasterPaths,
}

fn one() -> i64 {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterPaths {
    #[serde(default)]
    pub aerial: Option<PathBuf>,
    /// One binary mask per transport mode, in pedestrian/cyclist/vehicle order.
    #[serde(default)]
    pub segmented: Vec<PathBuf>,
    #[serde(default)]
    pub heat_map_cache: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            frame_rate: self.frame_rate,
            frame_step: self.frame_step,
            meters_per_pixel: self.meters_per_pixel,
        }
    }

    /// Loads the trajectory file and applies `target_fps` resampling if set.
    pub fn load(&self) -> Result<SceneDataset> {
        let ds = load_dataset(&self.trajectories, &self.meta())?;
        match self.target_fps {
            Some(fps) => resample(&ds, fps),
            None => Ok(ds),
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.trajectories);
        if let Some(p) = self.rasters.aerial.as_mut() {
            fix(p);
        }
        for p in &mut self.rasters.segmented {
            fix(p);
        }
        if let Some(p) = self.rasters.heat_map_cache.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("manifest: name must not be empty".into()));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config("manifest: frame_rate must be > 0".into()));
        }
        if !(self.meters_per_pixel > 0.0) {
            return Err(Error::Config("manifest: meters_per_pixel must be > 0".into()));
        }
        if self.frame_step < 1 {
            return Err(Error::Config("manifest: frame_step must be >= 1".into()));
        }
        if !self.trajectories.exists() {
            return Err(Error::Config(format!(
                "manifest: trajectories file {} does not exist",
                self.trajectories.display()
            )));
        }
        Ok(())
    }
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<DatasetManifest> {
    let mut m: DatasetManifest =
        toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    m.resolve(base);
    Ok(m)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}
