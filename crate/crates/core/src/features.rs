//! Turns windows into model inputs for a given variant: grouping-aware
//! occupancy grids and scene tensors.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::context::{
    build_heat_raster, build_occupancy, detect_groups, load_raster, load_raster_cache, scene_tensor,
    GridSpec, GroupingParams, RasterKind, SceneMode, SceneRaster, SceneTensor, SceneTensorSpec,
};
use crate::context::raster::extent_for;
use crate::dataio::{AgentId, DatasetManifest, FrameIndex, Point, SceneDataset, TrainingSample};
use crate::error::{Error, Result};
use crate::model::{Branches, ModelSample, SceneShape};
use crate::variant::Variant;

/// Settings of the context features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub grid: GridSpec,
    pub grouping: GroupingParams,
    pub scene: SceneTensorSpec,
    /// Heat-map blur standard deviation in pixels.
    pub heat_kernel_std: f64,
    /// Border added around the track extent when a heat map is sized from data.
    pub heat_margin_px: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            grouping: GroupingParams::default(),
            scene: SceneTensorSpec::default(),
            heat_kernel_std: 3.0,
            heat_margin_px: 16,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.grouping.eps > 0.0) || self.grouping.min_pts == 0 {
            return Err(Error::Config("grouping.eps must be > 0 and grouping.min_pts >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.grouping.coexist_rate) {
            return Err(Error::Config("grouping.coexist_rate must lie in [0, 1]".into()));
        }
        if self.scene.input_size == 0 || !(self.scene.crop_size_m > 0.0) {
            return Err(Error::Config("scene.input_size and scene.crop_size_m must be positive".into()));
        }
        if !(self.heat_kernel_std > 0.0) {
            return Err(Error::Config("heat_kernel_std must be > 0".into()));
        }
        Ok(())
    }
}

/// Branch layout of a model for `variant`.
pub fn branches_for(variant: Variant, features: &FeatureConfig, raster: Option<&SceneRaster>) -> Result<Branches> {
    let occupancy_cells = variant.uses_grouping().then(|| features.grid.cells());
    let scene = match (variant.scene_kind(), raster) {
        (None, _) => None,
        (Some(_), Some(r)) => Some(SceneShape {
            size: features.scene.input_size,
            channels: r.channels(),
        }),
        (Some(kind), None) => {
            return Err(Error::Config(format!("variant {variant} needs a {kind:?} raster")));
        }
    };
    Ok(Branches { occupancy_cells, scene })
}

/// Scene raster used by `variant`, if any.
///
/// Heat maps come from the manifest's cache when it exists, otherwise they are
/// built from `train` only and sized by the manifest or by `extent_tracks`.
pub fn scene_raster(
    variant: Variant,
    manifest: Option<&DatasetManifest>,
    train: &SceneDataset,
    extent_tracks: &SceneDataset,
    features: &FeatureConfig,
) -> Result<Option<SceneRaster>> {
    let Some(kind) = variant.scene_kind() else {
        return Ok(None);
    };
    let expected = manifest.and_then(|m| Some((m.raster_width?, m.raster_height?)));
    let mpp = train.meters_per_pixel;
    let raster = match kind {
        RasterKind::HeatMap => {
            if let Some(cache) = manifest.and_then(|m| m.rasters.heat_map_cache.as_deref()).filter(|p| p.exists()) {
                load_raster_cache(cache)?
            } else {
                let shape = match expected {
                    Some((w, h)) => (h as usize, w as usize),
                    None => extent_for(&extent_tracks.tracks, mpp, features.heat_margin_px),
                };
                build_heat_raster(&train.tracks, shape, features.heat_kernel_std, mpp)?
            }
        }
        RasterKind::Aerial => {
            let path = manifest
                .and_then(|m| m.rasters.aerial.as_deref())
                .ok_or_else(|| Error::Config(format!("variant {variant} needs rasters.aerial")))?;
            load_raster(path, kind, mpp, expected)?
        }
        RasterKind::Segmented => {
            let paths: &[std::path::PathBuf] = manifest.map(|m| m.rasters.segmented.as_slice()).unwrap_or(&[]);
            if paths.is_empty() {
                return Err(Error::Config(format!("variant {variant} needs rasters.segmented")));
            }
            let parts = paths
                .iter()
                .map(|p| load_raster(p, kind, mpp, expected))
                .collect::<Result<Vec<_>>>()?;
            SceneRaster::stack(&parts)?
        }
    };
    Ok(Some(raster))
}

/// Loads a raster from an explicit path, picking the decoder by extension.
pub fn load_any_raster(path: &Path, kind: RasterKind, meters_per_pixel: f64) -> Result<SceneRaster> {
    if path.extension().is_some_and(|e| e == "png" || e == "PNG") {
        load_raster(path, kind, meters_per_pixel, None)
    } else {
        load_raster_cache(path)
    }
}

fn step_agents(index: &FrameIndex, frames: impl Iterator<Item = i64>) -> Vec<Vec<(AgentId, Point)>> {
    frames
        .map(|f| index.at(f).iter().map(|a| (a.0, a.2)).collect())
        .collect()
}

/// Builds the inputs `variant` needs for each window of `dataset`.
///
/// Groups are detected on the observed steps only and reused for the future
/// occupancy grids. In static scene mode every sample shares one tensor.
pub fn prepare_samples(
    dataset: &SceneDataset,
    windows: Vec<TrainingSample>,
    variant: Variant,
    raster: Option<&SceneRaster>,
    features: &FeatureConfig,
) -> Result<Vec<ModelSample>> {
    if variant.scene_kind().is_some() && raster.is_none() {
        return Err(Error::Config(format!("variant {variant} needs a scene raster")));
    }
    let index = dataset.frame_index();
    let shared_scene: Option<Arc<SceneTensor>> = match (raster, features.scene.mode) {
        (Some(r), SceneMode::Static) if variant.scene_kind().is_some() => {
            Some(Arc::new(scene_tensor(r, &[], &features.scene)))
        }
        _ => None,
    };
    windows
        .into_iter()
        .map(|window| {
            let mut sample = ModelSample::motion_only(dataset.name.clone(), window);
            let w = &sample.window;
            let (t_obs, t_pred) = (w.obs_len(), w.pred_len());
            if variant.uses_grouping() {
                let past = step_agents(&index, (0..t_obs).map(|k| w.frame_at(k)));
                let future = step_agents(&index, (t_obs..t_obs + t_pred).map(|k| w.frame_at(k)));
                let groups = detect_groups(&past, &features.grouping);
                let group: BTreeSet<AgentId> = groups.members_of(w.agent_id).clone();
                sample.past_occupancy =
                    Some(build_occupancy(w.agent_id, &w.obs_positions, &past, &group, &features.grid)?);
                sample.future_occupancy =
                    Some(build_occupancy(w.agent_id, &w.fut_positions, &future, &group, &features.grid)?);
            }
            if let Some(shared) = &shared_scene {
                sample.past_scene = Some(Arc::clone(shared));
                sample.future_scene = Some(Arc::clone(shared));
            } else if let (Some(r), true) = (raster, variant.scene_kind().is_some()) {
                sample.past_scene = Some(Arc::new(scene_tensor(r, &w.obs_positions, &features.scene)));
                sample.future_scene = Some(Arc::new(scene_tensor(r, &w.fut_positions, &features.scene)));
            }
            Ok(sample)
        })
        .collect()
}
