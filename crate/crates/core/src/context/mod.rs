//! Context features around a target agent: group detection, polar occupancy
//! grids and scene rasters.

pub mod grouping;
pub mod occupancy;
pub mod raster;

pub use grouping::{dbscan, detect_groups, GroupAssignment, GroupingParams, NOISE};
pub use occupancy::{build_occupancy, heading_angles, GridSpec, OccupancyGrid, ReferenceFrame};
pub use raster::{
    build_heat_map, build_heat_raster, load_raster, load_raster_cache, save_raster_cache,
    scene_tensor, world_to_pixel, RasterKind, SceneMode, SceneRaster, SceneTensor, SceneTensorSpec,
};
