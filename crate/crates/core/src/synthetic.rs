//! Seeded constant-velocity scenes with mixed agent types.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{AgentId, AgentTrack, AgentType, SceneDataset, TrackPoint};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub name: String,
    pub agents: usize,
    /// Frames per track.
    pub track_len: usize,
    /// Frames over which track starts are spread.
    pub timeline: usize,
    pub frame_rate: f64,
    /// Side of the square area start positions are drawn from, meters.
    pub area: f64,
    /// Mean speed per type (pedestrian, cyclist, vehicle), meters per step.
    pub type_speeds: [f64; 3],
    /// Spread of per-agent mean speed around its type mean, meters per step.
    pub speed_spread: f64,
    /// Standard deviation of per-step speed noise along the heading.
    pub speed_noise: f64,
    pub meters_per_pixel: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            agents: 200,
            track_len: 40,
            timeline: 400,
            frame_rate: 2.5,
            area: 60.0,
            type_speeds: [0.5, 1.5, 3.0],
            speed_spread: 0.1,
            speed_noise: 0.05,
            meters_per_pixel: 0.5,
            seed: 7,
        }
    }
}

/// Agents cycle through the three types; each walks a straight line with a
/// fixed heading and noisy speed, starting at a random frame.
pub fn generate(spec: &SyntheticSpec) -> Result<SceneDataset> {
    if spec.agents == 0 || spec.track_len < 2 {
        return Err(Error::invalid("synthetic scene needs agents and tracks of >= 2 frames"));
    }
    let noise = Normal::new(0.0, spec.speed_noise)
        .map_err(|e| Error::invalid(format!("speed noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let latest_start = spec.timeline.saturating_sub(spec.track_len).max(1);
    let tracks = (0..spec.agents)
        .map(|i| {
            let agent_type = AgentType::ALL[i % 3];
            let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let dir = [heading.cos(), heading.sin()];
            let speed = spec.type_speeds[agent_type.index()] + rng.random_range(-1.0..=1.0) * spec.speed_spread;
            let start = rng.random_range(0..latest_start) as i64;
            let mut pos = [rng.random_range(0.0..spec.area), rng.random_range(0.0..spec.area)];
            let mut samples = Vec::with_capacity(spec.track_len);
            for k in 0..spec.track_len {
                if k > 0 {
                    let step = speed + noise.sample(&mut rng);
                    pos = [pos[0] + step * dir[0], pos[1] + step * dir[1]];
                }
                samples.push(TrackPoint { frame: start + k as i64, pos });
            }
            AgentTrack {
                agent_id: AgentId(i as u64 + 1),
                agent_type,
                samples,
            }
        })
        .collect();
    SceneDataset::new(spec.name.clone(), spec.frame_rate, 1, spec.meters_per_pixel, tracks)
}
