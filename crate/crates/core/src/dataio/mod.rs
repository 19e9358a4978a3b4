//! Trajectory datasets: parsing, resampling, chronological splits and
//! sliding-window sample extraction.
//!
//! World coordinates are in meters throughout. Frame ids are integers in the
//! source clock; consecutive samples of a contiguous track differ by the
//! dataset's `frame_step`.

mod manifest;

pub use manifest::{load_manifest, DatasetManifest, RasterPaths};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2-D world coordinate or displacement, in meters.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentType {
    Pedestrian,
    Cyclist,
    Vehicle,
}

impl AgentType {
    pub const ALL: [AgentType; 3] = [AgentType::Pedestrian, AgentType::Cyclist, AgentType::Vehicle];

    /// Position of this type in the one-hot encoding.
    pub fn index(self) -> usize {
        match self {
            AgentType::Pedestrian => 0,
            AgentType::Cyclist => 1,
            AgentType::Vehicle => 2,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            AgentType::Pedestrian => "pedestrian",
            AgentType::Cyclist => "cyclist",
            AgentType::Vehicle => "vehicle",
        }
    }
}

impl fmt::Display for AgentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for AgentType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pedestrian" | "ped" => Ok(AgentType::Pedestrian),
            "cyclist" | "cyc" | "bicycle" | "biker" => Ok(AgentType::Cyclist),
            "vehicle" | "veh" | "car" => Ok(AgentType::Vehicle),
            _ => Err(Error::UnknownAgentType(s.to_string())),
        }
    }
}

/// One-hot type vector: pedestrian (1,0,0), cyclist (0,1,0), vehicle (0,0,1).
pub fn encode_agent_type(agent_type: AgentType) -> [f64; 3] {
    let mut v = [0.0; 3];
    v[agent_type.index()] = 1.0;
    v
}

/// Parses a type token and one-hot encodes it.
pub fn encode_agent_type_token(token: &str) -> Result<[f64; 3]> {
    token.parse().map(encode_agent_type)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: i64,
    pub pos: Point,
}

/// One agent's typed, frame-ordered path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: AgentId,
    pub agent_type: AgentType,
    pub samples: Vec<TrackPoint>,
}

impl AgentTrack {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first_frame(&self) -> Option<i64> {
        self.samples.first().map(|s| s.frame)
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.samples.last().map(|s| s.frame)
    }

    /// Splits the track into maximal runs whose consecutive frames differ by
    /// exactly `frame_step`.
    pub fn contiguous_runs(&self, frame_step: i64) -> Vec<&[TrackPoint]> {
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 1..=self.samples.len() {
            let broken = i == self.samples.len()
                || self.samples[i].frame - self.samples[i - 1].frame != frame_step;
            if broken {
                runs.push(&self.samples[start..i]);
                start = i;
            }
        }
        runs.retain(|r| !r.is_empty());
        runs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDataset {
    pub name: String,
    /// Sampling rate in Hz.
    pub frame_rate: f64,
    /// Frame-id increment between consecutive samples of a contiguous track.
    pub frame_step: i64,
    pub meters_per_pixel: f64,
    pub tracks: Vec<AgentTrack>,
}

impl SceneDataset {
    pub fn new(
        name: impl Into<String>,
        frame_rate: f64,
        frame_step: i64,
        meters_per_pixel: f64,
        mut tracks: Vec<AgentTrack>,
    ) -> Result<Self> {
        if !(frame_rate > 0.0) || !frame_rate.is_finite() {
            return Err(Error::invalid(format!("frame_rate must be > 0, got {frame_rate}")));
        }
        if frame_step < 1 {
            return Err(Error::invalid(format!("frame_step must be >= 1, got {frame_step}")));
        }
        if !(meters_per_pixel > 0.0) || !meters_per_pixel.is_finite() {
            return Err(Error::invalid(format!(
                "meters_per_pixel must be > 0, got {meters_per_pixel}"
            )));
        }
        let mut seen = HashSet::new();
        for t in &tracks {
            if !seen.insert(t.agent_id) {
                return Err(Error::invalid(format!("duplicate agent id {}", t.agent_id)));
            }
            if t.samples.is_empty() {
                return Err(Error::invalid(format!("agent {} has no samples", t.agent_id)));
            }
            if t.samples.windows(2).any(|w| w[1].frame <= w[0].frame) {
                return Err(Error::invalid(format!(
                    "agent {} frames are not strictly increasing",
                    t.agent_id
                )));
            }
        }
        tracks.sort_by_key(|t| t.agent_id);
        Ok(Self {
            name: name.into(),
            frame_rate,
            frame_step,
            meters_per_pixel,
            tracks,
        })
    }

    /// Inclusive (first, last) frame over all tracks.
    pub fn frame_range(&self) -> Option<(i64, i64)> {
        let first = self.tracks.iter().filter_map(|t| t.first_frame()).min()?;
        let last = self.tracks.iter().filter_map(|t| t.last_frame()).max()?;
        Some((first, last))
    }

    pub fn track(&self, id: AgentId) -> Option<&AgentTrack> {
        self.tracks
            .binary_search_by_key(&id, |t| t.agent_id)
            .ok()
            .map(|i| &self.tracks[i])
    }

    pub fn type_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for t in &self.tracks {
            counts[t.agent_type.index()] += 1;
        }
        counts
    }

    pub fn num_records(&self) -> usize {
        self.tracks.iter().map(AgentTrack::len).sum()
    }

    pub fn frame_index(&self) -> FrameIndex {
        FrameIndex::build(&self.tracks)
    }

    /// Keeps only samples whose frame satisfies `keep`; empty tracks are dropped.
    pub fn filter_frames(&self, keep: impl Fn(i64) -> bool) -> SceneDataset {
        let tracks = self
            .tracks
            .iter()
            .filter_map(|t| {
                let samples: Vec<_> = t.samples.iter().copied().filter(|s| keep(s.frame)).collect();
                (!samples.is_empty()).then(|| AgentTrack {
                    agent_id: t.agent_id,
                    agent_type: t.agent_type,
                    samples,
                })
            })
            .collect();
        SceneDataset {
            tracks,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> SceneDataset {
        SceneDataset {
            name: self.name.clone(),
            frame_rate: self.frame_rate,
            frame_step: self.frame_step,
            meters_per_pixel: self.meters_per_pixel,
            tracks: Vec::new(),
        }
    }
}

/// Positions of every agent present at each frame, sorted by agent id.
#[derive(Debug, Clone, Default)]
pub struct FrameIndex {
    frames: BTreeMap<i64, Vec<(AgentId, AgentType, Point)>>,
}

impl FrameIndex {
    pub fn build(tracks: &[AgentTrack]) -> Self {
        let mut frames: BTreeMap<i64, Vec<(AgentId, AgentType, Point)>> = BTreeMap::new();
        for t in tracks {
            for s in &t.samples {
                frames
                    .entry(s.frame)
                    .or_default()
                    .push((t.agent_id, t.agent_type, s.pos));
            }
        }
        for agents in frames.values_mut() {
            agents.sort_by_key(|a| a.0);
        }
        Self { frames }
    }

    pub fn at(&self, frame: i64) -> &[(AgentId, AgentType, Point)] {
        self.frames.get(&frame).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn position(&self, frame: i64, agent: AgentId) -> Option<Point> {
        let agents = self.at(frame);
        agents
            .binary_search_by_key(&agent, |a| a.0)
            .ok()
            .map(|i| agents[i].2)
    }
}

/// Metadata that the trajectory file itself does not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub name: String,
    pub frame_rate: f64,
    pub frame_step: i64,
    pub meters_per_pixel: f64,
}

/// Parses trajectory records `frame_id agent_id x y type`, whitespace or comma
/// separated. Blank lines and lines starting with `#` are skipped.
pub fn parse_trajectories(text: &str, source: &str) -> Result<Vec<AgentTrack>> {
    let mut by_agent: BTreeMap<AgentId, (AgentType, usize, Vec<TrackPoint>)> = BTreeMap::new();
    let mut seen: HashSet<(i64, AgentId)> = HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = lineno + 1;
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: lineno,
            msg,
        };
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let frame = parse_integer(fields[0]).ok_or_else(|| err(format!("bad frame id {:?}", fields[0])))?;
        let agent = parse_integer(fields[1])
            .filter(|&a| a >= 0)
            .map(|a| AgentId(a as u64))
            .ok_or_else(|| err(format!("bad agent id {:?}", fields[1])))?;
        let x: f64 = fields[2].parse().map_err(|_| err(format!("bad x {:?}", fields[2])))?;
        let y: f64 = fields[3].parse().map_err(|_| err(format!("bad y {:?}", fields[3])))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(err("non-finite coordinate".into()));
        }
        let agent_type: AgentType = fields[4]
            .parse()
            .map_err(|_| err(format!("unknown agent type {:?}", fields[4])))?;
        if !seen.insert((frame, agent)) {
            return Err(err(format!("duplicate record for agent {agent} at frame {frame}")));
        }
        let entry = by_agent
            .entry(agent)
            .or_insert_with(|| (agent_type, lineno, Vec::new()));
        if entry.0 != agent_type {
            return Err(err(format!(
                "agent {agent} was {} on line {}, now {agent_type}",
                entry.0, entry.1
            )));
        }
        entry.2.push(TrackPoint { frame, pos: [x, y] });
    }
    Ok(by_agent
        .into_iter()
        .map(|(agent_id, (agent_type, _, mut samples))| {
            samples.sort_by_key(|s| s.frame);
            AgentTrack {
                agent_id,
                agent_type,
                samples,
            }
        })
        .collect())
}

/// Accepts plain integers and integral floats such as `780.0`, which some
/// public datasets use for frame and agent ids.
fn parse_integer(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = s.parse().ok()?;
    (f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

pub fn load_dataset(path: &Path, meta: &DatasetMeta) -> Result<SceneDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tracks = parse_trajectories(&text, &path.display().to_string())?;
    SceneDataset::new(
        meta.name.clone(),
        meta.frame_rate,
        meta.frame_step,
        meta.meters_per_pixel,
        tracks,
    )
}

/// Serializes records in frame order, one `frame agent x y type` line each.
pub fn write_trajectories(dataset: &SceneDataset) -> String {
    let mut rows: Vec<(i64, AgentId, Point, AgentType)> = dataset
        .tracks
        .iter()
        .flat_map(|t| t.samples.iter().map(move |s| (s.frame, t.agent_id, s.pos, t.agent_type)))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut out = String::with_capacity(rows.len() * 40);
    for (frame, id, pos, ty) in rows {
        // `{}` on f64 prints the shortest representation that round-trips.
        out.push_str(&format!("{frame} {id} {} {} {ty}\n", pos[0], pos[1]));
    }
    out
}

/// Integer-stride temporal subsampling.
///
/// The source rate must be an integer multiple of `target_fps`. Kept frames
/// are those on the stride lattice anchored at the dataset's first frame, so
/// agents that were co-present stay co-present.
pub fn resample(dataset: &SceneDataset, target_fps: f64) -> Result<SceneDataset> {
    if !(target_fps > 0.0) {
        return Err(Error::invalid(format!("target fps must be > 0, got {target_fps}")));
    }
    let ratio = dataset.frame_rate / target_fps;
    let stride = ratio.round();
    if stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::invalid(format!(
            "frame rate {} is not an integer multiple of {target_fps} (ratio {ratio})",
            dataset.frame_rate
        )));
    }
    let stride = stride as i64;
    if stride == 1 {
        return Ok(dataset.clone());
    }
    let Some((first, _)) = dataset.frame_range() else {
        return Ok(SceneDataset {
            frame_rate: target_fps,
            frame_step: dataset.frame_step * stride,
            ..dataset.clone()
        });
    };
    let lattice = dataset.frame_step * stride;
    let mut out = dataset.filter_frames(|f| (f - first).rem_euclid(lattice) == 0);
    out.frame_rate = target_fps;
    out.frame_step = lattice;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: SceneDataset,
    pub test: SceneDataset,
    /// Test frames are `< boundary_frame`, train frames `>= boundary_frame`.
    pub boundary_frame: i64,
}

/// Splits by time: the earliest `test_fraction` of the global frame range is
/// the test split and the rest is training. Tracks crossing the boundary are
/// cut in two, so no window can straddle it.
pub fn chronological_split(dataset: &SceneDataset, test_fraction: f64) -> Result<SplitResult> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let (first, last) = dataset
        .frame_range()
        .ok_or_else(|| Error::invalid("cannot split an empty dataset"))?;
    let boundary_frame = fraction_boundary(first, last, dataset.frame_step, test_fraction);
    Ok(SplitResult {
        train: dataset.filter_frames(|f| f >= boundary_frame),
        test: dataset.filter_frames(|f| f < boundary_frame),
        boundary_frame,
    })
}

/// Frame at `fraction` of the span `[first, last + step)`.
pub(crate) fn fraction_boundary(first: i64, last: i64, step: i64, fraction: f64) -> i64 {
    let span = (last - first + step) as f64;
    first + (fraction * span).round() as i64
}

/// One sliding window of a single agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub agent_id: AgentId,
    pub agent_type: AgentType,
    pub type_onehot: [f64; 3],
    pub start_frame: i64,
    pub frame_step: i64,
    pub obs_positions: Vec<Point>,
    pub fut_positions: Vec<Point>,
    /// `T - 1` consecutive differences of the observed positions.
    pub obs_offsets: Vec<Point>,
    /// `T'` offsets; the first is measured from the last observed position.
    pub fut_offsets: Vec<Point>,
    /// Other agents present at each of the `T + T'` window frames.
    pub neighbor_ids_per_step: Vec<Vec<AgentId>>,
}

impl TrainingSample {
    pub fn obs_len(&self) -> usize {
        self.obs_positions.len()
    }

    pub fn pred_len(&self) -> usize {
        self.fut_positions.len()
    }

    pub fn frame_at(&self, step: usize) -> i64 {
        self.start_frame + step as i64 * self.frame_step
    }

    pub fn last_observed(&self) -> Point {
        *self.obs_positions.last().expect("window has observed steps")
    }
}

/// Builds every `T + T'` window of every contiguous track run, advancing by
/// `stride` steps.
pub fn make_windows(
    dataset: &SceneDataset,
    obs_len: usize,
    pred_len: usize,
    stride: usize,
) -> Result<Vec<TrainingSample>> {
    if obs_len < 2 || pred_len < 1 || stride < 1 {
        return Err(Error::invalid(format!(
            "window needs T >= 2, T' >= 1, stride >= 1 (got {obs_len}, {pred_len}, {stride})"
        )));
    }
    let index = dataset.frame_index();
    let total = obs_len + pred_len;
    let mut samples = Vec::new();
    for track in &dataset.tracks {
        for run in track.contiguous_runs(dataset.frame_step) {
            if run.len() < total {
                continue;
            }
            for start in (0..=run.len() - total).step_by(stride) {
                let window = &run[start..start + total];
                samples.push(window_sample(track, window, obs_len, dataset.frame_step, &index));
            }
        }
    }
    Ok(samples)
}

fn window_sample(
    track: &AgentTrack,
    window: &[TrackPoint],
    obs_len: usize,
    frame_step: i64,
    index: &FrameIndex,
) -> TrainingSample {
    let positions: Vec<Point> = window.iter().map(|s| s.pos).collect();
    let obs_positions = positions[..obs_len].to_vec();
    let fut_positions = positions[obs_len..].to_vec();
    let obs_offsets = differences(&obs_positions);
    let fut_offsets = differences(&positions[obs_len - 1..]);
    let neighbor_ids_per_step = window
        .iter()
        .map(|s| {
            index
                .at(s.frame)
                .iter()
                .map(|a| a.0)
                .filter(|&id| id != track.agent_id)
                .collect()
        })
        .collect();
    TrainingSample {
        agent_id: track.agent_id,
        agent_type: track.agent_type,
        type_onehot: encode_agent_type(track.agent_type),
        start_frame: window[0].frame,
        frame_step,
        obs_positions,
        fut_positions,
        obs_offsets,
        fut_offsets,
        neighbor_ids_per_step,
    }
}

fn differences(positions: &[Point]) -> Vec<Point> {
    positions
        .windows(2)
        .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
        .collect()
}

/// Consecutive differences of a position sequence (`K >= 2`).
pub fn positions_to_offsets(positions: &[Point]) -> Result<Vec<Point>> {
    if positions.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 positions to form offsets, got {}",
            positions.len()
        )));
    }
    Ok(differences(positions))
}

/// Running sum of offsets starting from `origin`; the origin itself is not
/// part of the output.
pub fn offsets_to_positions(origin: Point, offsets: &[Point]) -> Vec<Point> {
    let mut cur = origin;
    offsets
        .iter()
        .map(|o| {
            cur = [cur[0] + o[0], cur[1] + o[1]];
            cur
        })
        .collect()
}

/// Distinct agent ids appearing in the given samples.
pub fn sample_agents(samples: &[TrainingSample]) -> BTreeSet<AgentId> {
    samples.iter().map(|s| s.agent_id).collect()
}
