//! Polar occupancy grids of non-group neighbours.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dataio::{AgentId, Point};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceFrame {
    /// Angles measured from the target's direction of travel.
    HeadingRelative,
    /// Angles measured from the world +x axis.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub num_orientation_bins: usize,
    pub num_distance_bins: usize,
    /// Outer radius of the grid in meters.
    pub max_radius: f64,
    pub reference_frame: ReferenceFrame,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            num_orientation_bins: 8,
            num_distance_bins: 8,
            max_radius: 8.0,
            reference_frame: ReferenceFrame::HeadingRelative,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_orientation_bins == 0 || self.num_distance_bins == 0 {
            return Err(Error::Config("grid: bin counts must be >= 1".into()));
        }
        if !(self.max_radius > 0.0) || !self.max_radius.is_finite() {
            return Err(Error::Config("grid: max_radius must be > 0".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.num_orientation_bins * self.num_distance_bins
    }

    pub fn angular_width(&self) -> f64 {
        2.0 * PI / self.num_orientation_bins as f64
    }

    pub fn radial_width(&self) -> f64 {
        self.max_radius / self.num_distance_bins as f64
    }

    /// Polar cell `(orientation, distance)` of a neighbour displaced by `delta`
    /// from the target, or `None` beyond `max_radius`.
    ///
    /// Bins are half-open: angles `[-pi + r*w, -pi + (r+1)*w)` relative to the
    /// reference direction and rings `[d*h, (d+1)*h)`. A neighbour exactly at
    /// `max_radius` is kept in the outermost ring; one at zero distance is
    /// treated as lying straight along the reference direction.
    pub fn cell_of(&self, reference_angle: f64, delta: Point) -> Option<(usize, usize)> {
        let dist = delta[0].hypot(delta[1]);
        if dist > self.max_radius {
            return None;
        }
        let angle = if dist == 0.0 {
            0.0
        } else {
            wrap_angle(delta[1].atan2(delta[0]) - reference_angle)
        };
        let r = (((angle + PI) / self.angular_width()) as usize).min(self.num_orientation_bins - 1);
        let d = ((dist / self.radial_width()) as usize).min(self.num_distance_bins - 1);
        Some((r, d))
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Direction of travel at every step, as an angle.
///
/// Step `t` uses the most recent nonzero displacement ending at or before `t`.
/// Steps preceding any motion borrow the first nonzero displacement of the
/// segment; a target that never moves faces +x.
pub fn heading_angles(positions: &[Point]) -> Vec<f64> {
    let moves: Vec<Option<f64>> = (0..positions.len())
        .map(|t| {
            if t == 0 {
                return None;
            }
            let dx = positions[t][0] - positions[t - 1][0];
            let dy = positions[t][1] - positions[t - 1][1];
            (dx != 0.0 || dy != 0.0).then(|| dy.atan2(dx))
        })
        .collect();
    let first = moves.iter().flatten().next().copied().unwrap_or(0.0);
    let mut current = first;
    moves
        .iter()
        .map(|m| {
            if let Some(a) = m {
                current = *a;
            }
            current
        })
        .collect()
}

/// Per-step `R x D` neighbour counts, stored row-major as `[t][r][d]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub steps: usize,
    pub orientation_bins: usize,
    pub distance_bins: usize,
    pub counts: Vec<u32>,
}

impl OccupancyGrid {
    pub fn zeros(steps: usize, spec: &GridSpec) -> Self {
        Self {
            steps,
            orientation_bins: spec.num_orientation_bins,
            distance_bins: spec.num_distance_bins,
            counts: vec![0; steps * spec.cells()],
        }
    }

    fn offset(&self, t: usize, r: usize, d: usize) -> usize {
        (t * self.orientation_bins + r) * self.distance_bins + d
    }

    pub fn get(&self, t: usize, r: usize, d: usize) -> u32 {
        self.counts[self.offset(t, r, d)]
    }

    pub fn step(&self, t: usize) -> &[u32] {
        let n = self.orientation_bins * self.distance_bins;
        &self.counts[t * n..(t + 1) * n]
    }

    pub fn step_total(&self, t: usize) -> u32 {
        self.step(t).iter().sum()
    }
}

/// Counts non-group neighbours per polar cell at every step.
///
/// `neighbors[t]` lists the agents present at step `t`; the target itself and
/// members of `group` are skipped. With [`ReferenceFrame::HeadingRelative`]
/// the orientation is measured from [`heading_angles`] of `target`.
pub fn build_occupancy(
    target_id: AgentId,
    target: &[Point],
    neighbors: &[Vec<(AgentId, Point)>],
    group: &BTreeSet<AgentId>,
    spec: &GridSpec,
) -> Result<OccupancyGrid> {
    if neighbors.len() != target.len() {
        return Err(Error::Shape(format!(
            "occupancy: {} target steps but {} neighbour steps",
            target.len(),
            neighbors.len()
        )));
    }
    let reference: Vec<f64> = match spec.reference_frame {
        ReferenceFrame::HeadingRelative => heading_angles(target),
        ReferenceFrame::Global => vec![0.0; target.len()],
    };
    let mut grid = OccupancyGrid::zeros(target.len(), spec);
    for (t, present) in neighbors.iter().enumerate() {
        for &(j, pos) in present {
            if j == target_id || group.contains(&j) {
                continue;
            }
            let delta = [pos[0] - target[t][0], pos[1] - target[t][1]];
            if let Some((r, d)) = spec.cell_of(reference[t], delta) {
                let k = grid.offset(t, r, d);
                grid.counts[k] += 1;
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moving_east(steps: usize) -> Vec<Point> {
        (0..steps).map(|t| [t as f64, 0.0]).collect()
    }

    #[test]
    fn single_neighbor_ahead() {
        let spec = GridSpec::default();
        let target = moving_east(3);
        let nb: Vec<_> = target.iter().map(|p| vec![(AgentId(2), [p[0] + 2.0, p[1]])]).collect();
        let g = build_occupancy(AgentId(1), &target, &nb, &BTreeSet::new(), &spec).unwrap();
        for t in 0..3 {
            assert_eq!(g.step_total(t), 1);
            // Straight ahead is angle 0, the start of sector 4 of 8; 2 m is ring 2.
            assert_eq!(g.get(t, 4, 2), 1);
        }
    }

    #[test]
    fn group_member_is_not_counted() {
        let spec = GridSpec::default();
        let target = moving_east(3);
        let nb: Vec<_> = target.iter().map(|p| vec![(AgentId(2), [p[0] + 2.0, p[1]])]).collect();
        let group: BTreeSet<_> = [AgentId(2)].into();
        let g = build_occupancy(AgentId(1), &target, &nb, &group, &spec).unwrap();
        assert!(g.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn same_cell_accumulates() {
        let spec = GridSpec::default();
        let target = moving_east(1);
        let nb = vec![vec![(AgentId(2), [2.1, 0.3]), (AgentId(3), [2.2, 0.2]), (AgentId(1), [0.0, 0.0])]];
        let g = build_occupancy(AgentId(1), &target, &nb, &BTreeSet::new(), &spec).unwrap();
        assert_eq!(g.get(0, 4, 2), 2);
        assert_eq!(g.step_total(0), 2);
    }

    #[test]
    fn heading_rotates_cells() {
        let spec = GridSpec::default();
        // Moving north.
        let target: Vec<Point> = (0..2).map(|t| [0.0, t as f64]).collect();
        // World angle pi/8 is -3pi/8 relative to north: centre of sector 2.
        let (s, c) = (PI / 8.0).sin_cos();
        let nb: Vec<_> = target
            .iter()
            .map(|p| vec![(AgentId(2), [p[0] + 3.5 * c, p[1] + 3.5 * s])])
            .collect();
        let g = build_occupancy(AgentId(1), &target, &nb, &BTreeSet::new(), &spec).unwrap();
        assert_eq!(g.get(1, 2, 3), 1);
        let global = GridSpec {
            reference_frame: ReferenceFrame::Global,
            ..spec
        };
        let g = build_occupancy(AgentId(1), &target, &nb, &BTreeSet::new(), &global).unwrap();
        assert_eq!(g.get(1, 4, 3), 1);
    }

    #[test]
    fn ring_boundaries() {
        let spec = GridSpec::default();
        assert_eq!(spec.cell_of(0.0, [1.0, 0.0]), Some((4, 1)));
        assert_eq!(spec.cell_of(0.0, [8.0, 0.0]), Some((4, 7)));
        assert_eq!(spec.cell_of(0.0, [8.0001, 0.0]), None);
        assert_eq!(spec.cell_of(0.0, [-1.0, 0.0]).unwrap().0, 0);
        assert_eq!(spec.cell_of(1.0, [0.0, 0.0]), Some((4, 0)));
    }

    #[test]
    fn stationary_target_faces_plus_x() {
        assert_eq!(heading_angles(&[[1.0, 1.0]; 4]), vec![0.0; 4]);
        let a = heading_angles(&[[0.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        assert!(a.iter().all(|&x| (x - PI / 2.0).abs() < 1e-12));
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }
}
