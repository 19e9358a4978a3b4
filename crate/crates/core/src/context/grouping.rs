//! Density-based clustering and temporal group detection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataio::{AgentId, Point};

pub const NOISE: i32 = -1;

/// Plain DBSCAN over 2-D points.
///
/// A point is core when at least `min_pts` points (itself included) lie within
/// `eps`. Clusters are the density-reachable closures of core points; points
/// reachable from no core point are labelled [`NOISE`]. Cluster labels are
/// assigned in order of the lowest-index core point of each cluster.
pub fn dbscan(points: &[Point], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| {
                    let dx = points[i][0] - points[j][0];
                    let dy = points[i][1] - points[j][1];
                    dx * dx + dy * dy <= eps2
                })
                .collect()
        })
        .collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts.max(1)).collect();

    let mut labels = vec![NOISE; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for seed in 0..n {
        if !is_core[seed] || labels[seed] != NOISE {
            continue;
        }
        labels[seed] = next;
        stack.push(seed);
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if labels[q] == NOISE {
                    labels[q] = next;
                    if is_core[q] {
                        stack.push(q);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingParams {
    /// DBSCAN neighbourhood radius in meters.
    pub eps: f64,
    pub min_pts: usize,
    /// Fraction of observed steps two agents must share a cluster.
    pub coexist_rate: f64,
}

impl Default for GroupingParams {
    fn default() -> Self {
        Self {
            eps: 1.5,
            min_pts: 2,
            coexist_rate: 0.9,
        }
    }
}

/// Group member sets `G_i` per agent. Symmetric and irreflexive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupAssignment {
    members: BTreeMap<AgentId, BTreeSet<AgentId>>,
}

impl GroupAssignment {
    pub fn members_of(&self, agent: AgentId) -> &BTreeSet<AgentId> {
        static EMPTY: BTreeSet<AgentId> = BTreeSet::new();
        self.members.get(&agent).unwrap_or(&EMPTY)
    }

    pub fn are_grouped(&self, a: AgentId, b: AgentId) -> bool {
        self.members_of(a).contains(&b)
    }

    pub fn iter(&self) -> impl Iterator<Item = (AgentId, &BTreeSet<AgentId>)> {
        self.members.iter().map(|(k, v)| (*k, v))
    }

    /// Builds an assignment from explicit pairs (symmetrized, self-pairs dropped).
    pub fn from_pairs(pairs: impl IntoIterator<Item = (AgentId, AgentId)>) -> Self {
        let mut g = Self::default();
        for (a, b) in pairs {
            if a != b {
                g.members.entry(a).or_default().insert(b);
                g.members.entry(b).or_default().insert(a);
            }
        }
        g
    }
}

/// Detects groups over an observation window.
///
/// `steps[t]` lists every agent present at observed step `t`. DBSCAN runs on
/// each step independently; `j` joins `G_i` when the two share a (non-noise)
/// cluster on at least `coexist_rate` of all observed steps.
pub fn detect_groups(steps: &[Vec<(AgentId, Point)>], params: &GroupingParams) -> GroupAssignment {
    let mut together: BTreeMap<(AgentId, AgentId), usize> = BTreeMap::new();
    for step in steps {
        let pts: Vec<Point> = step.iter().map(|a| a.1).collect();
        let labels = dbscan(&pts, params.eps, params.min_pts);
        for i in 0..step.len() {
            if labels[i] == NOISE {
                continue;
            }
            for j in (i + 1)..step.len() {
                if labels[j] == labels[i] {
                    let (a, b) = ordered(step[i].0, step[j].0);
                    *together.entry((a, b)).or_default() += 1;
                }
            }
        }
    }
    let total = steps.len().max(1) as f64;
    GroupAssignment::from_pairs(
        together
            .into_iter()
            .filter(|&(_, c)| c as f64 / total >= params.coexist_rate)
            .map(|(pair, _)| pair),
    )
}

fn ordered(a: AgentId, b: AgentId) -> (AgentId, AgentId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(i: u64) -> AgentId {
        AgentId(i)
    }

    #[test]
    fn two_close_points_cluster() {
        assert_eq!(dbscan(&[[0.0, 0.0], [1.0, 0.0]], 1.5, 2), vec![0, 0]);
    }

    #[test]
    fn isolated_point_is_noise() {
        let labels = dbscan(&[[0.0, 0.0], [1.0, 0.0], [10.0, 10.0]], 1.5, 2);
        assert_eq!(labels[2], NOISE);
        assert_eq!(labels[0], labels[1]);
    }

    #[test]
    fn chain_is_one_cluster() {
        let pts: Vec<Point> = (0..5).map(|k| [k as f64 * 1.4, 0.0]).collect();
        assert_eq!(dbscan(&pts, 1.5, 2), vec![0; 5]);
        // With min_pts 3 the endpoints are border points, still reachable.
        assert_eq!(dbscan(&pts, 1.5, 3), vec![0; 5]);
    }

    #[test]
    fn border_point_between_two_cores() {
        // Border point at 1.0 belongs to whichever cluster reaches it first.
        let pts = [[-0.5, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.5, 0.0]];
        let labels = dbscan(&pts, 1.0, 3);
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[3], labels[4]);
        assert_ne!(labels[2], NOISE);
    }

    fn window(steps: usize, f: impl Fn(usize) -> Vec<(AgentId, Point)>) -> Vec<Vec<(AgentId, Point)>> {
        (0..steps).map(f).collect()
    }

    #[test]
    fn persistent_pair_is_grouped() {
        let w = window(8, |t| vec![(id(1), [t as f64, 0.0]), (id(2), [t as f64, 1.0])]);
        let g = detect_groups(&w, &GroupingParams::default());
        assert!(g.are_grouped(id(1), id(2)));
        assert!(g.are_grouped(id(2), id(1)));
        assert!(!g.are_grouped(id(1), id(1)));
    }

    #[test]
    fn seven_of_eight_is_not_enough() {
        let w = window(8, |t| {
            let dy = if t == 3 { 5.0 } else { 1.0 };
            vec![(id(1), [0.0, 0.0]), (id(2), [0.0, dy])]
        });
        let g = detect_groups(&w, &GroupingParams::default());
        assert!(!g.are_grouped(id(1), id(2)));
        // 7/8 passes a lower threshold.
        let lax = GroupingParams {
            coexist_rate: 0.85,
            ..Default::default()
        };
        assert!(detect_groups(&w, &lax).are_grouped(id(1), id(2)));
    }

    #[test]
    fn absent_steps_count_against_rate() {
        let w = window(8, |t| {
            let mut v = vec![(id(1), [0.0, 0.0])];
            if t > 0 {
                v.push((id(2), [0.5, 0.0]));
            }
            v
        });
        assert!(!detect_groups(&w, &GroupingParams::default()).are_grouped(id(1), id(2)));
    }

    #[test]
    fn triple_is_mutually_grouped() {
        let w = window(8, |_| vec![(id(1), [0.0, 0.0]), (id(2), [1.0, 0.0]), (id(3), [0.5, 0.8])]);
        let g = detect_groups(&w, &GroupingParams::default());
        for a in 1..=3 {
            let expected: BTreeSet<_> = (1..=3).filter(|&b| b != a).map(id).collect();
            assert_eq!(g.members_of(id(a)), &expected);
        }
    }
}
