//! Ranking sampled futures by per-step bivariate Gaussian likelihood.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dataio::Point;
use crate::error::{Error, Result};
use crate::model::PredictionSet;

/// Smallest standard deviation allowed on either axis, in meters.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Bound on the absolute correlation coefficient.
pub const RHO_CLAMP: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateGaussian {
    pub mu_xy: Point,
    pub sigma_xy: Point,
    pub rho: f64,
}

impl BivariateGaussian {
    pub fn log_pdf(&self, p: Point) -> f64 {
        let [sx, sy] = self.sigma_xy;
        let dx = (p[0] - self.mu_xy[0]) / sx;
        let dy = (p[1] - self.mu_xy[1]) / sy;
        let one_m = 1.0 - self.rho * self.rho;
        let q = (dx * dx - 2.0 * self.rho * dx * dy + dy * dy) / one_m;
        -(2.0 * PI * sx * sy * one_m.sqrt()).ln() - 0.5 * q
    }

    pub fn pdf(&self, p: Point) -> f64 {
        self.log_pdf(p).exp()
    }
}

/// Maximum-likelihood fit (denominator `N`) with floors and clamps applied.
pub fn fit_bivariate_gaussian(points: &[Point]) -> Result<BivariateGaussian> {
    if points.len() < 2 {
        return Err(Error::invalid(format!(
            "fitting a bivariate Gaussian needs >= 2 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        vx += dx * dx;
        vy += dy * dy;
        cxy += dx * dy;
    }
    let (sx, sy) = ((vx / n).sqrt(), (vy / n).sqrt());
    let rho = if sx > SIGMA_FLOOR && sy > SIGMA_FLOOR {
        (cxy / n / (sx * sy)).clamp(-RHO_CLAMP, RHO_CLAMP)
    } else {
        0.0
    };
    Ok(BivariateGaussian {
        mu_xy: [mx, my],
        sigma_xy: [sx.max(SIGMA_FLOOR), sy.max(SIGMA_FLOOR)],
        rho,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPredictions {
    /// Trajectory indices by descending score, ties by lowest index.
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RankedPredictions {
    pub fn best_index(&self) -> usize {
        self.order[0]
    }
}

/// Scores each trajectory by its summed log-density under per-step fits.
pub fn rank_trajectories(trajectories: &[Vec<Point>]) -> Result<RankedPredictions> {
    let n = trajectories.len();
    if n < 2 {
        return Err(Error::invalid(format!("ranking needs >= 2 trajectories, got {n}")));
    }
    let steps = trajectories[0].len();
    if steps == 0 || trajectories.iter().any(|t| t.len() != steps) {
        return Err(Error::Shape("trajectories must share a non-zero length".into()));
    }
    if trajectories.iter().flatten().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::invalid("non-finite predicted position"));
    }
    let mut scores = vec![0.0; n];
    let mut column = Vec::with_capacity(n);
    for t in 0..steps {
        column.clear();
        column.extend(trajectories.iter().map(|traj| traj[t]));
        let g = fit_bivariate_gaussian(&column)?;
        for (s, p) in scores.iter_mut().zip(&column) {
            *s += g.log_pdf(*p);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(RankedPredictions { order, scores })
}

pub fn rank_predictions(pred: &PredictionSet) -> Result<RankedPredictions> {
    rank_trajectories(&pred.trajectories)
}

#[cfg(test)]
#[path = "ranking_tests.rs"]
mod tests;
