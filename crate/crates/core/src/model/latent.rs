//! Diagonal-Gaussian latent utilities and the variational loss on plain
//! vectors. The batched, differentiable versions live on the tape.

use serde::{Deserialize, Serialize};

use crate::dataio::Point;
use crate::error::{Error, Result};

/// Mean and log-variance of a diagonal Gaussian posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentParams {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentParams {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// `z = mu + exp(log_var / 2) * epsilon`.
pub fn reparameterize(lp: &LatentParams, epsilon: &[f64]) -> Result<Vec<f64>> {
    if epsilon.len() != lp.dim() || lp.log_var.len() != lp.dim() {
        return Err(Error::Shape(format!(
            "latent dim {} but epsilon has {} entries",
            lp.dim(),
            epsilon.len()
        )));
    }
    Ok(lp
        .mu
        .iter()
        .zip(&lp.log_var)
        .zip(epsilon)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Closed-form `KL(N(mu, diag(exp(log_var))) || N(0, I))`.
pub fn kl_divergence(lp: &LatentParams) -> f64 {
    0.5 * lp
        .mu
        .iter()
        .zip(&lp.log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Mean squared error over every coordinate of every step.
pub fn mse(pred: &[Point], truth: &[Point]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "mse over {} predicted and {} true steps",
            pred.len(),
            truth.len()
        )));
    }
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2))
        .sum();
    Ok(sum / (2 * pred.len()) as f64)
}

/// Reconstruction MSE plus weighted KL term.
pub fn elbo_loss(pred: &[Point], truth: &[Point], lp: &LatentParams, kl_weight: f64) -> Result<f64> {
    Ok(mse(pred, truth)? + kl_weight * kl_divergence(lp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(mu: &[f64], lv: &[f64]) -> LatentParams {
        LatentParams {
            mu: mu.to_vec(),
            log_var: lv.to_vec(),
        }
    }

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(kl_divergence(&lp(&[0.0; 16], &[0.0; 16])), 0.0);
        assert!((kl_divergence(&lp(&[1.0], &[0.0])) - 0.5).abs() < 1e-12);
        assert!(kl_divergence(&lp(&[0.0], &[0.3])) > 0.0);
    }

    #[test]
    fn reparameterize_cases() {
        let p = lp(&[1.0, -2.0], &[0.4, -1.0]);
        assert_eq!(reparameterize(&p, &[0.0, 0.0]).unwrap(), p.mu);
        let unit = lp(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(reparameterize(&unit, &[0.3, -1.7]).unwrap(), vec![0.3, -1.7]);
        assert!(reparameterize(&p, &[0.0]).is_err());
    }

    #[test]
    fn elbo_is_mse_plus_weighted_kl() {
        let pred = [[1.0, 2.0], [0.5, 0.0]];
        let truth = [[0.0, 2.0], [0.5, 1.0]];
        let p = lp(&[0.5, 0.1], &[0.2, -0.3]);
        let m = mse(&pred, &truth).unwrap();
        assert_eq!(m, 0.5);
        let total = elbo_loss(&pred, &truth, &p, 0.7).unwrap();
        assert!((total - (m + 0.7 * kl_divergence(&p))).abs() < 1e-15);
        assert_eq!(elbo_loss(&truth, &truth, &lp(&[0.0], &[0.0]), 1.0).unwrap(), 0.0);
    }
}
