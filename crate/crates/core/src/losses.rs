//! Scalar reference kernels: focal loss, smooth-L1, density regression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    alpha: f64,
    gamma: f64,
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Domain(format!("alpha {alpha} outside (0, 1]")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!(
                "gamma {gamma} must be finite and >= 0"
            )));
        }
        Ok(Self { alpha, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// `-alpha * (1 - p_t)^gamma * ln(p_t)` for the true-class probability `p_t`.
pub fn focal_loss(p_t: f64, params: FocalParams) -> Result<f64> {
    if !(p_t > 0.0 && p_t <= 1.0) {
        return Err(Error::Domain(format!("p_t {p_t} outside (0, 1]")));
    }
    if p_t == 1.0 {
        return Ok(0.0);
    }
    Ok(-params.alpha * (1.0 - p_t).powf(params.gamma) * p_t.ln())
}

pub const DEFAULT_BETA: f64 = 1.0;

/// Quadratic below `beta`, linear above.
pub fn smooth_l1(x: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("beta {beta} must be positive")));
    }
    let a = x.abs();
    Ok(if a < beta {
        0.5 * x * x / beta
    } else {
        a - 0.5 * beta
    })
}

/// Mean smooth-L1 (beta = 1) between predicted and target densities.
pub fn density_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "density loss needs equal nonempty inputs, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    if let Some(t) = target.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Domain(format!("density target {t} outside [0, 1]")));
    }
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(target) {
        sum += smooth_l1(p - t, DEFAULT_BETA)?;
    }
    Ok(sum / pred.len() as f64)
}
