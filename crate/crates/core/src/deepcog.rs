//! Asymmetric capacity-forecast loss used as the comparison baseline.
//!
//! With `x = prediction - target`:
//!
//! ```text
//!            | over_slope * x                                   x >= 0
//! loss(x) =  | alpha_penalty * (-x) / epsilon_smooth             -epsilon_smooth <= x < 0
//!            | alpha_penalty + under_slope * (-x - epsilon_smooth) x < -epsilon_smooth
//! ```
//!
//! Overprovisioning costs grow linearly. Underprovisioning reaches the full
//! violation penalty within `epsilon_smooth` and keeps a small residual slope
//! past it.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DeepCogError {
    #[error("invalid baseline loss settings: {0}")]
    Config(String),
    #[error("length mismatch: {0} predictions vs {1} targets")]
    Shape(usize, usize),
    #[error("empty batch")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeepCogLossConfig {
    alpha_penalty: f64,
    epsilon_smooth: f64,
    over_slope: f64,
    under_slope: f64,
}

impl Default for DeepCogLossConfig {
    fn default() -> Self {
        Self { alpha_penalty: 1.0, epsilon_smooth: 0.05, over_slope: 1.0, under_slope: 0.1 }
    }
}

impl DeepCogLossConfig {
    pub fn new(alpha_penalty: f64, epsilon_smooth: f64, over_slope: f64, under_slope: f64) -> Result<Self, DeepCogError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(DeepCogError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("alpha_penalty", alpha_penalty)?;
        positive("epsilon_smooth", epsilon_smooth)?;
        positive("over_slope", over_slope)?;
        if !(under_slope >= 0.0 && under_slope.is_finite()) {
            return Err(DeepCogError::Config(format!("under_slope must be non-negative, got {under_slope}")));
        }
        if alpha_penalty / epsilon_smooth <= over_slope {
            return Err(DeepCogError::Config(format!(
                "ramp slope alpha_penalty/epsilon_smooth = {} must exceed over_slope = {over_slope}",
                alpha_penalty / epsilon_smooth
            )));
        }
        Ok(Self { alpha_penalty, epsilon_smooth, over_slope, under_slope })
    }

    pub fn alpha_penalty(&self) -> f64 {
        self.alpha_penalty
    }

    pub fn epsilon_smooth(&self) -> f64 {
        self.epsilon_smooth
    }

    pub fn over_slope(&self) -> f64 {
        self.over_slope
    }

    pub fn under_slope(&self) -> f64 {
        self.under_slope
    }
}

pub fn deepcog_loss(prediction: f64, target: f64, cfg: &DeepCogLossConfig) -> f64 {
    let x = prediction - target;
    if x >= 0.0 {
        cfg.over_slope * x
    } else if x >= -cfg.epsilon_smooth {
        cfg.alpha_penalty * (-x) / cfg.epsilon_smooth
    } else {
        cfg.alpha_penalty + cfg.under_slope * (-x - cfg.epsilon_smooth)
    }
}

/// Derivative with respect to `prediction`; right-hand derivative at the
/// breakpoints.
pub fn deepcog_gradient(prediction: f64, target: f64, cfg: &DeepCogLossConfig) -> f64 {
    let x = prediction - target;
    if x >= 0.0 {
        cfg.over_slope
    } else if x >= -cfg.epsilon_smooth {
        -cfg.alpha_penalty / cfg.epsilon_smooth
    } else {
        -cfg.under_slope
    }
}

/// Mean loss over a batch and its derivative with respect to each prediction.
pub fn deepcog_batch(predictions: &[f64], targets: &[f64], cfg: &DeepCogLossConfig) -> Result<(f64, Vec<f64>), DeepCogError> {
    if predictions.len() != targets.len() {
        return Err(DeepCogError::Shape(predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Err(DeepCogError::Empty);
    }
    let n = predictions.len() as f64;
    let loss = predictions.iter().zip(targets).map(|(&f, &y)| deepcog_loss(f, y, cfg)).sum::<f64>() / n;
    let grad = predictions.iter().zip(targets).map(|(&f, &y)| deepcog_gradient(f, y, cfg) / n).collect();
    Ok((loss, grad))
}
