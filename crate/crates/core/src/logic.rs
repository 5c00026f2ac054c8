//! Fuzzy-logic satisfaction loss.
//!
//! A regressor is trained to satisfy one axiom: for every paired sample
//! `(prediction_i, target_i)`, `eq(prediction_i, target_i)` holds. The smooth
//! equality predicate is
//!
//! ```text
//! eq(f, y) = 1 / (1 + alpha * ||f - y||)
//! ```
//!
//! and the universal quantifier over the paired (diagonal) samples is the
//! p-mean error aggregator
//!
//! ```text
//! phi = 1 - ((1/N) * sum_i (1 - eq_i)^p)^(1/p)
//! ```
//!
//! Training minimises `loss = 1 - phi`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LogicError {
    #[error("length mismatch: {0} predictions vs {1} targets")]
    Shape(usize, usize),
    #[error("{0}")]
    Usage(String),
}

/// Parameters of the `eq` predicate and the `Forall` aggregator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzyConfig {
    alpha: f64,
    p: f64,
}

impl FuzzyConfig {
    pub fn new(alpha: f64, p: f64) -> Result<Self, LogicError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(LogicError::Usage(format!("alpha must be positive, got {alpha}")));
        }
        if !(p >= 1.0 && p.is_finite()) {
            return Err(LogicError::Usage(format!("p must be at least 1, got {p}")));
        }
        Ok(Self { alpha, p })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl Default for FuzzyConfig {
    /// `alpha = 0.5`, `p = 2`.
    fn default() -> Self {
        Self { alpha: 0.5, p: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatisfactionReport {
    pub phi: f64,
    pub per_sample_eq: Vec<f64>,
    /// Always `1.0 - phi`.
    pub loss: f64,
}

fn distance(prediction: &[f64], target: &[f64]) -> Result<f64, LogicError> {
    if prediction.len() != target.len() {
        return Err(LogicError::Shape(prediction.len(), target.len()));
    }
    Ok(prediction.iter().zip(target).map(|(f, y)| (f - y) * (f - y)).sum::<f64>().sqrt())
}

/// Smooth equality between two vectors, in (0, 1].
pub fn eq_predicate(prediction: &[f64], target: &[f64], alpha: f64) -> Result<f64, LogicError> {
    let d = distance(prediction, target)?;
    Ok(1.0 / (1.0 + alpha * d))
}

/// Derivative of [`eq_predicate`] with respect to each prediction component.
/// At zero distance the zero vector is returned.
pub fn eq_gradient(prediction: &[f64], target: &[f64], alpha: f64) -> Result<Vec<f64>, LogicError> {
    let d = distance(prediction, target)?;
    if d == 0.0 {
        return Ok(vec![0.0; prediction.len()]);
    }
    let denom = d * (1.0 + alpha * d) * (1.0 + alpha * d);
    Ok(prediction.iter().zip(target).map(|(f, y)| -alpha * (f - y) / denom).collect())
}

fn scalar_eq(prediction: f64, target: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + alpha * (prediction - target).abs())
}

fn scalar_eq_gradient(prediction: f64, target: f64, alpha: f64) -> f64 {
    let x = prediction - target;
    if x == 0.0 {
        return 0.0;
    }
    let s = 1.0 + alpha * x.abs();
    -alpha * x.signum() / (s * s)
}

/// p-mean error of `(1 - eq_i)`; zero when every value is 1.
fn p_mean_error(eq_values: &[f64], p: f64) -> f64 {
    let n = eq_values.len() as f64;
    if p == 1.0 {
        eq_values.iter().map(|a| 1.0 - a).sum::<f64>() / n
    } else {
        (eq_values.iter().map(|a| (1.0 - a).powf(p)).sum::<f64>() / n).powf(1.0 / p)
    }
}

/// Universal quantification over paired samples: `1 - p_mean_error`.
pub fn forall_diag(eq_values: &[f64], p: f64) -> Result<f64, LogicError> {
    if eq_values.is_empty() {
        return Err(LogicError::Usage("cannot quantify over an empty sample".into()));
    }
    if !(p >= 1.0) {
        return Err(LogicError::Usage(format!("p must be at least 1, got {p}")));
    }
    if let Some(bad) = eq_values.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(LogicError::Usage(format!("truth value {bad} outside (0, 1]")));
    }
    Ok(1.0 - p_mean_error(eq_values, p))
}

pub fn satisfaction_loss(phi: f64) -> Result<f64, LogicError> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(LogicError::Usage(format!("satisfaction {phi} outside [0, 1]")));
    }
    Ok(1.0 - phi)
}

/// Satisfaction of the axiom over a batch of scalar predictions, and the
/// derivative of `1 - phi` with respect to each prediction.
pub fn loss_and_grad(
    predictions: &[f64],
    targets: &[f64],
    cfg: &FuzzyConfig,
) -> Result<(SatisfactionReport, Vec<f64>), LogicError> {
    if predictions.len() != targets.len() {
        return Err(LogicError::Shape(predictions.len(), targets.len()));
    }
    let alpha = cfg.alpha;
    let per_sample_eq: Vec<f64> =
        predictions.iter().zip(targets).map(|(&f, &y)| scalar_eq(f, y, alpha)).collect();
    let phi = forall_diag(&per_sample_eq, cfg.p)?;
    let loss = satisfaction_loss(phi)?;

    // loss = M, the p-mean error; dM/d eq_i = -(1/N) (e_i / M)^(p-1).
    let n = predictions.len() as f64;
    let m = p_mean_error(&per_sample_eq, cfg.p);
    let grad = predictions
        .iter()
        .zip(targets)
        .zip(&per_sample_eq)
        .map(|((&f, &y), &a)| {
            if m == 0.0 {
                return 0.0;
            }
            let d_loss_d_eq = -((1.0 - a) / m).powf(cfg.p - 1.0) / n;
            d_loss_d_eq * scalar_eq_gradient(f, y, alpha)
        })
        .collect();
    Ok((SatisfactionReport { phi, per_sample_eq, loss }, grad))
}
