//! Error metrics shared by prediction and tracking evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub rmse_um: f64,
    pub max_ae_um: f64,
    pub mean_abs_um: f64,
    pub n: usize,
    /// Signed residuals `prediction − truth` (µm).
    pub residuals_um: Vec<f64>,
}

/// RMSE, MaxAE and mean absolute error of `predictions − truths`, both in mm,
/// reported in µm.
pub fn evaluate(predictions: &[f64], truths: &[f64]) -> Result<PredictionReport> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    ensure_finite("predictions", predictions)?;
    ensure_finite("truths", truths)?;
    let residuals_um: Vec<f64> = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t) * 1000.0)
        .collect();
    let n = residuals_um.len();
    let sq = residuals_um.iter().map(|r| r * r).sum::<f64>() / n as f64;
    let max_ae_um = residuals_um.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let mean_abs_um = residuals_um.iter().map(|r| r.abs()).sum::<f64>() / n as f64;
    // sqrt(mean) can exceed the max by one ulp when all residuals are equal.
    let rmse_um = sq.sqrt().min(max_ae_um);
    Ok(PredictionReport {
        rmse_um,
        max_ae_um,
        mean_abs_um,
        n,
        residuals_um,
    })
}
