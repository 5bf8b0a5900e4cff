//! Goodness of fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient of determination around the evaluation set's own mean.
/// `None` when the target has no spread.
pub fn r_squared(y: &[f64], pred: &[f64]) -> Result<Option<f64>> {
    if y.len() != pred.len() {
        return Err(Error::Shape { expected: y.len(), got: pred.len() });
    }
    if y.is_empty() {
        return Ok(None);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let scale = mean.abs().max(1.0);
    if sst <= 1e-24 * n * scale * scale {
        return Ok(None);
    }
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(Some(1.0 - sse / sst))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub r2: Option<f64>,
    pub mse: f64,
}

pub fn evaluate(y: &[f64], pred: &[f64]) -> Result<Evaluation> {
    let r2 = r_squared(y, pred)?;
    let mse = if y.is_empty() {
        0.0
    } else {
        y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
    };
    Ok(Evaluation { n: y.len(), r2, mse })
}
