//! Structured response payloads: what each prompt asks the model to return
//! and how a raw JSON reply is validated.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{make_distribution, OpinionDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpectedSchema {
    /// `{"justification": str, "score": int}`
    ScoreWithJustification,
    /// `{"justification": str, "distribution": [num; C]}`
    DistributionWithJustification,
    /// Same keys; justification expected to be empty.
    DistributionOnly,
}

/// Accepted range for the sum of a DD reply before renormalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumTolerance {
    pub min: f64,
    pub max: f64,
}

impl Default for SumTolerance {
    fn default() -> Self {
        SumTolerance { min: 95.0, max: 105.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParsedPayload {
    Score { score: u32, justification: String },
    Distribution { distribution: Vec<f64>, justification: String },
}

impl ParsedPayload {
    /// Normalized distribution of a DD payload.
    pub fn to_distribution(&self) -> Option<OpinionDistribution> {
        match self {
            ParsedPayload::Distribution { distribution, .. } => {
                make_distribution(distribution, distribution.len()).ok()
            }
            ParsedPayload::Score { .. } => None,
        }
    }
}

/// Contract violations in a model reply. All of them are retryable.
#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum PayloadError {
    #[error("reply is not a JSON object: {detail}")]
    InvalidJson { detail: String },
    #[error("missing or mistyped key {key:?}")]
    MissingKey { key: String },
    #[error("score {score} outside 1..={cardinality}")]
    ScoreOutOfRange { score: i64, cardinality: usize },
    #[error("distribution has {got} entries, expected {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("distribution entry {value} is negative or not finite")]
    BadEntry { value: f64 },
    #[error("distribution sums to {sum}, outside [{min}, {max}]")]
    SumOutOfRange { sum: f64, min: f64, max: f64 },
}

fn justification(obj: &serde_json::Map<String, Value>, required: bool) -> core::result::Result<String, PayloadError> {
    match obj.get("justification") {
        Some(Value::String(s)) => Ok(s.clone()),
        None | Some(Value::Null) if !required => Ok(String::new()),
        _ => Err(PayloadError::MissingKey { key: "justification".into() }),
    }
}

/// Validates a raw reply against the schema the prompt requested.
pub fn parse_payload(
    raw: &str,
    schema: ExpectedSchema,
    cardinality: usize,
    tolerance: SumTolerance,
) -> core::result::Result<ParsedPayload, PayloadError> {
    let value: Value = serde_json::from_str(raw.trim())
        .map_err(|e| PayloadError::InvalidJson { detail: e.to_string() })?;
    let Value::Object(obj) = value else {
        return Err(PayloadError::InvalidJson { detail: "top-level value is not an object".into() });
    };
    match schema {
        ExpectedSchema::ScoreWithJustification => {
            let justification = justification(&obj, true)?;
            let missing = || PayloadError::MissingKey { key: "score".into() };
            let number = obj.get("score").and_then(Value::as_number).ok_or_else(missing)?;
            let score = match (number.as_i64(), number.as_f64()) {
                (Some(i), _) => i,
                (None, Some(f)) if libm::trunc(f) == f && f.abs() < 1e9 => f as i64,
                _ => return Err(missing()),
            };
            if score < 1 || score as usize > cardinality {
                return Err(PayloadError::ScoreOutOfRange { score, cardinality });
            }
            Ok(ParsedPayload::Score { score: score as u32, justification })
        }
        ExpectedSchema::DistributionWithJustification | ExpectedSchema::DistributionOnly => {
            let justification =
                justification(&obj, schema == ExpectedSchema::DistributionWithJustification)?;
            let missing = || PayloadError::MissingKey { key: "distribution".into() };
            let items = obj.get("distribution").and_then(Value::as_array).ok_or_else(missing)?;
            if items.len() != cardinality {
                return Err(PayloadError::WrongLength { expected: cardinality, got: items.len() });
            }
            let mut distribution = Vec::with_capacity(items.len());
            for item in items {
                let v = item.as_f64().ok_or_else(missing)?;
                if !v.is_finite() || v < 0.0 {
                    return Err(PayloadError::BadEntry { value: v });
                }
                distribution.push(v);
            }
            let sum: f64 = distribution.iter().sum();
            if !(tolerance.min..=tolerance.max).contains(&sum) {
                return Err(PayloadError::SumOutOfRange { sum, min: tolerance.min, max: tolerance.max });
            }
            Ok(ParsedPayload::Distribution { distribution, justification })
        }
    }
}

/// Empirical distribution of repeated single-respondent scores over `1..=C`.
pub fn empirical_distribution(scores: &[u32], cardinality: usize, label: &str) -> Result<OpinionDistribution> {
    if scores.is_empty() {
        return Err(Error::MissingDistribution(label.to_string()));
    }
    let mut counts = vec![0.0; cardinality];
    for &s in scores {
        if s == 0 || s as usize > cardinality {
            return Err(Error::Payload(PayloadError::ScoreOutOfRange { score: s as i64, cardinality }));
        }
        counts[s as usize - 1] += 1.0;
    }
    make_distribution(&counts, cardinality)
}
