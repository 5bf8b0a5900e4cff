//! Deterministic offline backend driven by a JSON script.
//!
//! A script is a list of rules tried in order; the first whose `match` glob
//! fits the canonical permutation key answers. For example:
//!
//! ```json
//! {
//!   "seed": 7,
//!   "rules": [
//!     {"match": "q_broken|*", "respond": {"mode": "raw", "text": "not json"}},
//!     {"match": "*|SI|*", "fail_first": 1, "respond": {"mode": "truth", "mode_collapse": 0.5}},
//!     {"match": "*|DD|*", "respond": {"mode": "truth", "noise_sd": 0.03}}
//!   ]
//! }
//! ```
//!
//! `truth` answers from the human distribution of the same question and cell.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use aipoll_core::payload::ExpectedSchema;
use aipoll_core::{DemographicCell, Framework, OpinionDistribution};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, ChatRequest};
use crate::error::{format_err, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub seed: u64,
    pub rules: Vec<MockRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub pattern: String,
    /// Transient failures returned before the first real reply to each request.
    #[serde(default)]
    pub fail_first: u32,
    pub respond: MockResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MockResponse {
    /// The same JSON payload every time.
    Static { payload: Value },
    /// A literal reply body, which need not be JSON.
    Raw { text: String },
    /// Successive attempts at one request get successive payloads; the last repeats.
    Sequence { payloads: Vec<Value> },
    /// SI score for repeat `i` is `scores[i % len]`.
    Scores { scores: Vec<u32> },
    Truth {
        /// Chance that a permutation answers every SI repeat with the modal category.
        #[serde(default)]
        mode_collapse: f64,
        /// Gaussian noise on each DD probability before renormalizing.
        #[serde(default)]
        noise_sd: f64,
    },
    Transient { detail: String },
    Fatal { detail: String },
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|e| format_err(path, e))
    }

    /// Answers from the human data: SI collapses onto the mode for some
    /// permutations, DD adds mild noise.
    pub fn truth(seed: u64) -> Self {
        MockScript {
            seed,
            rules: vec![
                MockRule {
                    pattern: "*|SI|*".into(),
                    fail_first: 0,
                    respond: MockResponse::Truth { mode_collapse: 0.5, noise_sd: 0.0 },
                },
                MockRule {
                    pattern: "*|DD|*".into(),
                    fail_first: 0,
                    respond: MockResponse::Truth { mode_collapse: 0.0, noise_sd: 0.03 },
                },
            ],
        }
    }
}

pub type Truth = BTreeMap<(String, DemographicCell), OpinionDistribution>;

pub struct MockBackend {
    script: MockScript,
    truth: Truth,
    calls: Mutex<BTreeMap<(String, u32), u32>>,
}

impl MockBackend {
    pub fn new(script: MockScript, truth: Truth) -> Self {
        MockBackend { script, truth, calls: Mutex::new(BTreeMap::new()) }
    }

    pub fn total_calls(&self) -> u64 {
        self.calls.lock().expect("call lock").values().map(|&n| u64::from(n)).sum()
    }

    /// Calls made for each (key, repeat) pair.
    pub fn call_counts(&self) -> BTreeMap<(String, u32), u32> {
        self.calls.lock().expect("call lock").clone()
    }

    fn rng(&self, parts: &[&str]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.script.seed.to_le_bytes());
        for p in parts {
            h.update(p.as_bytes());
            h.update([0]);
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn truth_for(&self, request: &ChatRequest<'_>) -> OpinionDistribution {
        self.truth
            .get(&(request.key.question_id.clone(), request.key.cell))
            .cloned()
            .unwrap_or_else(|| {
                let c = request.cardinality;
                OpinionDistribution::from_probs(vec![1.0 / c as f64; c]).expect("uniform is valid")
            })
    }

    fn answer_from_truth(&self, request: &ChatRequest<'_>, attempt: u32, mode_collapse: f64, noise_sd: f64) -> Value {
        let key = request.key.canonical();
        let truth = self.truth_for(request);
        let probs = truth.probs();
        if request.key.variant.framework == Framework::SI {
            let collapsed = self.rng(&[&key, "collapse"]).random::<f64>() < mode_collapse;
            let score = if collapsed {
                let mut best = 0;
                for (i, p) in probs.iter().enumerate() {
                    if *p > probs[best] {
                        best = i;
                    }
                }
                best + 1
            } else {
                let mut rng = self.rng(&[&key, &request.repeat_index.to_string(), &attempt.to_string()]);
                WeightedIndex::new(probs).expect("distribution has mass").sample(&mut rng) + 1
            };
            return json!({"justification": "Answering as the described respondent.", "score": score});
        }
        let mut rng = self.rng(&[&key, &request.repeat_index.to_string(), &attempt.to_string()]);
        let noise = Normal::new(0.0, noise_sd * 100.0).expect("noise_sd is finite and non-negative");
        let mut values: Vec<f64> = probs.iter().map(|p| (p * 100.0 + noise.sample(&mut rng)).max(0.0)).collect();
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            values = probs.iter().map(|p| p * 100.0).collect();
        } else {
            values.iter_mut().for_each(|v| *v *= 100.0 / total);
        }
        let values: Vec<f64> = values.iter().map(|v| (v * 1000.0).round() / 1000.0).collect();
        let justification = match request.schema {
            ExpectedSchema::DistributionOnly => "",
            _ => "Estimated from the group's typical views.",
        };
        json!({"justification": justification, "distribution": values})
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        let key = request.key.canonical();
        let attempt = {
            let mut calls = self.calls.lock().expect("call lock");
            let n = calls.entry((key.clone(), request.repeat_index)).or_default();
            *n += 1;
            *n - 1
        };
        let Some(rule) = self.script.rules.iter().find(|r| glob(&r.pattern, &key)) else {
            return Err(BackendError::Fatal(format!("no mock rule matches {key}")));
        };
        if attempt < rule.fail_first {
            return Err(BackendError::Transient(format!("scripted failure {} of {}", attempt + 1, rule.fail_first)));
        }
        let attempt = attempt - rule.fail_first;
        let reply = match &rule.respond {
            MockResponse::Static { payload } => payload.clone(),
            MockResponse::Raw { text } => return Ok(text.clone()),
            MockResponse::Sequence { payloads } => match payloads.get(attempt as usize).or(payloads.last()) {
                Some(p) => p.clone(),
                None => return Err(BackendError::Fatal("empty mock sequence".into())),
            },
            MockResponse::Scores { scores } if !scores.is_empty() => {
                let score = scores[request.repeat_index as usize % scores.len()];
                json!({"justification": "Scripted answer.", "score": score})
            }
            MockResponse::Scores { .. } => return Err(BackendError::Fatal("empty mock score list".into())),
            MockResponse::Truth { mode_collapse, noise_sd } => {
                self.answer_from_truth(request, attempt, *mode_collapse, *noise_sd)
            }
            MockResponse::Transient { detail } => return Err(BackendError::Transient(detail.clone())),
            MockResponse::Fatal { detail } => return Err(BackendError::Fatal(detail.clone())),
        };
        Ok(reply.to_string())
    }
}

/// Shell-style match where `*` spans any run of characters.
fn glob(pattern: &str, text: &str) -> bool {
    let (p, t) = (pattern.as_bytes(), text.as_bytes());
    let (mut pi, mut ti) = (0, 0);
    let mut backtrack: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] == b'*' {
            backtrack = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some((bp, bt)) = backtrack {
            pi = bp + 1;
            ti = bt + 1;
            backtrack = Some((bp, bt + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == b'*')
}

#[cfg(test)]
mod tests {
    use super::*;
    use aipoll_core::{Gender, Ideology, PermutationKey, PromptVariant, Race};

    #[test]
    fn glob_matching() {
        assert!(glob("*", "anything"));
        assert!(glob("*|SI|*", "q1|Liberal|Man|White|SI|cot=1|dist=0"));
        assert!(!glob("*|DD|*", "q1|Liberal|Man|White|SI|cot=1|dist=0"));
        assert!(glob("q1|*|dist=1", "q1|Liberal|Man|White|DD|cot=0|dist=1"));
        assert!(!glob("q1|*|dist=1", "q10|Liberal|Man|White|DD|cot=0|dist=0"));
        assert!(glob("a*b*c", "aXXbYc"));
    }

    fn request<'a>(key: &'a PermutationKey, repeat: u32) -> ChatRequest<'a> {
        ChatRequest {
            key,
            repeat_index: repeat,
            cardinality: 4,
            prompt: "",
            schema: aipoll_core::prompt::expected_schema(key.variant),
        }
    }

    #[test]
    fn truth_mode_is_deterministic() {
        let cell = DemographicCell::new(Ideology::Conservative, Gender::Woman, Race::White);
        let truth: Truth =
            [(("q1".to_string(), cell), OpinionDistribution::from_probs(vec![0.1, 0.2, 0.3, 0.4]).unwrap())].into();
        let key = PermutationKey::new("q1", cell, PromptVariant::dd(false, false));
        let a = MockBackend::new(MockScript::truth(3), truth.clone()).complete(&request(&key, 0)).unwrap();
        let b = MockBackend::new(MockScript::truth(3), truth.clone()).complete(&request(&key, 0)).unwrap();
        assert_eq!(a, b);
        let v: Value = serde_json::from_str(&a).unwrap();
        let sum: f64 = v["distribution"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((sum - 100.0).abs() < 0.01);
        assert_eq!(v["justification"], "");

        let si = PermutationKey::new("q1", cell, PromptVariant::si());
        let backend = MockBackend::new(MockScript::truth(3), truth);
        for r in 0..20 {
            let v: Value = serde_json::from_str(&backend.complete(&request(&si, r)).unwrap()).unwrap();
            assert!((1..=4).contains(&v["score"].as_u64().unwrap()));
        }
        assert_eq!(backend.total_calls(), 20);
    }

    #[test]
    fn fail_first_and_sequence() {
        let script: MockScript = serde_json::from_str(
            r#"{"rules":[{"match":"*","fail_first":1,"respond":{"mode":"sequence","payloads":[{"a":1},{"b":2}]}}]}"#,
        )
        .unwrap();
        let cell = DemographicCell::new(Ideology::Liberal, Gender::Man, Race::White);
        let key = PermutationKey::new("q", cell, PromptVariant::si());
        let m = MockBackend::new(script, Truth::new());
        assert!(matches!(m.complete(&request(&key, 0)), Err(BackendError::Transient(_))));
        assert_eq!(m.complete(&request(&key, 0)).unwrap(), r#"{"a":1}"#);
        assert_eq!(m.complete(&request(&key, 0)).unwrap(), r#"{"b":2}"#);
        assert_eq!(m.complete(&request(&key, 0)).unwrap(), r#"{"b":2}"#);
        assert_eq!(m.call_counts()[&(key.canonical(), 0)], 4);
    }
}
