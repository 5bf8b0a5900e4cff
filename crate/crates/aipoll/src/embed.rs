//! Question-text embeddings. Full vectors are cached by text hash; the
//! regression sees them truncated to the leading dimensions and renormalized.

use std::collections::BTreeMap;
use std::path::Path;
use std::thread;
use std::time::Duration;

use aipoll_core::features::{EmbeddingRecord, EMBED_DIMS};
use aipoll_core::Question;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{EmbeddingConfig, EmbeddingKind};
use crate::error::{format_err, Error, IoContext, Result};
use crate::gateway::http::{agent, api_key, post_json};
use crate::gateway::BackendError;
use crate::io::{read_log, sha256_hex, Appender};

pub trait Embedder {
    /// Identifies the model so cached vectors from another one are not reused.
    fn descriptor(&self) -> String;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

/// Offline embedder: signed feature hashing of word unigrams and bigrams.
/// Each feature lands in several slots so short texts still populate the
/// leading dimensions.
pub struct HashingEmbedder {
    pub dims: usize,
}

const HASH_PROBES: usize = 4;

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

impl HashingEmbedder {
    pub fn vector(&self, text: &str) -> Vec<f64> {
        let words = tokens(text);
        let bigrams = words.windows(2).map(|w| format!("{} {}", w[0], w[1]));
        let mut v = vec![0.0; self.dims];
        for feature in words.iter().cloned().chain(bigrams) {
            let digest = Sha256::digest(feature.as_bytes());
            for probe in digest.chunks_exact(8).take(HASH_PROBES) {
                let h = u64::from_le_bytes(probe.try_into().expect("8-byte chunk"));
                let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
                v[(h % self.dims as u64) as usize] += sign;
            }
        }
        v
    }
}

impl Embedder for HashingEmbedder {
    fn descriptor(&self) -> String {
        format!("hashing-{}", self.dims)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Precomputed vectors keyed by exact question text.
pub struct FixtureEmbedder {
    vectors: BTreeMap<String, Vec<f64>>,
    digest: String,
}

impl FixtureEmbedder {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        let vectors = serde_json::from_slice(&bytes).map_err(|e| format_err(path, e))?;
        Ok(FixtureEmbedder { vectors, digest: sha256_hex(&bytes)[..16].to_string() })
    }
}

impl Embedder for FixtureEmbedder {
    fn descriptor(&self) -> String {
        format!("fixture-{}", self.digest)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| self.vectors.get(*t).cloned().ok_or_else(|| Error::Embedding(format!("no fixture vector for {t:?}"))))
            .collect()
    }
}

/// OpenAI-compatible `/embeddings` endpoint.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    key: String,
}

const HTTP_BATCH: usize = 64;
const HTTP_ATTEMPTS: u32 = 4;

impl HttpEmbedder {
    pub fn new(cfg: &EmbeddingConfig) -> Result<Self> {
        Ok(HttpEmbedder {
            agent: agent(cfg.timeout_secs),
            endpoint: cfg.endpoint.clone(),
            model: cfg.model_name.clone(),
            key: api_key(&cfg.api_key_env)?,
        })
    }

    fn batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let body = json!({"model": self.model, "input": texts});
        let mut last = String::new();
        for attempt in 0..HTTP_ATTEMPTS {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(500 << attempt));
            }
            match post_json(&self.agent, &self.endpoint, &self.key, &body) {
                Ok(reply) => return parse_embedding_reply(&reply, texts.len()),
                Err(BackendError::Fatal(e)) => return Err(Error::Embedding(e)),
                Err(BackendError::Transient(e)) => last = e,
            }
        }
        Err(Error::Embedding(format!("gave up after {HTTP_ATTEMPTS} attempts: {last}")))
    }
}

fn parse_embedding_reply(reply: &Value, expected: usize) -> Result<Vec<Vec<f64>>> {
    let bad = |what: &str| Error::Embedding(format!("malformed reply: {what}"));
    let data = reply.get("data").and_then(Value::as_array).ok_or_else(|| bad("no data array"))?;
    if data.len() != expected {
        return Err(bad("wrong number of vectors"));
    }
    let mut out = vec![Vec::new(); expected];
    for (pos, item) in data.iter().enumerate() {
        let i = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let v = item.get("embedding").and_then(Value::as_array).ok_or_else(|| bad("no embedding"))?;
        let slot = out.get_mut(i).ok_or_else(|| bad("index out of range"))?;
        *slot = v.iter().map(|x| x.as_f64().ok_or_else(|| bad("non-numeric entry"))).collect::<Result<_>>()?;
    }
    Ok(out)
}

impl Embedder for HttpEmbedder {
    fn descriptor(&self) -> String {
        format!("http-{}", self.model)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(HTTP_BATCH) {
            out.extend(self.batch(chunk)?);
        }
        Ok(out)
    }
}

pub fn embedder(cfg: &EmbeddingConfig) -> Result<Box<dyn Embedder>> {
    Ok(match cfg.kind {
        EmbeddingKind::Hashing => Box::new(HashingEmbedder { dims: cfg.hashing_dims }),
        EmbeddingKind::Fixture => {
            let path = cfg.fixture.as_deref().ok_or_else(|| Error::Config("embedding.fixture is not set".into()))?;
            Box::new(FixtureEmbedder::load(path)?)
        }
        EmbeddingKind::Http => Box::new(HttpEmbedder::new(cfg)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CachedVector {
    model: String,
    text_sha256: String,
    vector: Vec<f64>,
}

/// Embeds texts, consulting and extending the cache at `cache_path`.
pub fn embed_cached(embedder: &dyn Embedder, texts: &[&str], cache_path: &Path) -> Result<Vec<Vec<f64>>> {
    let model = embedder.descriptor();
    let mut known: BTreeMap<String, Vec<f64>> = read_log::<CachedVector>(cache_path)?
        .into_iter()
        .filter(|c| c.model == model)
        .map(|c| (c.text_sha256, c.vector))
        .collect();
    let hashes: Vec<String> = texts.iter().map(|t| sha256_hex(t.as_bytes())).collect();
    let mut queued = std::collections::BTreeSet::new();
    let missing: Vec<usize> =
        (0..texts.len()).filter(|&i| !known.contains_key(&hashes[i]) && queued.insert(&hashes[i])).collect();
    if !missing.is_empty() {
        let batch: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
        let vectors = embedder.embed(&batch)?;
        let mut log = Appender::open(cache_path)?;
        for (&i, vector) in missing.iter().zip(vectors) {
            log.append(&CachedVector { model: model.clone(), text_sha256: hashes[i].clone(), vector: vector.clone() })?;
            known.insert(hashes[i].clone(), vector);
        }
    }
    Ok(hashes.iter().map(|h| known[h].clone()).collect())
}

/// Truncated, renormalized embedding per question id.
pub fn embed_questions(
    embedder: &dyn Embedder,
    questions: &[Question],
    cache_path: &Path,
) -> Result<BTreeMap<String, EmbeddingRecord>> {
    let texts: Vec<&str> = questions.iter().map(|q| q.text.as_str()).collect();
    let vectors = embed_cached(embedder, &texts, cache_path)?;
    questions
        .iter()
        .zip(vectors)
        .map(|(q, v)| {
            let record = EmbeddingRecord::from_full(q.id.clone(), &v)
                .map_err(|e| Error::Embedding(format!("{}: {e}", q.id)))?;
            Ok((q.id.clone(), record))
        })
        .collect()
}

/// Embeds one free-standing text the same way.
pub fn embed_text(embedder: &dyn Embedder, id: &str, text: &str, cache_path: &Path) -> Result<EmbeddingRecord> {
    let v = embed_cached(embedder, &[text], cache_path)?.remove(0);
    EmbeddingRecord::from_full(id, &v).map_err(|e| Error::Embedding(format!("{id}: {e}")))
}

pub fn check_dims(embedder: &dyn Embedder, cfg: &EmbeddingConfig) -> Result<()> {
    if cfg.kind == EmbeddingKind::Hashing && cfg.hashing_dims < EMBED_DIMS {
        return Err(Error::Config(format!(
            "embedding.hashing_dims must be at least {EMBED_DIMS} for {}",
            embedder.descriptor()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use aipoll_core::Cardinality;

    #[test]
    fn hashing_is_stable_and_text_sensitive() {
        let e = HashingEmbedder { dims: 256 };
        let a = e.vector("Increase funding for public libraries");
        assert_eq!(a, e.vector("increase funding, for public libraries!"));
        assert_ne!(a, e.vector("Decrease funding for public libraries"));
        assert!(a[..EMBED_DIMS].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn cache_avoids_recomputation() {
        struct Counting(std::cell::Cell<usize>);
        impl Embedder for Counting {
            fn descriptor(&self) -> String {
                "counting".into()
            }
            fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
                self.0.set(self.0.get() + texts.len());
                Ok(texts.iter().map(|t| vec![t.len() as f64; EMBED_DIMS]).collect())
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let e = Counting(std::cell::Cell::new(0));
        let first = embed_cached(&e, &["a", "bb", "a"], &path).unwrap();
        assert_eq!(e.0.get(), 2);
        let second = embed_cached(&e, &["bb", "a", "ccc"], &path).unwrap();
        assert_eq!(e.0.get(), 3);
        assert_eq!(first[1], second[0]);

        let q = Question::new("q1", "bb", Cardinality::new(2).unwrap(), "y", "n", None).unwrap();
        let recs = embed_questions(&e, &[q], &path).unwrap();
        let norm: f64 = recs["q1"].vector.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(e.0.get(), 3);
    }

    #[test]
    fn http_reply_parsing() {
        let reply = json!({"data": [{"index": 1, "embedding": [3.0]}, {"index": 0, "embedding": [1.0, 2.0]}]});
        assert_eq!(parse_embedding_reply(&reply, 2).unwrap(), vec![vec![1.0, 2.0], vec![3.0]]);
        assert!(parse_embedding_reply(&reply, 3).is_err());
    }
}
